//! Space–time reconstruction `u^ts = K_h * u_h^t` and the auxiliary family
//! `u~^{ts,beta}` built with the directional kernels.
//!
//! Filtering is linear and acts in space only, so every node value `u_h^n`
//! and node derivative `w^n` is filtered once and the Hermite weights are
//! applied afterwards. Time derivatives commute with the filter.

use crate::bspline::{directional_kernel, TensorKernel};
use crate::error::{Error, Result};
use crate::filter::{FilteredField, SiacFilter};
use crate::mesh::{CartesianMesh, DgField};
use crate::temporal::{hermite_weights, TemporalReconstruction};

/// Filters applied to every time node.
#[derive(Debug, Clone)]
pub struct ReconstructionFilters {
    main: SiacFilter,
    aux: Vec<SiacFilter>,
}

/// Filtered data of one time node: `(K * u_h^n, K * w^n)`.
#[derive(Debug, Clone)]
pub struct FilteredPair {
    pub u: FilteredField,
    pub w: FilteredField,
}

/// All filtered data attached to one node.
#[derive(Debug, Clone)]
pub struct FilteredNode {
    pub main: FilteredPair,
    /// One pair per direction; empty when auxiliary reconstructions are off.
    pub aux: Vec<FilteredPair>,
    /// Unfiltered node data on the half-cell grid.
    pub dg: FilteredPair,
}

impl ReconstructionFilters {
    /// Main kernel of order `q + 1`; with `with_aux`, one directional kernel per axis.
    pub fn new(mesh: CartesianMesh, q: usize, with_aux: bool) -> Result<Self> {
        let main = SiacFilter::new(mesh, q, &TensorKernel::main(q, mesh.h(), mesh.dim())?)?;
        let aux = if with_aux {
            (0..mesh.dim())
                .map(|beta| SiacFilter::new(mesh, q, &directional_kernel(q, mesh.h(), beta, mesh.dim())?))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self { main, aux })
    }

    pub fn has_aux(&self) -> bool {
        !self.aux.is_empty()
    }

    pub fn filter_node(&self, u: &DgField, w: &DgField) -> Result<FilteredNode> {
        Ok(FilteredNode {
            main: FilteredPair {
                u: self.main.apply(u)?,
                w: self.main.apply(w)?,
            },
            aux: self
                .aux
                .iter()
                .map(|f| {
                    Ok(FilteredPair {
                        u: f.apply(u)?,
                        w: f.apply(w)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            dg: FilteredPair {
                u: FilteredField::from_dg(u),
                w: FilteredField::from_dg(w),
            },
        })
    }
}

/// `sum_j a[j] U_j + b[j] W_j` over filtered pairs.
pub fn combine_pairs<'a>(pairs: impl Iterator<Item = &'a FilteredPair>, a: &[f64], b: &[f64]) -> FilteredField {
    let mut out: Option<FilteredField> = None;
    for (j, p) in pairs.enumerate() {
        let acc = out.get_or_insert_with(|| p.u.zeros_like());
        acc.axpy(a[j], &p.u);
        acc.axpy(b[j], &p.w);
    }
    out.expect("non-empty stencil")
}

/// Which derivatives [`SpaceTimeReconstruction::eval`] should return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DerivativeRequest {
    pub time: bool,
    /// 0, 1 or 2.
    pub space_order: usize,
}

/// Values at one space–time point; gradients `[c * d + a]`, Hessians `[(c * d + a) * d + b]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpaceTimeSample {
    pub u: Vec<f64>,
    pub ut: Option<Vec<f64>>,
    pub grad: Option<Vec<f64>>,
    pub hess: Option<Vec<f64>>,
}

/// In-memory space–time reconstruction over a whole trajectory.
#[derive(Debug, Clone)]
pub struct SpaceTimeReconstruction {
    times: Vec<f64>,
    p: usize,
    dim: usize,
    m: usize,
    nodes: Vec<FilteredNode>,
}

impl SpaceTimeReconstruction {
    pub fn new(temporal: &TemporalReconstruction, values: &[DgField], derivatives: &[DgField], with_aux: bool) -> Result<Self> {
        let first = values
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
        let filters = ReconstructionFilters::new(*first.mesh(), first.basis().degree(), with_aux)?;
        let nodes = values
            .iter()
            .zip(derivatives)
            .map(|(u, w)| filters.filter_node(u, w))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            times: temporal.times().to_vec(),
            p: temporal.history_depth(),
            dim: first.mesh().dim(),
            m: first.n_components(),
            nodes,
        })
    }

    /// Reconstruct from a stored trajectory with history depth `p`.
    pub fn from_record(record: &crate::time::TrajectoryRecord, p: usize, with_aux: bool) -> Result<Self> {
        let temporal = crate::temporal::build_temporal(record, p)?;
        Self::new(&temporal, &record.values, &record.derivatives, with_aux)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes(&self) -> &[FilteredNode] {
        &self.nodes
    }

    fn stencil_weights(&self, t: f64) -> Result<(std::ops::Range<usize>, crate::temporal::HermiteWeights)> {
        let n = self.times.len();
        let (t0, t1) = (self.times[0], self.times[n - 1]);
        if !(t >= t0 && t <= t1) {
            return Err(Error::InvalidArgument(format!("time {t} outside [{t0}, {t1}]")));
        }
        let slab = self.times.partition_point(|&s| s <= t).saturating_sub(1).min(n - 2);
        let r = crate::temporal::slab_stencil(slab, n, self.p)?;
        let w = hermite_weights(&self.times[r.clone()], t)?;
        Ok((r, w))
    }

    /// `u^ts(t)` and `d_t u^ts(t)` as filtered fields.
    pub fn fields_at(&self, t: f64) -> Result<(FilteredField, FilteredField)> {
        let (r, w) = self.stencil_weights(t)?;
        let pairs = || self.nodes[r.clone()].iter().map(|n| &n.main);
        Ok((
            combine_pairs(pairs(), &w.value, &w.slope),
            combine_pairs(pairs(), &w.d_value, &w.d_slope),
        ))
    }

    /// `u~^{ts,beta}(t)` and its time derivative.
    pub fn aux_fields_at(&self, beta: usize, t: f64) -> Result<(FilteredField, FilteredField)> {
        if self.nodes[0].aux.len() <= beta {
            return Err(Error::InvalidArgument(format!("no auxiliary reconstruction in direction {beta}")));
        }
        let (r, w) = self.stencil_weights(t)?;
        let pairs = || self.nodes[r.clone()].iter().map(|n| &n.aux[beta]);
        Ok((
            combine_pairs(pairs(), &w.value, &w.slope),
            combine_pairs(pairs(), &w.d_value, &w.d_slope),
        ))
    }

    /// Point evaluation of `u^ts` (`beta = None`) or `u~^{ts,beta}`.
    pub fn eval_family(&self, beta: Option<usize>, t: f64, x: &[f64], req: DerivativeRequest) -> Result<SpaceTimeSample> {
        if req.space_order > 2 {
            return Err(Error::Unsupported(format!(
                "spatial derivatives of order {} are not provided",
                req.space_order
            )));
        }
        if let Some(b) = beta {
            if self.nodes[0].aux.len() <= b {
                return Err(Error::InvalidArgument(format!("no auxiliary reconstruction in direction {b}")));
            }
        }
        let (r, w) = self.stencil_weights(t)?;
        let d = self.dim;
        let m = self.m;
        let mut orders: Vec<[usize; 2]> = vec![[0, 0]];
        if req.space_order >= 1 {
            orders.extend((0..d).map(|a| unit(a, 1)));
        }
        if req.space_order >= 2 {
            for a in 0..d {
                for b in 0..d {
                    let mut o = unit(a, 1);
                    o[b] += 1;
                    orders.push(o);
                }
            }
        }
        let mut vals = vec![vec![0.0; m]; orders.len()];
        let mut dts = vec![0.0; m];
        for (k, j) in r.enumerate() {
            let pair = match beta {
                None => &self.nodes[j].main,
                Some(b) => &self.nodes[j].aux[b],
            };
            for (oi, o) in orders.iter().enumerate() {
                let u = pair.u.evaluate(x, *o)?;
                let wv = pair.w.evaluate(x, *o)?;
                for c in 0..m {
                    vals[oi][c] += w.value[k] * u[c] + w.slope[k] * wv[c];
                    if oi == 0 {
                        dts[c] += w.d_value[k] * u[c] + w.d_slope[k] * wv[c];
                    }
                }
            }
        }
        let mut out = SpaceTimeSample {
            u: vals[0].clone(),
            ut: req.time.then_some(dts),
            ..Default::default()
        };
        if req.space_order >= 1 {
            let mut g = vec![0.0; m * d];
            for a in 0..d {
                for c in 0..m {
                    g[c * d + a] = vals[1 + a][c];
                }
            }
            out.grad = Some(g);
        }
        if req.space_order >= 2 {
            let mut hs = vec![0.0; m * d * d];
            for a in 0..d {
                for b in 0..d {
                    for c in 0..m {
                        hs[(c * d + a) * d + b] = vals[1 + d + a * d + b][c];
                    }
                }
            }
            out.hess = Some(hs);
        }
        Ok(out)
    }

    pub fn eval(&self, t: f64, x: &[f64], req: DerivativeRequest) -> Result<SpaceTimeSample> {
        self.eval_family(None, t, x, req)
    }
}

fn unit(a: usize, k: usize) -> [usize; 2] {
    let mut o = [0, 0];
    o[a] = k;
    o
}

/// Evaluate the space–time reconstruction at `(t, x)`.
pub fn spacetime_eval(
    recon: &SpaceTimeReconstruction,
    t: f64,
    x: &[f64],
    req: DerivativeRequest,
) -> Result<SpaceTimeSample> {
    recon.eval(t, x, req)
}

/// Space–time reconstruction with the auxiliary family enabled.
pub fn auxiliary_reconstruction(
    temporal: &TemporalReconstruction,
    values: &[DgField],
    derivatives: &[DgField],
) -> Result<SpaceTimeReconstruction> {
    SpaceTimeReconstruction::new(temporal, values, derivatives, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{l2_project, TensorBasis};
    use crate::problems::ViscousBurgers;
    use crate::temporal::build_temporal;
    use crate::time::{run_trajectory, TrajectoryConfig};
    use rand::{Rng, SeedableRng};

    fn burgers_recon(p: usize) -> (crate::time::TrajectoryRecord, SpaceTimeReconstruction) {
        let problem = ViscousBurgers::new(1e-2);
        let mut cfg = TrajectoryConfig::new(1 + p, 4);
        cfg.t_final = Some(0.01);
        let rec = run_trajectory(&problem, &cfg).unwrap();
        let st = SpaceTimeReconstruction::from_record(&rec, p, true).unwrap();
        (rec, st)
    }

    #[test]
    fn constant_trajectory_has_zero_time_derivative() {
        let mesh = CartesianMesh::new(2, 4).unwrap();
        let basis = TensorBasis::new(2, 1);
        let u = l2_project(mesh, basis, 1, 3, |x, o| o[0] = (x[0] * 3.0).sin()).unwrap();
        let w = DgField::zeros(mesh, basis, 1);
        let times = vec![0.0, 0.1, 0.2, 0.3];
        let vals = vec![u.clone(); 4];
        let ders = vec![w; 4];
        let temporal = TemporalReconstruction::new(times, vals.clone(), ders.clone(), 1).unwrap();
        let st = SpaceTimeReconstruction::new(&temporal, &vals, &ders, false).unwrap();
        let s = st
            .eval(
                0.17,
                &[0.3, 0.4],
                DerivativeRequest {
                    time: true,
                    space_order: 0,
                },
            )
            .unwrap();
        assert!(s.ut.unwrap()[0].abs() < 1e-13);
    }

    #[test]
    fn time_derivative_commutes_with_filter() {
        let (rec, st) = burgers_recon(1);
        let temporal = build_temporal(&rec, 1).unwrap();
        let t = 0.4 * rec.times[rec.times.len() - 1];
        let (_, dt_dg) = temporal.eval(t).unwrap();
        let filtered_dt = crate::filter::siac_convolve(&dt_dg, &TensorKernel::main(2, dt_dg.mesh().h(), 2).unwrap()).unwrap();
        let (_, ft) = st.fields_at(t).unwrap();
        for (a, b) in ft.coeffs().iter().zip(filtered_dt.coeffs()) {
            assert!((a - b).abs() <= 1e-11 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn point_evaluation_matches_quadrature_of_convolution() {
        // oracle: tensor Gauss quadrature of K_h(x - y) u_h^t(t, y) over the kernel support
        let (rec, st) = burgers_recon(0);
        let temporal = build_temporal(&rec, 0).unwrap();
        let mesh = *rec.values[0].mesh();
        let h = mesh.h();
        let kern = TensorKernel::main(1, h, 2).unwrap();
        let half = kern.factors[0].half_width();
        let rule = crate::poly::GaussRule::new(8);
        let mut rng = rand::rngs::StdRng::seed_from_u64(21);
        let tf = *rec.times.last().unwrap();
        for _ in 0..20 {
            let t = tf * rng.gen::<f64>();
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            let (ut, _) = temporal.eval(t).unwrap();
            // split each axis at cell faces and kernel breakpoints (both on the h grid for q = 1)
            let cuts = |c: f64| {
                let lo = c - half;
                let mut v = vec![lo];
                let first = (lo / h).ceil();
                let mut k = first;
                while k * h < c + half {
                    v.push(k * h);
                    k += 1.0;
                }
                for j in -2..=2 {
                    let b = c + j as f64 * h;
                    if b > lo && b < c + half {
                        v.push(b);
                    }
                }
                v.push(c + half);
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                v.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
                v
            };
            let (cx, cy) = (cuts(x[0]), cuts(x[1]));
            let mut acc = 0.0;
            for wx in cx.windows(2) {
                for wy in cy.windows(2) {
                    for (&gx, &ax) in rule.nodes.iter().zip(&rule.weights) {
                        for (&gy, &ay) in rule.nodes.iter().zip(&rule.weights) {
                            let y = [wx[0] + (wx[1] - wx[0]) * gx, wy[0] + (wy[1] - wy[0]) * gy];
                            let wgt = ax * ay * (wx[1] - wx[0]) * (wy[1] - wy[0]);
                            let k = kern.eval(&[x[0] - y[0], x[1] - y[1]]);
                            let yw = [crate::mesh::wrap_unit(y[0]), crate::mesh::wrap_unit(y[1])];
                            let (cell, xi) = ut.locate(&yw, Some(crate::mesh::Side::Plus)).unwrap();
                            acc += wgt * k * ut.evaluate_in_cell(cell, &xi)[0];
                        }
                    }
                }
            }
            let got = st.eval(t, &x, DerivativeRequest::default()).unwrap().u[0];
            assert!((got - acc).abs() < 1e-10, "{got} vs {acc}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let (_, st) = burgers_recon(1);
        let mut rng = rand::rngs::StdRng::seed_from_u64(4);
        let tf = *st.times().last().unwrap();
        let d = 1e-5;
        let req = DerivativeRequest {
            time: true,
            space_order: 2,
        };
        let mut checked = 0;
        while checked < 20 {
            let t = tf * (0.05 + 0.9 * rng.gen::<f64>());
            let x = [rng.gen::<f64>(), rng.gen::<f64>()];
            // the q = 2 filtered pieces live on half cells of width h/2 = 1/8
            if x.iter().any(|v| !(0.01..0.99).contains(&(v * 8.0).fract())) {
                continue;
            }
            checked += 1;
            let s = st.eval(t, &x, req).unwrap();
            let v = |tt: f64, p: [f64; 2]| st.eval(tt, &p, DerivativeRequest::default()).unwrap().u[0];
            let g = s.grad.unwrap();
            let fd = (v(t, [x[0] + d, x[1]]) - v(t, [x[0] - d, x[1]])) / (2.0 * d);
            assert!((fd - g[0]).abs() <= 1e-7 * (1.0 + g[0].abs()));
            let fd = (v(t, [x[0], x[1] + d]) - v(t, [x[0], x[1] - d])) / (2.0 * d);
            assert!((fd - g[1]).abs() <= 1e-7 * (1.0 + g[1].abs()));
            let hs = s.hess.unwrap();
            let gx = |p: [f64; 2]| {
                st.eval(t, &p, DerivativeRequest { time: false, space_order: 1 }).unwrap().grad.unwrap()[0]
            };
            let fd = (gx([x[0] + d, x[1]]) - gx([x[0] - d, x[1]])) / (2.0 * d);
            assert!((fd - hs[0]).abs() <= 1e-6 * (1.0 + hs[0].abs()));
            assert!((hs[1] - hs[2]).abs() <= 1e-10 * (1.0 + hs[1].abs()));
            let dt = 1e-7;
            let fd = (v(t + dt, x) - v(t - dt, x)) / (2.0 * dt);
            let ut = s.ut.unwrap()[0];
            assert!((fd - ut).abs() <= 1e-6 * (1.0 + ut.abs()));
        }
    }

    #[test]
    fn auxiliary_family_is_smoother_along_its_direction() {
        let (_, st) = burgers_recon(0);
        let t = 0.5 * st.times().last().unwrap();
        for beta in 0..2 {
            let (aux, _) = st.aux_fields_at(beta, t).unwrap();
            assert_eq!(aux.smoothness(beta), Some(1));
            assert_eq!(aux.smoothness(1 - beta), Some(0));
            // derivative of order q = 1 along beta is continuous at its breakpoints
            let y = 0.37;
            for &b in &aux.breakpoints(beta) {
                let mut lo = [y, y];
                let mut hi = [y, y];
                lo[beta] = b - 1e-9;
                hi[beta] = b + 1e-9;
                let mut o = [0, 0];
                o[beta] = 1;
                let a = aux.evaluate(&lo, o).unwrap()[0];
                let c = aux.evaluate(&hi, o).unwrap()[0];
                assert!((a - c).abs() < 1e-6);
            }
        }
        let (main, _) = st.fields_at(t).unwrap();
        let (aux0, _) = st.aux_fields_at(0, t).unwrap();
        assert!((main.integral()[0] - aux0.integral()[0]).abs() < 1e-12);
    }

    #[test]
    fn constants_survive_every_family() {
        let mesh = CartesianMesh::new(2, 4).unwrap();
        let basis = TensorBasis::new(2, 1);
        let u = l2_project(mesh, basis, 1, 3, |_, o| o[0] = 2.5).unwrap();
        let w = DgField::zeros(mesh, basis, 1);
        let temporal = TemporalReconstruction::new(vec![0.0, 1.0], vec![u.clone(), u.clone()], vec![w.clone(), w.clone()], 0).unwrap();
        let st = auxiliary_reconstruction(&temporal, &[u.clone(), u], &[w.clone(), w]).unwrap();
        for beta in [None, Some(0), Some(1)] {
            let s = st.eval_family(beta, 0.3, &[0.11, 0.77], DerivativeRequest::default()).unwrap();
            assert!((s.u[0] - 2.5).abs() < 1e-12);
        }
        assert!(matches!(
            st.eval(0.3, &[0.1, 0.2], DerivativeRequest { time: false, space_order: 3 }),
            Err(Error::Unsupported(_))
        ));
    }
}
