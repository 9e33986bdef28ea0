//! Residual of the space–time reconstruction and the norms entering the bounds.
//!
//! With `G^_a = sum_b A_ab(u^) d_b u^` and `G~_a = sum_b A_ab(u^) d_b u~^b`,
//! the residual `r = d_t u^ + sum_a d_a f_a(u^) - eps sum_a d_a G^_a - s`
//! splits as `r = r1 + eps r2` with
//! `r1 = d_t u^ + sum_a d_a f_a(u^) - eps sum_a d_a G~_a - s` and
//! `r2 = sum_a d_a (G~_a - G^_a)`. The manufactured source `s` is subtracted so
//! that the exact solution has zero residual.

use crate::error::{Error, Result};
use crate::mesh::CartesianMesh;
use crate::poly::GaussRule;
use crate::problems::{EstimatorKind, ExactGrid, ExactSample, ProblemDefinition};
use crate::reconstruction::{DerivativeRequest, FilteredNode, ReconstructionFilters, SpaceTimeReconstruction};
use crate::temporal::{hermite_weights, history_depth, HermiteWeights};
use crate::time::{run_trajectory_streaming, TrajectoryConfig, TrajectoryInfo};
use crate::filter::FilteredField;
use serde::{Deserialize, Serialize};

const D: usize = 2;
/// Largest system size handled by the pointwise evaluator.
const MAX_M: usize = 4;

/// Reconstruction data at one point (`d = 2`).
///
/// `grad[c * 2 + a]`, `hess[(c * 2 + a) * 2 + b]`; `aux_grad[beta]` and
/// `aux_hess[beta]` hold derivatives of `u~^{ts,beta}` in the same layout.
/// The split residual reads only `aux_grad[beta][c * 2 + beta]` and
/// `aux_hess[beta][(c * 2 + a) * 2 + beta]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointState {
    pub u: Vec<f64>,
    pub ut: Vec<f64>,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub aux_grad: [Vec<f64>; 2],
    pub aux_hess: [Vec<f64>; 2],
}

impl PointState {
    pub fn zeros(m: usize) -> Self {
        Self {
            u: vec![0.0; m],
            ut: vec![0.0; m],
            grad: vec![0.0; m * D],
            hess: vec![0.0; m * D * D],
            aux_grad: [vec![0.0; m * D], vec![0.0; m * D]],
            aux_hess: [vec![0.0; m * D * D], vec![0.0; m * D * D]],
        }
    }

    /// Exact solution in place of every reconstruction.
    pub fn from_exact(e: &ExactSample) -> Self {
        Self {
            u: e.u.clone(),
            ut: e.ut.clone(),
            grad: e.grad.clone(),
            hess: e.hess.clone(),
            aux_grad: [e.grad.clone(), e.grad.clone()],
            aux_hess: [e.hess.clone(), e.hess.clone()],
        }
    }
}

/// Pointwise residual algebra for one problem.
pub struct ResidualEvaluator<'p> {
    problem: &'p dyn ProblemDefinition,
    m: usize,
    eps: f64,
    /// `a[alpha * 2 + beta]`, row-major `m x m`.
    a: Vec<Vec<f64>>,
}

impl<'p> ResidualEvaluator<'p> {
    pub fn new(problem: &'p dyn ProblemDefinition) -> Result<Self> {
        if problem.dim() != D {
            return Err(Error::Unsupported(format!("residual evaluation needs d = 2, got {}", problem.dim())));
        }
        if problem.eps() > 0.0 && !problem.diffusion_is_constant() {
            return Err(Error::Unsupported(
                "residual splitting is implemented for state-independent diffusion".into(),
            ));
        }
        let m = problem.n_components();
        if m > MAX_M {
            return Err(Error::Unsupported(format!("at most {MAX_M} components, got {m}")));
        }
        let probe = problem.exact(0.0, &[0.0, 0.0]).u;
        let mut a = Vec::with_capacity(D * D);
        for alpha in 0..D {
            for beta in 0..D {
                let mut blk = vec![0.0; m * m];
                problem.diffusion(&probe, alpha, beta, &mut blk);
                a.push(blk);
            }
        }
        Ok(Self {
            problem,
            m,
            eps: problem.eps(),
            a,
        })
    }

    pub fn problem(&self) -> &dyn ProblemDefinition {
        self.problem
    }

    fn transport(&self, st: &PointState, jac: &mut [f64], out: &mut [f64]) {
        let m = self.m;
        out.copy_from_slice(&st.ut);
        for alpha in 0..D {
            self.problem.flux_jacobian(&st.u, alpha, jac);
            for c in 0..m {
                let mut acc = 0.0;
                for d in 0..m {
                    acc += jac[c * m + d] * st.grad[d * D + alpha];
                }
                out[c] += acc;
            }
        }
    }

    /// `sum_ab A_ab d_a d_b v` for the Hessian layout of `PointState`, where
    /// `hess(beta)` supplies the field differentiated in direction `beta`.
    fn diffusion_term<'s>(&self, hess: impl Fn(usize) -> &'s [f64], out: &mut [f64]) {
        let m = self.m;
        out.fill(0.0);
        for alpha in 0..D {
            for beta in 0..D {
                let blk = &self.a[alpha * D + beta];
                let h = hess(beta);
                for c in 0..m {
                    let mut acc = 0.0;
                    for d in 0..m {
                        acc += blk[c * m + d] * h[(d * D + alpha) * D + beta];
                    }
                    out[c] += acc;
                }
            }
        }
    }

    /// `r1(t, x)`; `source` is the manufactured source at the same point.
    pub fn r1(&self, st: &PointState, source: &[f64], out: &mut [f64]) {
        let m = self.m;
        let mut jac = [0.0; MAX_M * MAX_M];
        self.transport(st, &mut jac[..m * m], out);
        if self.eps > 0.0 {
            let mut diff = [0.0; MAX_M];
            self.diffusion_term(|b| &st.aux_hess[b], &mut diff[..m]);
            for c in 0..m {
                out[c] -= self.eps * diff[c];
            }
        }
        for c in 0..m {
            out[c] -= source[c];
        }
    }

    /// `r` computed directly from `u^`.
    pub fn full_residual(&self, st: &PointState, source: &[f64], out: &mut [f64]) {
        let m = self.m;
        let mut jac = [0.0; MAX_M * MAX_M];
        self.transport(st, &mut jac[..m * m], out);
        let mut diff = [0.0; MAX_M];
        self.diffusion_term(|_| &st.hess, &mut diff[..m]);
        for c in 0..m {
            out[c] -= self.eps * diff[c] + source[c];
        }
    }

    /// `G~ - G^`, layout `[c * 2 + alpha]`. Contains no `eps`.
    pub fn flux_gap(&self, st: &PointState, out: &mut [f64]) {
        let m = self.m;
        out.fill(0.0);
        for alpha in 0..D {
            for beta in 0..D {
                let blk = &self.a[alpha * D + beta];
                for c in 0..m {
                    let mut acc = 0.0;
                    for d in 0..m {
                        acc += blk[c * m + d] * (st.aux_grad[beta][d * D + beta] - st.grad[d * D + beta]);
                    }
                    out[c * D + alpha] += acc;
                }
            }
        }
    }

    /// `r2 = sum_a d_a (G~_a - G^_a)`.
    pub fn gap_divergence(&self, st: &PointState, out: &mut [f64]) {
        let m = self.m;
        let mut aux = [0.0; MAX_M];
        self.diffusion_term(|b| &st.aux_hess[b], &mut aux[..m]);
        let mut main = [0.0; MAX_M];
        self.diffusion_term(|_| &st.hess, &mut main[..m]);
        for c in 0..m {
            out[c] = aux[c] - main[c];
        }
    }
}

/// Gather a [`PointState`] from a space–time reconstruction with auxiliary family.
pub fn point_state(recon: &SpaceTimeReconstruction, t: f64, x: &[f64]) -> Result<PointState> {
    let full = DerivativeRequest {
        time: true,
        space_order: 2,
    };
    let main = recon.eval(t, x, full)?;
    let a0 = recon.eval_family(Some(0), t, x, full)?;
    let a1 = recon.eval_family(Some(1), t, x, full)?;
    Ok(PointState {
        u: main.u,
        ut: main.ut.unwrap_or_default(),
        grad: main.grad.unwrap_or_default(),
        hess: main.hess.unwrap_or_default(),
        aux_grad: [a0.grad.unwrap_or_default(), a1.grad.unwrap_or_default()],
        aux_hess: [a0.hess.unwrap_or_default(), a1.hess.unwrap_or_default()],
    })
}

/// `r1` at one point of a reconstruction.
pub fn eval_r1(recon: &SpaceTimeReconstruction, problem: &dyn ProblemDefinition, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let ev = ResidualEvaluator::new(problem)?;
    let st = point_state(recon, t, x)?;
    let m = problem.n_components();
    let mut s = vec![0.0; m];
    problem.source(t, x, &mut s);
    let mut out = vec![0.0; m];
    ev.r1(&st, &s, &mut out);
    Ok(out)
}

/// `G~ - G^` at one point of a reconstruction, layout `[c * 2 + alpha]`.
pub fn eval_flux_gap(recon: &SpaceTimeReconstruction, problem: &dyn ProblemDefinition, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let ev = ResidualEvaluator::new(problem)?;
    let st = point_state(recon, t, x)?;
    let mut out = vec![0.0; problem.n_components() * D];
    ev.flux_gap(&st, &mut out);
    Ok(out)
}

/// Space–time norms of a vector-valued function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeNorms {
    pub l1_l2: f64,
    pub l2_l2: f64,
    pub linf_l2: f64,
}

/// Norms of `f(t, x)` over `(times[0], times[last]) x T^2` with Gauss rules of
/// `time_points` per slab and `space_points` per axis between `breakpoints`.
pub fn spacetime_norms(
    times: &[f64],
    time_points: usize,
    breakpoints: &[f64],
    space_points: usize,
    mut f: impl FnMut(f64, &[f64]) -> Result<Vec<f64>>,
) -> Result<SpaceTimeNorms> {
    let tr = GaussRule::new(time_points);
    let sr = GaussRule::new(space_points);
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for w in breakpoints.windows(2) {
        for (&z, &wt) in sr.nodes.iter().zip(&sr.weights) {
            pts.push((w[0] + (w[1] - w[0]) * z, wt * (w[1] - w[0])));
        }
    }
    let l2_at = |t: f64, f: &mut dyn FnMut(f64, &[f64]) -> Result<Vec<f64>>| -> Result<f64> {
        let mut acc = 0.0;
        for &(y, wy) in &pts {
            for &(x, wx) in &pts {
                let v = f(t, &[x, y])?;
                let sq: f64 = v.iter().map(|a| a * a).sum();
                if !sq.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("norm integrand at t = {t}, x = ({x}, {y})"),
                        value: sq,
                    });
                }
                acc += wx * wy * sq;
            }
        }
        Ok(acc)
    };
    let mut out = SpaceTimeNorms {
        l1_l2: 0.0,
        l2_l2: 0.0,
        linf_l2: 0.0,
    };
    for w in times.windows(2) {
        let tau = w[1] - w[0];
        for (&z, &wt) in tr.nodes.iter().zip(&tr.weights) {
            let sq = l2_at(w[0] + tau * z, &mut f)?;
            out.l1_l2 += tau * wt * sq.sqrt();
            out.l2_l2 += tau * wt * sq;
            out.linf_l2 = out.linf_l2.max(sq.sqrt());
        }
        for t in [w[0] + 1e-12 * tau, w[1] - 1e-12 * tau] {
            out.linf_l2 = out.linf_l2.max(l2_at(t, &mut f)?.sqrt());
        }
    }
    out.l2_l2 = out.l2_l2.sqrt();
    Ok(out)
}

/// Quadrature settings of the residual pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PipelineOptions {
    /// Gauss points per axis per half-cell; default `2q + 3`.
    pub space_points: Option<usize>,
    /// Gauss points per time slab; default `l + 2` with `l = 2p + 3`.
    pub time_points: Option<usize>,
    /// History depth of the temporal reconstruction; default from `q`.
    pub history_depth: Option<usize>,
}

/// p-system specific norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PSystemNorms {
    /// `|| W''(tau^) r_tau ||_{L1(L2)}`
    pub r_tau_weighted_l1l2: f64,
    /// `|| r_v ||_{L1(L2)}`, velocity rows of `r1`
    pub r_v_l1l2: f64,
    /// Velocity rows of `E_r2`.
    pub e_r2_velocity: Option<f64>,
    /// `|| W(tau_0 | tau^(0)) ||_{L1}`
    pub init_relative_entropy_l1: f64,
    /// `|| v_0 - v^(0) ||_{L2}`
    pub init_velocity_l2: f64,
}

/// Contribution of one time slab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlabNorms {
    pub t0: f64,
    pub t1: f64,
    pub r1_l1l2: f64,
    pub err_l2l2_temporal_sq: f64,
    pub e_r2_sq: Option<f64>,
}

/// Norms of one run; diffusion-dependent entries are `None` when `eps = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub t_final: f64,
    /// `|| u_h^t - u ||_{L2(L2)}`
    pub err_l2l2_temporal: f64,
    /// `|| u^ts - u ||_{Linf(L2)}`
    pub err_linf_l2: f64,
    /// `|| r1 ||_{L1(L2)}`
    pub r1_l1l2: f64,
    /// `| u^ts - u |_{L2(H1)}` over the problem's H1 components
    pub err_l2h1: Option<f64>,
    /// `E_r2 = || G~ - G^ ||_{L2(L2)}`
    pub e_r2: Option<f64>,
    /// `|| u_h - u^ts ||_{Linf(L2)}` over the time nodes
    pub dg_minus_reconstruction_linf_l2: f64,
    pub err_linf_l2_components: Vec<f64>,
    /// `|| u_0 - u^ts(0) ||_{L2}`
    pub init_error_l2: f64,
    /// `sup |d_a u^|` per axis over all components
    pub grad_sup: [f64; 2],
    /// `sup |div v^|` (p-system)
    pub div_velocity_sup: Option<f64>,
    pub state_min: Vec<f64>,
    pub state_max: Vec<f64>,
    pub psystem: Option<PSystemNorms>,
    pub slabs: Vec<SlabNorms>,
    pub time_samples: usize,
}

/// Output of [`run_pipeline`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub report: NormReport,
    pub trajectory: TrajectoryInfo,
    pub history_depth: usize,
    pub space_points: usize,
    pub time_points: usize,
}

/// Grid samples of one filtered time node, in [`FilteredField::eval_grid`] layout.
struct NodeGrid {
    t: f64,
    /// value, `d_x`, `d_y` of `K * u_h^n`
    u: [Vec<f64>; 3],
    /// value, `d_x`, `d_y` of `K * w_h^n`
    w: [Vec<f64>; 3],
    /// re-expressed dG values
    dg_u: Vec<f64>,
    dg_w: Vec<f64>,
    /// per `beta`: `d_beta`, `d_x d_beta`, `d_y d_beta` of the auxiliary filtrates
    aux: Vec<([Vec<f64>; 3], [Vec<f64>; 3])>,
}

/// Auxiliary derivative requests per direction, matching [`NodeGrid::aux`].
const AUX_DERIVS: [[[usize; 2]; 3]; 2] = [[[1, 0], [2, 0], [1, 1]], [[0, 1], [1, 1], [0, 2]]];
const MAIN_DERIVS: [[usize; 2]; 3] = [[0, 0], [1, 0], [0, 1]];

fn grid3(f: &FilteredField, zeta: &[f64], derivs: &[[usize; 2]; 3]) -> [Vec<f64>; 3] {
    let mut v = f.eval_grid(zeta, derivs).into_iter();
    [v.next().unwrap(), v.next().unwrap(), v.next().unwrap()]
}

/// `out = sum_j (a_j x_j + b_j y_j)`
fn combine_into<'a>(out: &mut [f64], terms: impl Iterator<Item = (f64, &'a [f64], f64, &'a [f64])>) {
    out.fill(0.0);
    for (a, x, b, y) in terms {
        for ((o, xv), yv) in out.iter_mut().zip(x).zip(y) {
            *o += a * xv + b * yv;
        }
    }
}

/// Time-point fields assembled from a window of node grids.
struct SampleFields {
    u: [Vec<f64>; 3],
    ut: Vec<f64>,
    dg: Vec<f64>,
    aux: Vec<[Vec<f64>; 3]>,
}

impl SampleFields {
    fn new(len: usize, n_aux: usize) -> Self {
        Self {
            u: [vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            ut: vec![0.0; len],
            dg: vec![0.0; len],
            aux: (0..n_aux)
                .map(|_| [vec![0.0; len], vec![0.0; len], vec![0.0; len]])
                .collect(),
        }
    }

    fn assemble(&mut self, window: &[NodeGrid], hw: &HermiteWeights) {
        fn terms<'a>(
            window: &'a [NodeGrid],
            k: usize,
            a: &'a [f64],
            b: &'a [f64],
        ) -> impl Iterator<Item = (f64, &'a [f64], f64, &'a [f64])> {
            window
                .iter()
                .enumerate()
                .map(move |(j, n)| (a[j], &n.u[k][..], b[j], &n.w[k][..]))
        }
        for k in 0..3 {
            combine_into(&mut self.u[k], terms(window, k, &hw.value, &hw.slope));
        }
        combine_into(&mut self.ut, terms(window, 0, &hw.d_value, &hw.d_slope));
        combine_into(
            &mut self.dg,
            window
                .iter()
                .enumerate()
                .map(|(j, n)| (hw.value[j], &n.dg_u[..], hw.slope[j], &n.dg_w[..])),
        );
        for (beta, a) in self.aux.iter_mut().enumerate() {
            for k in 0..3 {
                combine_into(
                    &mut a[k],
                    window
                        .iter()
                        .enumerate()
                        .map(|(j, n)| (hw.value[j], &n.aux[beta].0[k][..], hw.slope[j], &n.aux[beta].1[k][..])),
                );
            }
        }
    }
}

struct Accumulator<'p> {
    problem: &'p dyn ProblemDefinition,
    ev: ResidualEvaluator<'p>,
    m: usize,
    eps: f64,
    psystem: bool,
    h1: Vec<usize>,
    zeta: Vec<f64>,
    /// point weights on the global grid along one axis
    axis_w: Vec<f64>,
    xs: Vec<f64>,
    exact: ExactGrid,
    fields: SampleFields,
    // running totals
    e_ht_sq: f64,
    e_ts_linf: f64,
    e_ts_linf_comp: Vec<f64>,
    r1_l1: f64,
    h1_sq: f64,
    gap_sq: f64,
    gap_v_sq: f64,
    r_tau_w_l1: f64,
    r_v_l1: f64,
    dg_gap_linf: f64,
    init_sq: Vec<f64>,
    init_entropy: f64,
    grad_sup: [f64; 2],
    div_sup: f64,
    state_min: Vec<f64>,
    state_max: Vec<f64>,
    slabs: Vec<SlabNorms>,
    samples: usize,
}

struct SampleOut {
    e_ht_sq: f64,
    r1_sq: f64,
    r_tau_w_sq: f64,
    r_v_sq: f64,
    gap_sq: f64,
    gap_v_sq: f64,
    h1_sq: f64,
}

impl<'p> Accumulator<'p> {
    fn new(problem: &'p dyn ProblemDefinition, mesh: CartesianMesh, space_points: usize) -> Result<Self> {
        let m = problem.n_components();
        let rule = GaussRule::new(space_points);
        let hs = mesh.h() / 2.0;
        let n_sub = 2 * mesh.n();
        let xs: Vec<f64> = (0..n_sub)
            .flat_map(|j| rule.nodes.iter().map(move |z| (j as f64 + z) * hs))
            .collect();
        let axis_w: Vec<f64> = (0..n_sub).flat_map(|_| rule.weights.iter().map(|w| w * hs)).collect();
        let len = xs.len() * xs.len() * m;
        let n_aux = if problem.eps() > 0.0 { D } else { 0 };
        Ok(Self {
            problem,
            ev: ResidualEvaluator::new(problem)?,
            m,
            eps: problem.eps(),
            psystem: problem.estimator() == EstimatorKind::PSystem,
            h1: problem.h1_components(),
            zeta: rule.nodes.clone(),
            axis_w,
            xs,
            exact: ExactGrid::default(),
            fields: SampleFields::new(len, n_aux),
            e_ht_sq: 0.0,
            e_ts_linf: 0.0,
            e_ts_linf_comp: vec![0.0; m],
            r1_l1: 0.0,
            h1_sq: 0.0,
            gap_sq: 0.0,
            gap_v_sq: 0.0,
            r_tau_w_l1: 0.0,
            r_v_l1: 0.0,
            dg_gap_linf: 0.0,
            init_sq: vec![0.0; m],
            init_entropy: 0.0,
            grad_sup: [0.0; 2],
            div_sup: 0.0,
            state_min: vec![f64::INFINITY; m],
            state_max: vec![f64::NEG_INFINITY; m],
            slabs: Vec::new(),
            samples: 0,
        })
    }

    fn n_axis(&self) -> usize {
        self.xs.len()
    }

    /// Sample a filtered node on the grid and record the errors at `t_n`, where `u^ts = K * u_h^n`.
    fn node(&mut self, index: usize, t: f64, node: &FilteredNode) -> Result<NodeGrid> {
        let z = &self.zeta;
        let grid = NodeGrid {
            t,
            u: grid3(&node.main.u, z, &MAIN_DERIVS),
            w: grid3(&node.main.w, z, &MAIN_DERIVS),
            dg_u: node.dg.u.eval_grid(z, &[[0, 0]]).pop().unwrap(),
            dg_w: node.dg.w.eval_grid(z, &[[0, 0]]).pop().unwrap(),
            aux: node
                .aux
                .iter()
                .zip(&AUX_DERIVS)
                .map(|(pair, dv)| (grid3(&pair.u, z, dv), grid3(&pair.w, z, dv)))
                .collect(),
        };
        let m = self.m;
        let nx = self.n_axis();
        let (f, dg) = (&grid.u[0], &grid.dg_u);
        self.problem.exact_grid(t, &self.xs, &self.xs, false, false, &mut self.exact);
        let mut e_comp = vec![0.0; m];
        let mut dgd = 0.0;
        let mut entropy = 0.0;
        let pe = self.problem.pressure_entropy();
        for py in 0..nx {
            for px in 0..nx {
                let w = self.axis_w[px] * self.axis_w[py];
                let p = px + nx * py;
                for c in 0..m {
                    let e = self.exact.u[p * m + c] - f[p * m + c];
                    e_comp[c] += w * e * e;
                    let g = dg[p * m + c] - f[p * m + c];
                    dgd += w * g * g;
                }
                if index == 0 {
                    if let Some(pe) = &pe {
                        entropy += w * pe.relative(self.exact.u[p * m], f[p * m]);
                    }
                }
            }
        }
        let total: f64 = e_comp.iter().sum();
        check_finite(total, "reconstruction error at a time node", t)?;
        self.e_ts_linf = self.e_ts_linf.max(total.sqrt());
        for c in 0..m {
            self.e_ts_linf_comp[c] = self.e_ts_linf_comp[c].max(e_comp[c].sqrt());
        }
        self.dg_gap_linf = self.dg_gap_linf.max(dgd.sqrt());
        if index == 0 {
            self.init_sq = e_comp;
            self.init_entropy = entropy;
        }
        Ok(grid)
    }

    /// One time quadrature point; `self.fields` holds the assembled fields.
    fn sample(&mut self, t: f64) -> Result<SampleOut> {
        let m = self.m;
        let nx = self.n_axis();
        let want_source = self.problem.has_source();
        self.problem
            .exact_grid(t, &self.xs, &self.xs, true, want_source, &mut self.exact);
        let fl = &self.fields;
        let with_aux = !fl.aux.is_empty();
        let zero_src = vec![0.0; m];
        let mut st = PointState::zeros(m);
        let mut r1 = vec![0.0; m];
        let mut gap = vec![0.0; m * D];
        let mut e_comp = vec![0.0; m];
        let mut out = SampleOut {
            e_ht_sq: 0.0,
            r1_sq: 0.0,
            r_tau_w_sq: 0.0,
            r_v_sq: 0.0,
            gap_sq: 0.0,
            gap_v_sq: 0.0,
            h1_sq: 0.0,
        };
        let pe = self.problem.pressure_entropy();
        for py in 0..nx {
            for px in 0..nx {
                let w = self.axis_w[px] * self.axis_w[py];
                let p = px + nx * py;
                for c in 0..m {
                    let k = p * m + c;
                    st.u[c] = fl.u[0][k];
                    st.grad[c * D] = fl.u[1][k];
                    st.grad[c * D + 1] = fl.u[2][k];
                    st.ut[c] = fl.ut[k];
                    if with_aux {
                        let (a0, a1) = (&fl.aux[0], &fl.aux[1]);
                        st.aux_grad[0][c * D] = a0[0][k];
                        st.aux_hess[0][(c * D) * D] = a0[1][k];
                        st.aux_hess[0][(c * D + 1) * D] = a0[2][k];
                        st.aux_grad[1][c * D + 1] = a1[0][k];
                        st.aux_hess[1][(c * D) * D + 1] = a1[1][k];
                        st.aux_hess[1][(c * D + 1) * D + 1] = a1[2][k];
                    }
                    let e = fl.dg[k] - self.exact.u[k];
                    out.e_ht_sq += w * e * e;
                    let e = st.u[c] - self.exact.u[k];
                    e_comp[c] += w * e * e;
                    self.state_min[c] = self.state_min[c].min(st.u[c]);
                    self.state_max[c] = self.state_max[c].max(st.u[c]);
                    for a in 0..D {
                        self.grad_sup[a] = self.grad_sup[a].max(st.grad[c * D + a].abs());
                    }
                }
                if let Some(c) = self.problem.inadmissible_component(&st.u) {
                    let ng = self.zeta.len();
                    let n = nx / ng / 2;
                    return Err(Error::InadmissibleState {
                        cell: px / ng / 2 + n * (py / ng / 2),
                        component: c,
                        value: st.u[c],
                    });
                }
                let src = if want_source {
                    &self.exact.source[p * m..(p + 1) * m]
                } else {
                    &zero_src[..]
                };
                self.ev.r1(&st, src, &mut r1);
                out.r1_sq += w * r1.iter().map(|v| v * v).sum::<f64>();
                if self.psystem {
                    let wpp = pe.map_or(1.0, |pe| pe.d2w(st.u[0]));
                    out.r_tau_w_sq += w * (wpp * r1[0]).powi(2);
                    out.r_v_sq += w * (r1[1] * r1[1] + r1[2] * r1[2]);
                    let div = st.grad[D] + st.grad[2 * D + 1];
                    self.div_sup = self.div_sup.max(div.abs());
                }
                if with_aux {
                    self.ev.flux_gap(&st, &mut gap);
                    out.gap_sq += w * gap.iter().map(|v| v * v).sum::<f64>();
                    if self.psystem {
                        out.gap_v_sq += w * gap[D..].iter().map(|v| v * v).sum::<f64>();
                    }
                    for &c in &self.h1 {
                        for a in 0..D {
                            let e = st.grad[c * D + a] - self.exact.grad[(p * m + c) * D + a];
                            out.h1_sq += w * e * e;
                        }
                    }
                }
            }
        }
        check_finite(out.r1_sq + out.e_ht_sq + out.gap_sq, "residual norms", t)?;
        self.e_ts_linf = self.e_ts_linf.max(e_comp.iter().sum::<f64>().sqrt());
        for c in 0..m {
            self.e_ts_linf_comp[c] = self.e_ts_linf_comp[c].max(e_comp[c].sqrt());
        }
        self.samples += 1;
        Ok(out)
    }

    fn slab(&mut self, window: &[NodeGrid], slab_lo: usize, rule: &GaussRule) -> Result<()> {
        let times: Vec<f64> = window.iter().map(|n| n.t).collect();
        let (t0, t1) = (times[slab_lo], times[slab_lo + 1]);
        let tau = t1 - t0;
        let mut slab = SlabNorms {
            t0,
            t1,
            r1_l1l2: 0.0,
            err_l2l2_temporal_sq: 0.0,
            e_r2_sq: (self.eps > 0.0).then_some(0.0),
        };
        for (&z, &wt) in rule.nodes.iter().zip(&rule.weights) {
            let t = t0 + tau * z;
            let hw = hermite_weights(&times, t)?;
            self.fields.assemble(window, &hw);
            let s = self.sample(t)?;
            let w = tau * wt;
            self.e_ht_sq += w * s.e_ht_sq;
            self.r1_l1 += w * s.r1_sq.sqrt();
            self.h1_sq += w * s.h1_sq;
            self.gap_sq += w * s.gap_sq;
            self.gap_v_sq += w * s.gap_v_sq;
            self.r_tau_w_l1 += w * s.r_tau_w_sq.sqrt();
            self.r_v_l1 += w * s.r_v_sq.sqrt();
            slab.r1_l1l2 += w * s.r1_sq.sqrt();
            slab.err_l2l2_temporal_sq += w * s.e_ht_sq;
            if let Some(e) = slab.e_r2_sq.as_mut() {
                *e += w * s.gap_sq;
            }
        }
        self.slabs.push(slab);
        Ok(())
    }

    fn finish(self, t_final: f64) -> NormReport {
        let diffusive = self.eps > 0.0;
        let psystem = self.psystem.then(|| PSystemNorms {
            r_tau_weighted_l1l2: self.r_tau_w_l1,
            r_v_l1l2: self.r_v_l1,
            e_r2_velocity: diffusive.then(|| self.gap_v_sq.sqrt()),
            init_relative_entropy_l1: self.init_entropy,
            init_velocity_l2: self.init_sq[1..].iter().sum::<f64>().sqrt(),
        });
        NormReport {
            t_final,
            err_l2l2_temporal: self.e_ht_sq.sqrt(),
            err_linf_l2: self.e_ts_linf,
            r1_l1l2: self.r1_l1,
            err_l2h1: diffusive.then(|| self.h1_sq.sqrt()),
            e_r2: diffusive.then(|| self.gap_sq.sqrt()),
            dg_minus_reconstruction_linf_l2: self.dg_gap_linf,
            err_linf_l2_components: self.e_ts_linf_comp,
            init_error_l2: self.init_sq.iter().sum::<f64>().sqrt(),
            grad_sup: self.grad_sup,
            div_velocity_sup: self.psystem.then_some(self.div_sup),
            state_min: self.state_min,
            state_max: self.state_max,
            psystem,
            slabs: self.slabs,
            time_samples: self.samples,
        }
    }
}

fn check_finite(v: f64, what: &str, t: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: format!("{what} at t = {t}"),
            value: v,
        })
    }
}

/// Solve, reconstruct and accumulate every norm of one run, streaming over time.
///
/// Only `p + 2` filtered time nodes are held at once.
pub fn run_pipeline(
    problem: &dyn ProblemDefinition,
    config: &TrajectoryConfig,
    options: &PipelineOptions,
) -> Result<PipelineOutput> {
    let q = config.q;
    let p = options.history_depth.unwrap_or_else(|| history_depth(q));
    let space_points = options.space_points.unwrap_or(2 * q + 3);
    let time_points = options.time_points.unwrap_or(2 * p + 5);
    let mesh = CartesianMesh::new(problem.dim(), config.n)?;
    let filters = ReconstructionFilters::new(mesh, q, problem.eps() > 0.0)?;
    let mut acc = Accumulator::new(problem, mesh, space_points)?;
    let rule = GaussRule::new(time_points);
    let mut window: Vec<NodeGrid> = Vec::with_capacity(p + 3);
    let mut last_index = 0;
    let info = run_trajectory_streaming(problem, config, |node| {
        let filtered = filters.filter_node(node.u, node.w)?;
        let grid = acc.node(node.index, node.t, &filtered)?;
        drop(filtered);
        window.push(grid);
        if window.len() > p + 2 {
            window.remove(0);
        }
        let k = node.index;
        last_index = k;
        if k == p + 1 {
            for slab in 0..=p {
                acc.slab(&window, slab, &rule)?;
            }
        } else if k > p + 1 {
            acc.slab(&window, p, &rule)?;
        }
        Ok(())
    })?;
    if last_index < p + 1 {
        return Err(Error::DegenerateStencil(format!(
            "history depth {p} needs at least {} time steps, got {last_index}",
            p + 1
        )));
    }
    Ok(PipelineOutput {
        report: acc.finish(info.t_final),
        trajectory: info,
        history_depth: p,
        space_points,
        time_points,
    })
}
