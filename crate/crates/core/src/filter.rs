//! Exact SIAC convolution of dG fields.
//!
//! The filtered function `K_h * v_h` is a piecewise polynomial whose breakpoints
//! lie on the half-cell grid (cell faces shifted by kernel breakpoints, which are
//! integer or half-integer multiples of `h`). It is stored per half-cell in an
//! orthonormal Legendre basis, so values and derivatives of any order are exact.

use crate::bspline::{PiecewisePoly1D, SiacKernel, TensorKernel};
use crate::error::{Error, Result};
use crate::mesh::{CartesianMesh, DgField};
use crate::poly::{legendre_derivatives, legendre_values, GaussRule};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Half-cells per cell and axis.
const SUB: usize = 2;

/// Convolution table of one kernel factor against the 1D Legendre basis.
///
/// `coeffs[s][o][i]` holds the Legendre coefficients (degree `degree`) in the
/// local coordinate of half-cell `s` of the function
/// `zeta -> int_0^1 K((s + zeta)/2 - offset - xi) phi_i(xi) dxi`,
/// where `offset = offsets[o]` is the source cell relative to the target cell.
#[derive(Debug, Clone)]
pub struct ConvolutionTable1D {
    pub offsets: Vec<isize>,
    pub degree: usize,
    pub field_degree: usize,
    pub coeffs: Vec<Vec<Vec<Vec<f64>>>>,
}

impl ConvolutionTable1D {
    pub fn new(kernel: &SiacKernel, field_degree: usize, degree: usize) -> Self {
        let k = kernel.reference();
        let (lo, hi) = k.support();
        let bps = &k.breakpoints;
        let inner = GaussRule::new((k.degree() + field_degree) / 2 + 2);
        let outer = GaussRule::new(degree + 2);
        let outer_phi: Vec<Vec<f64>> = outer.nodes.iter().map(|&z| legendre_values(degree, z)).collect();
        // z = (s + zeta)/2 - o - xi spans [(s)/2 - o - 1, (s+1)/2 - o]
        let o_min = (-hi - 1.0).floor() as isize;
        let o_max = (1.0 - lo).ceil() as isize;
        let mut offsets = Vec::new();
        let mut coeffs: Vec<Vec<Vec<Vec<f64>>>> = vec![Vec::new(); SUB];
        for o in o_min..=o_max {
            let mut per_sub = Vec::with_capacity(SUB);
            let mut nonzero = false;
            for s in 0..SUB {
                let mut table = vec![vec![0.0; degree + 1]; field_degree + 1];
                for (g, &zeta) in outer.nodes.iter().enumerate() {
                    let shift = (s as f64 + zeta) / SUB as f64 - o as f64;
                    let vals = convolve_basis(k, bps, shift, field_degree, &inner);
                    for (i, v) in vals.iter().enumerate() {
                        if *v != 0.0 {
                            nonzero = true;
                        }
                        for a in 0..=degree {
                            table[i][a] += outer.weights[g] * v * outer_phi[g][a];
                        }
                    }
                }
                per_sub.push(table);
            }
            if nonzero {
                offsets.push(o);
                for (s, t) in per_sub.into_iter().enumerate() {
                    coeffs[s].push(t);
                }
            }
        }
        Self {
            offsets,
            degree,
            field_degree,
            coeffs,
        }
    }
}

/// `int_0^1 K(shift - xi) phi_i(xi) dxi` for all `i`, split at kernel breakpoints.
fn convolve_basis(k: &PiecewisePoly1D, bps: &[f64], shift: f64, degree: usize, rule: &GaussRule) -> Vec<f64> {
    // breakpoints in xi: shift - b
    let mut cuts: Vec<f64> = vec![0.0, 1.0];
    for &b in bps {
        let xi = shift - b;
        if xi > 0.0 && xi < 1.0 {
            cuts.push(xi);
        }
    }
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = vec![0.0; degree + 1];
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        let mid = 0.5 * (a + b);
        // evaluate inside the piece containing shift - mid to avoid breakpoint ambiguity
        let zmid = shift - mid;
        let (klo, khi) = k.support();
        if zmid <= klo || zmid >= khi {
            continue;
        }
        let piece = bps[1..].iter().position(|&bp| zmid < bp).unwrap_or(k.pieces.len() - 1);
        let coeffs = &k.pieces[piece];
        let left = bps[piece];
        for (&x, &wt) in rule.nodes.iter().zip(&rule.weights) {
            let xi = a + (b - a) * x;
            let t = shift - xi - left;
            let kv = coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c);
            let phi = legendre_values(degree, xi);
            for i in 0..=degree {
                out[i] += (b - a) * wt * kv * phi[i];
            }
        }
    }
    out
}

/// Piecewise polynomial on the half-cell grid, one Legendre tensor block per half-cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredField {
    mesh: CartesianMesh,
    m: usize,
    degree: usize,
    /// Breakpoint offset per axis in units of `h` (0 or 1/2).
    breakpoint_offset: [f64; 2],
    /// Continuity order across breakpoints per axis; `None` for discontinuous.
    smoothness: [Option<usize>; 2],
    /// Layout `(subcell, component, a + (degree + 1) b)`.
    coeffs: Vec<f64>,
}

impl FilteredField {
    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn n_components(&self) -> usize {
        self.m
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn smoothness(&self, axis: usize) -> Option<usize> {
        self.smoothness[axis]
    }

    /// Half-cells per axis.
    pub fn n_sub(&self) -> usize {
        SUB * self.mesh.n()
    }

    pub fn n_subcells(&self) -> usize {
        self.n_sub().pow(self.mesh.dim() as u32)
    }

    pub fn sub_h(&self) -> f64 {
        self.mesh.h() / SUB as f64
    }

    fn block(&self) -> usize {
        (self.degree + 1).pow(self.mesh.dim() as u32)
    }

    /// Breakpoints along `axis` in `[0, 1)`.
    pub fn breakpoints(&self, axis: usize) -> Vec<f64> {
        let h = self.mesh.h();
        (0..self.mesh.n())
            .map(|j| (j as f64 + self.breakpoint_offset[axis]) * h)
            .collect()
    }

    /// Exact re-expression of a dG field on the half-cell grid.
    pub fn from_dg(field: &DgField) -> Self {
        let mesh = *field.mesh();
        let dim = mesh.dim();
        let q = field.basis().degree();
        let m = field.n_components();
        // restriction of phi_i on [0,1] to half s: phi_i((s + z)/2) = sum_a R[s][i][a] phi_a(z)
        let rule = GaussRule::new(q + 2);
        let mut restrict = vec![vec![vec![0.0; q + 1]; q + 1]; SUB];
        for (s, rs) in restrict.iter_mut().enumerate() {
            for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
                let full = legendre_values(q, (s as f64 + z) / SUB as f64);
                let local = legendre_values(q, z);
                for i in 0..=q {
                    for a in 0..=q {
                        rs[i][a] += w * full[i] * local[a];
                    }
                }
            }
        }
        let table = SeparableTable {
            offsets: vec![0],
            coeffs: restrict.into_iter().map(|t| vec![t]).collect(),
            in_degree: q,
            out_degree: q,
        };
        let coeffs = apply_separable(field, &[table.clone(), table][..dim]);
        Self {
            mesh,
            m,
            degree: q,
            breakpoint_offset: [0.0; 2],
            smoothness: [None; 2],
            coeffs,
        }
    }

    /// Representation with the same shape and zero coefficients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.coeffs.fill(0.0);
        z
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Self) {
        debug_assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }

    /// Torus integral of each component.
    pub fn integral(&self) -> Vec<f64> {
        let vol = self.sub_h().powi(self.mesh.dim() as i32);
        let block = self.block();
        let mut out = vec![0.0; self.m];
        for cell in 0..self.n_subcells() {
            for (c, o) in out.iter_mut().enumerate() {
                *o += vol * self.coeffs[(cell * self.m + c) * block];
            }
        }
        out
    }

    fn locate_axis(&self, x: f64, axis: usize, deriv: usize) -> Result<(usize, f64)> {
        let hs = self.sub_h();
        let n_sub = self.n_sub();
        let xw = crate::mesh::wrap_unit(x);
        let pos = xw / hs;
        let mut j = pos.floor() as usize;
        let mut z = pos - j as f64;
        if j >= n_sub {
            j = n_sub - 1;
            z = 1.0;
        }
        // on a true breakpoint the derivative must be continuous
        let tol = 1e-12;
        let h = self.mesh.h();
        let r = (xw / h - self.breakpoint_offset[axis]).rem_euclid(1.0);
        if (r < tol || r > 1.0 - tol) && deriv > 0 {
            let ok = matches!(self.smoothness[axis], Some(s) if deriv <= s);
            if !ok {
                return Err(Error::UndefinedDerivative {
                    axis,
                    coord: x,
                    order: deriv,
                });
            }
        }
        if z > 1.0 {
            z = 1.0;
        }
        Ok((j, z))
    }

    /// Mixed derivative `d^{deriv[0]}_x d^{deriv[1]}_y` at `x`.
    ///
    /// Errors with [`Error::UndefinedDerivative`] when `x` lies on a breakpoint
    /// and the requested order exceeds the continuity there.
    pub fn evaluate(&self, x: &[f64], deriv: [usize; 2]) -> Result<Vec<f64>> {
        let dim = self.mesh.dim();
        let d = self.degree;
        let scale = 1.0 / self.sub_h();
        let mut idx = [0usize; 2];
        let mut tabs: Vec<Vec<f64>> = Vec::with_capacity(dim);
        for axis in 0..dim {
            let (j, z) = self.locate_axis(x[axis], axis, deriv[axis])?;
            idx[axis] = j;
            let all = legendre_derivatives(d, deriv[axis], z);
            tabs.push(all[deriv[axis]].iter().map(|v| v * scale.powi(deriv[axis] as i32)).collect());
        }
        let cell = if dim == 1 { idx[0] } else { idx[0] + self.n_sub() * idx[1] };
        let block = self.block();
        let mut out = vec![0.0; self.m];
        for (c, o) in out.iter_mut().enumerate() {
            let cf = &self.coeffs[(cell * self.m + c) * block..(cell * self.m + c + 1) * block];
            *o = if dim == 1 {
                cf.iter().zip(&tabs[0]).map(|(a, b)| a * b).sum()
            } else {
                let mut acc = 0.0;
                for b in 0..=d {
                    for a in 0..=d {
                        acc += cf[a + (d + 1) * b] * tabs[0][a] * tabs[1][b];
                    }
                }
                acc
            };
        }
        Ok(out)
    }

    /// Evaluate on the tensor grid made of the local points `zeta` in every half-cell.
    ///
    /// Returns one array per entry of `derivs`, laid out as `(point, component)`
    /// with global point index `px + nx * py`, `px = subcell_x * zeta.len() + g`.
    pub fn eval_grid(&self, zeta: &[f64], derivs: &[[usize; 2]]) -> Vec<Vec<f64>> {
        let dim = self.mesh.dim();
        let d = self.degree;
        let ng = zeta.len();
        let n_sub = self.n_sub();
        let m = self.m;
        let max_d = derivs.iter().flat_map(|v| v.iter()).copied().max().unwrap_or(0);
        let scale = 1.0 / self.sub_h();
        // tab[k][g][a]
        let mut tab = vec![vec![vec![0.0; d + 1]; ng]; max_d + 1];
        for (g, &z) in zeta.iter().enumerate() {
            let all = legendre_derivatives(d, max_d, z);
            for k in 0..=max_d {
                for a in 0..=d {
                    tab[k][g][a] = all[k][a] * scale.powi(k as i32);
                }
            }
        }
        let nx = n_sub * ng;
        let n_points = nx.pow(dim as u32);
        let mut out = vec![vec![0.0; n_points * m]; derivs.len()];
        let block = self.block();
        if dim == 1 {
            for cell in 0..n_sub {
                for c in 0..m {
                    let cf = &self.coeffs[(cell * m + c) * block..(cell * m + c + 1) * block];
                    for (k, req) in derivs.iter().enumerate() {
                        for g in 0..ng {
                            let v: f64 = cf.iter().zip(&tab[req[0]][g]).map(|(a, b)| a * b).sum();
                            out[k][(cell * ng + g) * m + c] = v;
                        }
                    }
                }
            }
            return out;
        }
        let mut xorders: Vec<usize> = derivs.iter().map(|r| r[0]).collect();
        xorders.sort_unstable();
        xorders.dedup();
        // partial[dx][gx][b]
        let mut partial = vec![vec![vec![0.0; d + 1]; ng]; max_d + 1];
        for iy in 0..n_sub {
            for ix in 0..n_sub {
                let cell = ix + n_sub * iy;
                for c in 0..m {
                    let cf = &self.coeffs[(cell * m + c) * block..(cell * m + c + 1) * block];
                    for &dx in &xorders {
                        for gx in 0..ng {
                            let tx = &tab[dx][gx];
                            for b in 0..=d {
                                let row = &cf[(d + 1) * b..(d + 1) * (b + 1)];
                                partial[dx][gx][b] = row.iter().zip(tx).map(|(u, v)| u * v).sum();
                            }
                        }
                    }
                    for (k, req) in derivs.iter().enumerate() {
                        let o = &mut out[k];
                        for gy in 0..ng {
                            let ty = &tab[req[1]][gy];
                            let py = iy * ng + gy;
                            for gx in 0..ng {
                                let px = ix * ng + gx;
                                let v: f64 = partial[req[0]][gx].iter().zip(ty).map(|(u, w)| u * w).sum();
                                o[(px + nx * py) * m + c] = v;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Global coordinates of the grid used by [`Self::eval_grid`] along one axis.
    pub fn grid_coordinates(&self, zeta: &[f64]) -> Vec<f64> {
        let hs = self.sub_h();
        (0..self.n_sub())
            .flat_map(|j| zeta.iter().map(move |z| (j as f64 + z) * hs))
            .collect()
    }

    /// Header plus raw little-endian coefficients, mirroring the dG snapshot format.
    pub fn write_dump(&self, stem: &Path) -> Result<()> {
        let header = FilteredHeader {
            dim: self.mesh.dim(),
            n: self.mesh.n(),
            m: self.m,
            degree: self.degree,
            subcells_per_axis: self.n_sub(),
            breakpoints: (0..self.mesh.dim()).map(|a| self.breakpoints(a)).collect(),
            layout: "subcell (x fastest), component, legendre a + (degree+1) b on [0,1]^d".into(),
            encoding: "f64-le".into(),
        };
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&header)?)?;
        let bytes: Vec<u8> = self.coeffs.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(stem.with_extension("bin"), bytes)?;
        Ok(())
    }
}

/// Header of a filtered-field dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilteredHeader {
    pub dim: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub degree: usize,
    pub subcells_per_axis: usize,
    pub breakpoints: Vec<Vec<f64>>,
    pub layout: String,
    pub encoding: String,
}

#[derive(Debug, Clone)]
struct SeparableTable {
    offsets: Vec<isize>,
    /// `[s][o][i][a]`
    coeffs: Vec<Vec<Vec<Vec<f64>>>>,
    in_degree: usize,
    out_degree: usize,
}

impl From<ConvolutionTable1D> for SeparableTable {
    fn from(t: ConvolutionTable1D) -> Self {
        Self {
            offsets: t.offsets,
            coeffs: t.coeffs,
            in_degree: t.field_degree,
            out_degree: t.degree,
        }
    }
}

/// Apply per-axis tables to a dG field; output layout as in [`FilteredField`].
fn apply_separable(field: &DgField, tables: &[SeparableTable]) -> Vec<f64> {
    let mesh = field.mesh();
    let n = mesh.n();
    let m = field.n_components();
    let q = field.basis().degree();
    let nq = q + 1;
    let wrap = |j: usize, o: isize| (j as isize + o).rem_euclid(n as isize) as usize;
    if mesh.dim() == 1 {
        let t = &tables[0];
        let nd = t.out_degree + 1;
        let mut out = vec![0.0; SUB * n * m * nd];
        for j in 0..n {
            for s in 0..SUB {
                let cell = SUB * j + s;
                for (oi, &o) in t.offsets.iter().enumerate() {
                    let src = wrap(j, o);
                    for c in 0..m {
                        let v = field.modes(src, c);
                        let dst = &mut out[(cell * m + c) * nd..(cell * m + c + 1) * nd];
                        for (i, vi) in v.iter().enumerate() {
                            for (a, d) in dst.iter_mut().enumerate() {
                                *d += vi * t.coeffs[s][oi][i][a];
                            }
                        }
                    }
                }
            }
        }
        return out;
    }
    let (tx, ty) = (&tables[0], &tables[1]);
    debug_assert_eq!(tx.in_degree, q);
    let dx = tx.out_degree + 1;
    let dy = ty.out_degree + 1;
    let ns = SUB * n;
    // pass 1: x. layout (subx, celly, comp, a + dx k)
    let mut tmp = vec![0.0; ns * n * m * dx * nq];
    for jy in 0..n {
        for jx in 0..n {
            for s in 0..SUB {
                let sx = SUB * jx + s;
                for (oi, &o) in tx.offsets.iter().enumerate() {
                    let src = mesh.cell_index(&[wrap(jx, o), jy]);
                    let tab = &tx.coeffs[s][oi];
                    for c in 0..m {
                        let v = field.modes(src, c);
                        let base = ((sx + ns * jy) * m + c) * dx * nq;
                        let dst = &mut tmp[base..base + dx * nq];
                        for k in 0..nq {
                            for i in 0..nq {
                                let vi = v[i + nq * k];
                                if vi == 0.0 {
                                    continue;
                                }
                                let row = &tab[i];
                                let d = &mut dst[dx * k..dx * (k + 1)];
                                for a in 0..dx {
                                    d[a] += vi * row[a];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    // pass 2: y. layout (subx + ns suby, comp, a + dx b)
    let mut out = vec![0.0; ns * ns * m * dx * dy];
    for jy in 0..n {
        for s in 0..SUB {
            let sy = SUB * jy + s;
            for (oi, &o) in ty.offsets.iter().enumerate() {
                let src_y = wrap(jy, o);
                let tab = &ty.coeffs[s][oi];
                for sx in 0..ns {
                    for c in 0..m {
                        let sbase = ((sx + ns * src_y) * m + c) * dx * nq;
                        let src = &tmp[sbase..sbase + dx * nq];
                        let obase = ((sx + ns * sy) * m + c) * dx * dy;
                        let dst = &mut out[obase..obase + dx * dy];
                        for k in 0..nq {
                            let row = &tab[k];
                            let sk = &src[dx * k..dx * (k + 1)];
                            for b in 0..dy {
                                let w = row[b];
                                if w == 0.0 {
                                    continue;
                                }
                                let d = &mut dst[dx * b..dx * (b + 1)];
                                for a in 0..dx {
                                    d[a] += w * sk[a];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Precomputed convolution for a fixed (mesh, field degree, tensor kernel).
#[derive(Debug, Clone)]
pub struct SiacFilter {
    mesh: CartesianMesh,
    field_degree: usize,
    degree: usize,
    tables: Vec<SeparableTable>,
    offsets: [f64; 2],
    smoothness: [Option<usize>; 2],
}

impl SiacFilter {
    /// Output degree per axis is `field_degree + max spline order`.
    pub fn new(mesh: CartesianMesh, field_degree: usize, kernel: &TensorKernel) -> Result<Self> {
        let r_max = kernel.factors.iter().map(|k| k.spline_order()).max().unwrap_or(1);
        Self::with_degree(mesh, field_degree, kernel, field_degree + r_max)
    }

    /// As [`Self::new`] with an explicit projection degree (at least the exact one).
    pub fn with_degree(mesh: CartesianMesh, field_degree: usize, kernel: &TensorKernel, degree: usize) -> Result<Self> {
        if kernel.dim() != mesh.dim() {
            return Err(Error::InvalidArgument(format!(
                "kernel dimension {} does not match mesh dimension {}",
                kernel.dim(),
                mesh.dim()
            )));
        }
        let mut offsets = [0.0; 2];
        let mut smoothness = [None; 2];
        let mut tables = Vec::with_capacity(mesh.dim());
        for (axis, k) in kernel.factors.iter().enumerate() {
            if (k.h() - mesh.h()).abs() > 1e-14 * mesh.h() {
                return Err(Error::Unsupported(format!(
                    "kernel scaling {} differs from mesh width {}",
                    k.h(),
                    mesh.h()
                )));
            }
            let width = 2 * k.q() + k.spline_order();
            offsets[axis] = if width % 2 == 0 { 0.0 } else { 0.5 };
            smoothness[axis] = k.smoothness();
            tables.push(ConvolutionTable1D::new(k, field_degree, degree).into());
        }
        Ok(Self {
            mesh,
            field_degree,
            degree,
            tables,
            offsets,
            smoothness,
        })
    }

    pub fn apply(&self, field: &DgField) -> Result<FilteredField> {
        if *field.mesh() != self.mesh || field.basis().degree() != self.field_degree {
            return Err(Error::InvalidArgument(
                "field mesh or degree does not match the filter".into(),
            ));
        }
        Ok(FilteredField {
            mesh: self.mesh,
            m: field.n_components(),
            degree: self.degree,
            breakpoint_offset: self.offsets,
            smoothness: self.smoothness,
            coeffs: apply_separable(field, &self.tables),
        })
    }
}

/// `K_h * v_h` with exact piecewise-polynomial integration.
pub fn siac_convolve(field: &DgField, kernel: &TensorKernel) -> Result<FilteredField> {
    SiacFilter::new(*field.mesh(), field.basis().degree(), kernel)?.apply(field)
}
