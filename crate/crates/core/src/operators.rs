//! Discrete convective and interior-penalty diffusion operators.
//!
//! Both operators return the Riesz representative in `V_q^s`, i.e. the
//! assembled right-hand side divided by the (diagonal) mass matrix. Jumps are
//! taken as `[v] = v^- - v^+` with `v^-` the trace from the lower cell and the
//! face normal pointing from the lower to the upper cell.

use crate::error::{Error, Result};
use crate::mesh::{l2_project, BasisTable, CartesianMesh, DgField, TensorBasis};
use crate::problems::ProblemDefinition;

/// Local Lax–Friedrichs flux `1/2 (f(a) + f(b)).n - 1/2 lambda(a, b, n) (b - a)`.
pub fn rusanov_flux(
    problem: &dyn ProblemDefinition,
    a: &[f64],
    b: &[f64],
    normal: &[f64; 2],
    out: &mut [f64],
) {
    let m = problem.n_components();
    let mut fa = [0.0; 8];
    let mut fb = [0.0; 8];
    out.fill(0.0);
    for (alpha, &n) in normal.iter().enumerate() {
        if n == 0.0 {
            continue;
        }
        problem.flux(a, alpha, &mut fa[..m]);
        problem.flux(b, alpha, &mut fb[..m]);
        for c in 0..m {
            out[c] += 0.5 * n * (fa[c] + fb[c]);
        }
    }
    let lam = problem.wave_speed(a, b, normal);
    for c in 0..m {
        out[c] -= 0.5 * lam * (b[c] - a[c]);
    }
}

/// Interior-penalty parameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PenaltyConfig {
    /// `D_e = c_pen (q+1)^2 sym(A_nn(avg))`.
    pub c_pen: f64,
    /// Multiplies both symmetric consistency terms; `+1` is the standard SIPG form.
    pub consistency_sign: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            c_pen: 2.0,
            consistency_sign: 1.0,
        }
    }
}

/// Quadrature tables and problem data shared by repeated operator applications.
pub struct DgOperators<'a> {
    problem: &'a dyn ProblemDefinition,
    mesh: CartesianMesh,
    basis: TensorBasis,
    n_quad: usize,
    vol: BasisTable,
    /// Per axis: (lower cell at `xi_a = 1`, upper cell at `xi_a = 0`).
    faces: Vec<(BasisTable, BasisTable)>,
    penalty: PenaltyConfig,
}

impl<'a> DgOperators<'a> {
    /// Uses `q + 3` Gauss points per direction.
    pub fn new(
        problem: &'a dyn ProblemDefinition,
        mesh: CartesianMesh,
        basis: TensorBasis,
        penalty: PenaltyConfig,
    ) -> Result<Self> {
        Self::with_quadrature(problem, mesh, basis, penalty, basis.degree() + 3)
    }

    pub fn with_quadrature(
        problem: &'a dyn ProblemDefinition,
        mesh: CartesianMesh,
        basis: TensorBasis,
        penalty: PenaltyConfig,
        n_quad: usize,
    ) -> Result<Self> {
        if mesh.dim() > problem.dim() || basis.dim() != mesh.dim() {
            return Err(Error::InvalidArgument(format!(
                "mesh dimension {} incompatible with problem dimension {} / basis dimension {}",
                mesh.dim(),
                problem.dim(),
                basis.dim()
            )));
        }
        let vol = BasisTable::volume(&basis, n_quad);
        let faces = (0..mesh.dim())
            .map(|a| {
                (
                    BasisTable::face(&basis, n_quad, a, 1.0),
                    BasisTable::face(&basis, n_quad, a, 0.0),
                )
            })
            .collect();
        Ok(Self {
            problem,
            mesh,
            basis,
            n_quad,
            vol,
            faces,
            penalty,
        })
    }

    pub fn problem(&self) -> &'a dyn ProblemDefinition {
        self.problem
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn basis(&self) -> &TensorBasis {
        &self.basis
    }

    pub fn penalty(&self) -> PenaltyConfig {
        self.penalty
    }

    fn check_field(&self, u: &DgField) -> Result<()> {
        if u.mesh() != &self.mesh
            || u.basis() != &self.basis
            || u.n_components() != self.problem.n_components()
        {
            return Err(Error::InvalidArgument(
                "field does not match the operator's mesh, basis or component count".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    fn eval_point(&self, table: &BasisTable, g: usize, u: &DgField, cell: usize, out: &mut [f64]) {
        let row = table.value_row(g);
        for (c, o) in out.iter_mut().enumerate() {
            *o = dot(u.modes(cell, c), row);
        }
    }

    /// Reference gradient of every component: `out[c * d + beta]`, physical scaling applied.
    #[inline]
    fn eval_grad(&self, table: &BasisTable, g: usize, u: &DgField, cell: usize, out: &mut [f64]) {
        let d = self.mesh.dim();
        let inv_h = 1.0 / self.mesh.h();
        for c in 0..u.n_components() {
            for b in 0..d {
                out[c * d + b] = dot(u.modes(cell, c), table.grad_row(g, b)) * inv_h;
            }
        }
    }

    fn admissible(&self, u: &[f64], cell: usize) -> Result<()> {
        if let Some(c) = self.problem.inadmissible_component(u) {
            return Err(Error::InadmissibleState {
                cell,
                component: c,
                value: u[c],
            });
        }
        Ok(())
    }

    /// `f_h(u_h)`.
    pub fn convective(&self, u: &DgField) -> Result<DgField> {
        self.check_field(u)?;
        let m = u.n_components();
        let d = self.mesh.dim();
        let inv_h = 1.0 / self.mesh.h();
        let mut out = DgField::zeros(self.mesh, self.basis, m);
        let mut ug = vec![0.0; m];
        let mut f = vec![0.0; m];
        for cell in 0..self.mesh.n_cells() {
            for g in 0..self.vol.n_points() {
                self.eval_point(&self.vol, g, u, cell, &mut ug);
                self.admissible(&ug, cell)?;
                let w = self.vol.weights[g] * inv_h;
                for alpha in 0..d {
                    self.problem.flux(&ug, alpha, &mut f);
                    let grow = self.vol.grad_row(g, alpha);
                    for c in 0..m {
                        let fc = w * f[c];
                        for (o, dphi) in out.modes_mut(cell, c).iter_mut().zip(grow) {
                            *o -= fc * dphi;
                        }
                    }
                }
            }
        }
        let mut um = vec![0.0; m];
        let mut up = vec![0.0; m];
        let mut fhat = vec![0.0; m];
        for axis in 0..d {
            let (tm, tp) = &self.faces[axis];
            let mut normal = [0.0; 2];
            normal[axis] = 1.0;
            for cm in 0..self.mesh.n_cells() {
                let cp = self.mesh.neighbor(cm, axis, 1);
                for g in 0..tm.n_points() {
                    self.eval_point(tm, g, u, cm, &mut um);
                    self.eval_point(tp, g, u, cp, &mut up);
                    self.admissible(&um, cm)?;
                    self.admissible(&up, cp)?;
                    rusanov_flux(self.problem, &um, &up, &normal, &mut fhat);
                    let w = tm.weights[g] * inv_h;
                    for c in 0..m {
                        let v = w * fhat[c];
                        for (o, phi) in out.modes_mut(cm, c).iter_mut().zip(tm.value_row(g)) {
                            *o += v * phi;
                        }
                        for (o, phi) in out.modes_mut(cp, c).iter_mut().zip(tp.value_row(g)) {
                            *o -= v * phi;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `A_h(u_h)` without the factor `eps`.
    pub fn diffusive(&self, u: &DgField) -> Result<DgField> {
        self.check_field(u)?;
        if self.basis.degree() == 0 {
            return Err(Error::Config(
                "interior-penalty diffusion requires polynomial degree q >= 1".into(),
            ));
        }
        let m = u.n_components();
        let d = self.mesh.dim();
        let mm = m * m;
        let h = self.mesh.h();
        let inv_h = 1.0 / h;
        let sgn = self.penalty.consistency_sign;
        let pen_scale = self.penalty.c_pen * ((self.basis.degree() + 1) as f64).powi(2);
        let mut out = DgField::zeros(self.mesh, self.basis, m);
        let mut ug = vec![0.0; m];
        let mut grad = vec![0.0; m * d];
        let mut amat = vec![0.0; mm];
        let mut flux = vec![0.0; m * d];
        for cell in 0..self.mesh.n_cells() {
            for g in 0..self.vol.n_points() {
                self.eval_point(&self.vol, g, u, cell, &mut ug);
                self.eval_grad(&self.vol, g, u, cell, &mut grad);
                // flux[c * d + alpha] = sum_beta (A_ab grad_b u)_c
                flux.fill(0.0);
                for alpha in 0..d {
                    for beta in 0..d {
                        self.problem.diffusion(&ug, alpha, beta, &mut amat);
                        for i in 0..m {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += amat[i * m + j] * grad[j * d + beta];
                            }
                            flux[i * d + alpha] += s;
                        }
                    }
                }
                let w = self.vol.weights[g] * inv_h;
                for alpha in 0..d {
                    let grow = self.vol.grad_row(g, alpha);
                    for c in 0..m {
                        let v = w * flux[c * d + alpha];
                        if v == 0.0 {
                            continue;
                        }
                        for (o, dphi) in out.modes_mut(cell, c).iter_mut().zip(grow) {
                            *o -= v * dphi;
                        }
                    }
                }
            }
        }

        let mut um = vec![0.0; m];
        let mut up = vec![0.0; m];
        let mut gm = vec![0.0; m * d];
        let mut gp = vec![0.0; m * d];
        let mut jump = vec![0.0; m];
        let mut avg_flux = vec![0.0; m];
        let mut pen = vec![0.0; m];
        // at_jump_minus[c * d + beta] = (A_{axis,beta}(u^-)^T [u])_c
        let mut at_jump_minus = vec![0.0; m * d];
        let mut at_jump_plus = vec![0.0; m * d];
        let mut avg_state = vec![0.0; m];
        for axis in 0..d {
            let (tm, tp) = &self.faces[axis];
            for cm in 0..self.mesh.n_cells() {
                let cp = self.mesh.neighbor(cm, axis, 1);
                for g in 0..tm.n_points() {
                    self.eval_point(tm, g, u, cm, &mut um);
                    self.eval_point(tp, g, u, cp, &mut up);
                    self.eval_grad(tm, g, u, cm, &mut gm);
                    self.eval_grad(tp, g, u, cp, &mut gp);
                    for c in 0..m {
                        jump[c] = um[c] - up[c];
                        avg_state[c] = 0.5 * (um[c] + up[c]);
                    }
                    avg_flux.fill(0.0);
                    at_jump_minus.fill(0.0);
                    at_jump_plus.fill(0.0);
                    for beta in 0..d {
                        for (state, grads, atj, half) in [
                            (&um, &gm, &mut at_jump_minus, 0.5),
                            (&up, &gp, &mut at_jump_plus, 0.5),
                        ] {
                            self.problem.diffusion(state, axis, beta, &mut amat);
                            for i in 0..m {
                                let mut s = 0.0;
                                for j in 0..m {
                                    s += amat[i * m + j] * grads[j * d + beta];
                                    atj[i * d + beta] += amat[j * m + i] * jump[j];
                                }
                                avg_flux[i] += half * s;
                            }
                        }
                    }
                    self.problem.diffusion(&avg_state, axis, axis, &mut amat);
                    for i in 0..m {
                        let mut s = 0.0;
                        for j in 0..m {
                            s += 0.5 * (amat[i * m + j] + amat[j * m + i]) * jump[j];
                        }
                        pen[i] = pen_scale * s * inv_h;
                    }
                    let w = tm.weights[g] * inv_h;
                    for c in 0..m {
                        let vm = w * (sgn * avg_flux[c] - pen[c]);
                        let vp = -vm;
                        {
                            let vals = tm.value_row(g);
                            let modes = out.modes_mut(cm, c);
                            for (i, o) in modes.iter_mut().enumerate() {
                                let mut s = vm * vals[i];
                                for beta in 0..d {
                                    s += w * sgn * 0.5 * at_jump_minus[c * d + beta]
                                        * tm.grad_row(g, beta)[i]
                                        * inv_h;
                                }
                                *o += s;
                            }
                        }
                        {
                            let vals = tp.value_row(g);
                            let modes = out.modes_mut(cp, c);
                            for (i, o) in modes.iter_mut().enumerate() {
                                let mut s = vp * vals[i];
                                for beta in 0..d {
                                    s += w * sgn * 0.5 * at_jump_plus[c * d + beta]
                                        * tp.grad_row(g, beta)[i]
                                        * inv_h;
                                }
                                *o += s;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// L2 projection of the manufactured source at time `t` (`None` without source).
    pub fn source(&self, t: f64) -> Result<Option<DgField>> {
        if !self.problem.has_source() {
            return Ok(None);
        }
        let p = self.problem;
        let f = l2_project(self.mesh, self.basis, p.n_components(), self.n_quad, |x, o| {
            let mut xx = [0.0; 2];
            xx[..x.len()].copy_from_slice(x);
            p.source(t, &xx, o)
        })?;
        Ok(Some(f))
    }

    /// Nodal time derivative `-f_h(u) + eps A_h(u) + Pi s(t)`.
    pub fn time_derivative(&self, t: f64, u: &DgField) -> Result<DgField> {
        let mut w = self.convective(u)?;
        w.scale(-1.0);
        let eps = self.problem.eps();
        if eps != 0.0 {
            w.axpy(eps, &self.diffusive(u)?);
        }
        if let Some(s) = self.source(t)? {
            w.axpy(1.0, &s);
        }
        Ok(w)
    }

    /// Matrix of `u -> A_h(u)` on coefficient vectors (constant diffusion only).
    pub fn assemble_linear_diffusion(&self) -> Result<CsrMatrix> {
        if !self.problem.diffusion_is_constant() {
            return Err(Error::Unsupported(
                "state-dependent diffusion cannot be assembled; use explicit treatment".into(),
            ));
        }
        let m = self.problem.n_components();
        let nm = self.basis.n_modes();
        let block = m * nm;
        let n_cells = self.mesh.n_cells();
        let n = n_cells * block;
        // Responses to unit coefficients in cell 0; translate to every cell.
        let mut columns: Vec<Vec<(usize, usize, f64)>> = Vec::with_capacity(block);
        for local in 0..block {
            let mut probe = DgField::zeros(self.mesh, self.basis, m);
            probe.coeffs_mut()[local] = 1.0;
            let resp = self.diffusive(&probe)?;
            let mut col = Vec::new();
            for cell in 0..n_cells {
                for (k, &v) in resp.cell_block(cell).iter().enumerate() {
                    if v != 0.0 {
                        col.push((cell, k, v));
                    }
                }
            }
            columns.push(col);
        }
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let dim = self.mesh.dim();
        for src in 0..n_cells {
            let sm = self.mesh.cell_multi(src);
            for (local, col) in columns.iter().enumerate() {
                for &(cell, k, v) in col {
                    let cmu = self.mesh.cell_multi(cell);
                    let mut tgt = [0usize; 2];
                    for a in 0..dim {
                        tgt[a] = (cmu[a] + sm[a]) % self.mesh.n();
                    }
                    let row = self.mesh.cell_index(&tgt[..dim]) * block + k;
                    triplets.push((row, src * block + local, v));
                }
            }
        }
        Ok(CsrMatrix::from_triplets(n, n, triplets))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `f_h(u_h)` with default quadrature.
pub fn convective_apply(u: &DgField, problem: &dyn ProblemDefinition) -> Result<DgField> {
    DgOperators::new(problem, *u.mesh(), *u.basis(), PenaltyConfig::default())?.convective(u)
}

/// `A_h(u_h)` with default quadrature.
pub fn diffusive_apply(
    u: &DgField,
    problem: &dyn ProblemDefinition,
    penalty: PenaltyConfig,
) -> Result<DgField> {
    DgOperators::new(problem, *u.mesh(), *u.basis(), penalty)?.diffusive(u)
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Duplicates are summed.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::with_capacity(t.len());
        let mut values: Vec<f64> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n_rows {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rows)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&k| self.col_idx[k] == r)
                    .map_or(0.0, |k| self.values[k])
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Outcome of a converged conjugate-gradient solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Solve `(I - c L) x = b` by Jacobi-preconditioned CG; `x` holds the initial guess.
pub fn solve_shifted(
    l: &CsrMatrix,
    c: f64,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let n = b.len();
    let apply = |v: &[f64], out: &mut [f64]| {
        l.matvec(v, out);
        for i in 0..n {
            out[i] = v[i] - c * out[i];
        }
    };
    let dinv: Vec<f64> = l.diagonal().iter().map(|d| 1.0 / (1.0 - c * d)).collect();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(a, d)| a * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut res = norm2(&r) / bnorm;
    let mut it = 0;
    while res > rel_tol {
        if it >= max_iter {
            return Err(Error::SolverFailure {
                iterations: it,
                residual: res,
            });
        }
        apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * dinv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        res = norm2(&r) / bnorm;
        it += 1;
    }
    Ok(CgStats {
        iterations: it,
        relative_residual: res,
    })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
