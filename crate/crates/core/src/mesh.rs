//! Periodic Cartesian meshes, tensor-product Legendre bases and dG fields.
//!
//! Layout conventions used everywhere in the crate:
//!
//! * cells are numbered `j_0 + N j_1` (axis 0 fastest),
//! * modes are numbered `i_0 + (q+1) i_1` (axis 0 fastest),
//! * dG coefficients are stored cell-major, then component, then mode.
//!
//! The per-cell basis is `phi_i((x - x_K)/h)` with `phi_i` orthonormal on the
//! reference cell `[0,1]^d`, so the physical mass matrix is `h^d I`.

use crate::error::{Error, Result};
use crate::poly::{legendre_derivatives, GaussRule};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const FACE_TOL: f64 = 1e-14;

/// Uniform periodic Cartesian mesh of the unit torus `[0,1]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianMesh {
    dim: usize,
    n: usize,
    h: f64,
}

impl CartesianMesh {
    pub fn new(dim: usize, cells_per_dim: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidArgument(format!(
                "mesh dimension must be 1 or 2, got {dim}"
            )));
        }
        if cells_per_dim == 0 {
            return Err(Error::InvalidArgument("mesh needs at least one cell".into()));
        }
        Ok(Self {
            dim,
            n: cells_per_dim,
            h: 1.0 / cells_per_dim as f64,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per direction.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Number of faces; every face is interior on the torus.
    pub fn n_faces(&self) -> usize {
        self.dim * self.n_cells()
    }

    pub fn cell_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .rev()
            .fold(0, |acc, &j| acc * self.n + (j % self.n))
    }

    pub fn cell_multi(&self, mut cell: usize) -> [usize; 2] {
        let mut out = [0; 2];
        for slot in out.iter_mut().take(self.dim) {
            *slot = cell % self.n;
            cell /= self.n;
        }
        out
    }

    /// Periodic neighbour of `cell` along `axis` (`offset` may be negative).
    pub fn neighbor(&self, cell: usize, axis: usize, offset: isize) -> usize {
        let mut m = self.cell_multi(cell);
        let n = self.n as isize;
        m[axis] = (((m[axis] as isize + offset) % n + n) % n) as usize;
        self.cell_index(&m[..self.dim])
    }

    /// Lower-left corner of `cell`.
    pub fn cell_origin(&self, cell: usize) -> [f64; 2] {
        let m = self.cell_multi(cell);
        [m[0] as f64 * self.h, m[1] as f64 * self.h]
    }
}

/// Wrap a coordinate into `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

/// Tensor-product orthonormal Legendre basis of `Q_q` on the reference cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorBasis {
    degree: usize,
    dim: usize,
}

impl TensorBasis {
    pub fn new(dim: usize, degree: usize) -> Self {
        Self { degree, dim }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes_1d(&self) -> usize {
        self.degree + 1
    }

    pub fn n_modes(&self) -> usize {
        self.modes_1d().pow(self.dim as u32)
    }

    pub fn mode_multi(&self, mode: usize) -> [usize; 2] {
        let p = self.modes_1d();
        [mode % p, (mode / p) % p]
    }

    /// Basis values and reference gradients at a reference point.
    pub fn eval(&self, xi: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let tabs: Vec<Vec<Vec<f64>>> = xi
            .iter()
            .map(|&x| legendre_derivatives(self.degree, 1, x))
            .collect();
        let nm = self.n_modes();
        let mut vals = vec![0.0; nm];
        let mut grads = vec![vec![0.0; nm]; self.dim];
        for mode in 0..nm {
            let mi = self.mode_multi(mode);
            let mut v = 1.0;
            for a in 0..self.dim {
                v *= tabs[a][0][mi[a]];
            }
            vals[mode] = v;
            for (g, grad) in grads.iter_mut().enumerate() {
                let mut dv = 1.0;
                for a in 0..self.dim {
                    dv *= tabs[a][usize::from(a == g)][mi[a]];
                }
                grad[mode] = dv;
            }
        }
        (vals, grads)
    }
}

/// Precomputed basis values and reference gradients at a set of reference points.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// `values[g * n_modes + i]`
    pub values: Vec<f64>,
    /// `grads[(g * dim + axis) * n_modes + i]`, derivative w.r.t. the reference coordinate
    pub grads: Vec<f64>,
    pub n_modes: usize,
    pub dim: usize,
}

impl BasisTable {
    pub fn new(basis: &TensorBasis, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Self {
        let nm = basis.n_modes();
        let dim = basis.dim();
        let mut values = Vec::with_capacity(points.len() * nm);
        let mut grads = Vec::with_capacity(points.len() * nm * dim);
        for p in &points {
            let (v, g) = basis.eval(p);
            values.extend_from_slice(&v);
            for ga in &g {
                grads.extend_from_slice(ga);
            }
        }
        Self {
            points,
            weights,
            values,
            grads,
            n_modes: nm,
            dim,
        }
    }

    /// Tensor Gauss points of the reference cell.
    pub fn volume(basis: &TensorBasis, n_quad: usize) -> Self {
        let rule = GaussRule::new(n_quad);
        let (pts, wts) = tensor_points(&rule, basis.dim());
        Self::new(basis, pts, wts)
    }

    /// Gauss points on the face `xi_axis = side` (side 0 or 1) of the reference cell.
    pub fn face(basis: &TensorBasis, n_quad: usize, axis: usize, side: f64) -> Self {
        let rule = GaussRule::new(n_quad);
        let (pts, wts) = if basis.dim() == 1 {
            (vec![vec![side]], vec![1.0])
        } else {
            let other = 1 - axis;
            let mut pts = Vec::new();
            let mut wts = Vec::new();
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let mut p = vec![0.0; 2];
                p[axis] = side;
                p[other] = *x;
                pts.push(p);
                wts.push(*w);
            }
            (pts, wts)
        };
        Self::new(basis, pts, wts)
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn value_row(&self, g: usize) -> &[f64] {
        &self.values[g * self.n_modes..(g + 1) * self.n_modes]
    }

    #[inline]
    pub fn grad_row(&self, g: usize, axis: usize) -> &[f64] {
        let s = (g * self.dim + axis) * self.n_modes;
        &self.grads[s..s + self.n_modes]
    }
}

/// Tensor product of a 1D rule on `[0,1]^dim` (axis 0 fastest).
pub fn tensor_points(rule: &GaussRule, dim: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = rule.len();
    let total = n.pow(dim as u32);
    let mut pts = Vec::with_capacity(total);
    let mut wts = Vec::with_capacity(total);
    for k in 0..total {
        let mut p = Vec::with_capacity(dim);
        let mut w = 1.0;
        let mut r = k;
        for _ in 0..dim {
            let i = r % n;
            r /= n;
            p.push(rule.nodes[i]);
            w *= rule.weights[i];
        }
        pts.push(p);
        wts.push(w);
    }
    (pts, wts)
}

/// Which trace to take for a point lying on a face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Limit from the lower-coordinate cell (`phi^-` for the axis normal).
    Minus,
    /// Limit from the upper-coordinate cell (`phi^+`).
    Plus,
}

/// Vector-valued piecewise `Q_q` field on a periodic Cartesian mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DgField {
    mesh: CartesianMesh,
    basis: TensorBasis,
    n_components: usize,
    coeffs: Vec<f64>,
}

impl DgField {
    pub fn zeros(mesh: CartesianMesh, basis: TensorBasis, n_components: usize) -> Self {
        let len = mesh.n_cells() * n_components * basis.n_modes();
        Self {
            mesh,
            basis,
            n_components,
            coeffs: vec![0.0; len],
        }
    }

    pub fn from_coeffs(
        mesh: CartesianMesh,
        basis: TensorBasis,
        n_components: usize,
        coeffs: Vec<f64>,
    ) -> Result<Self> {
        let f = Self::zeros(mesh, basis, n_components);
        if coeffs.len() != f.coeffs.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficients, got {}",
                f.coeffs.len(),
                coeffs.len()
            )));
        }
        Ok(Self { coeffs, ..f })
    }

    pub fn mesh(&self) -> &CartesianMesh {
        &self.mesh
    }

    pub fn basis(&self) -> &TensorBasis {
        &self.basis
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Slice of modes for one (cell, component).
    #[inline]
    pub fn modes(&self, cell: usize, comp: usize) -> &[f64] {
        let nm = self.basis.n_modes();
        let s = (cell * self.n_components + comp) * nm;
        &self.coeffs[s..s + nm]
    }

    #[inline]
    pub fn modes_mut(&mut self, cell: usize, comp: usize) -> &mut [f64] {
        let nm = self.basis.n_modes();
        let s = (cell * self.n_components + comp) * nm;
        &mut self.coeffs[s..s + nm]
    }

    /// All components' modes of one cell.
    #[inline]
    pub fn cell_block(&self, cell: usize) -> &[f64] {
        let b = self.n_components * self.basis.n_modes();
        &self.coeffs[cell * b..(cell + 1) * b]
    }

    /// Cell mean of every component. With `phi_0 = 1` this is the mode-0 coefficient.
    pub fn cell_mean(&self, cell: usize) -> Vec<f64> {
        (0..self.n_components)
            .map(|c| self.modes(cell, c)[0])
            .collect()
    }

    /// Torus integral of every component.
    pub fn integral(&self) -> Vec<f64> {
        let vol = self.mesh.h().powi(self.mesh.dim() as i32);
        (0..self.n_components)
            .map(|c| {
                let v: Vec<f64> = (0..self.mesh.n_cells())
                    .map(|k| self.modes(k, c)[0])
                    .collect();
                crate::poly::pairwise_sum(&v) * vol
            })
            .collect()
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &DgField) {
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        for x in &mut self.coeffs {
            *x *= a;
        }
    }

    /// Locate the owning cell and reference coordinates of a torus point.
    pub fn locate(&self, point: &[f64], side: Option<Side>) -> Result<(usize, Vec<f64>)> {
        let n = self.mesh.n() as f64;
        let mut multi = [0usize; 2];
        let mut xi = vec![0.0; self.mesh.dim()];
        for a in 0..self.mesh.dim() {
            let x = wrap_unit(point[a]);
            let s = x * n;
            let nearest = s.round();
            let on_face = (s - nearest).abs() <= FACE_TOL * n.max(1.0);
            let j = if on_face {
                match side {
                    None => return Err(Error::AmbiguousTrace { axis: a, coord: x }),
                    Some(Side::Plus) => nearest,
                    Some(Side::Minus) => nearest - 1.0,
                }
            } else {
                s.floor()
            };
            let jj = ((j as isize).rem_euclid(self.mesh.n() as isize)) as usize;
            multi[a] = jj;
            xi[a] = if on_face {
                match side {
                    Some(Side::Plus) => 0.0,
                    _ => 1.0,
                }
            } else {
                s - j
            };
        }
        Ok((self.mesh.cell_index(&multi[..self.mesh.dim()]), xi))
    }

    /// Point evaluation. Points on a face require an explicit trace side.
    pub fn evaluate(&self, point: &[f64], side: Option<Side>) -> Result<Vec<f64>> {
        let (cell, xi) = self.locate(point, side)?;
        Ok(self.evaluate_in_cell(cell, &xi))
    }

    pub fn evaluate_in_cell(&self, cell: usize, xi: &[f64]) -> Vec<f64> {
        let (vals, _) = self.basis.eval(xi);
        (0..self.n_components)
            .map(|c| {
                self.modes(cell, c)
                    .iter()
                    .zip(&vals)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// Physical gradient inside a cell: `out[c][axis]`.
    pub fn gradient_in_cell(&self, cell: usize, xi: &[f64]) -> Vec<Vec<f64>> {
        let (_, grads) = self.basis.eval(xi);
        let inv_h = 1.0 / self.mesh.h();
        (0..self.n_components)
            .map(|c| {
                grads
                    .iter()
                    .map(|g| {
                        self.modes(cell, c)
                            .iter()
                            .zip(g)
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            * inv_h
                    })
                    .collect()
            })
            .collect()
    }

    /// Broken L2, H1-seminorm and sampled sup norm over all components.
    pub fn norms(&self) -> Norms {
        let q = self.basis.degree();
        let rule = GaussRule::new(q + 2);
        let table = BasisTable::volume(&self.basis, q + 2);
        let vol = self.mesh.h().powi(self.mesh.dim() as i32);
        let inv_h = 1.0 / self.mesh.h();
        let dim = self.mesh.dim();
        let mut l2 = Vec::with_capacity(self.mesh.n_cells());
        let mut h1 = Vec::with_capacity(self.mesh.n_cells());
        let mut linf: f64 = 0.0;
        let vertices: Vec<Vec<f64>> = (0..(1usize << dim))
            .map(|k| (0..dim).map(|a| ((k >> a) & 1) as f64).collect())
            .collect();
        let _ = rule;
        for cell in 0..self.mesh.n_cells() {
            let mut s2 = 0.0;
            let mut g2 = 0.0;
            for g in 0..table.n_points() {
                let w = table.weights[g] * vol;
                for c in 0..self.n_components {
                    let modes = self.modes(cell, c);
                    let v: f64 = modes.iter().zip(table.value_row(g)).map(|(a, b)| a * b).sum();
                    s2 += w * v * v;
                    linf = linf.max(v.abs());
                    for a in 0..dim {
                        let d: f64 = modes
                            .iter()
                            .zip(table.grad_row(g, a))
                            .map(|(x, y)| x * y)
                            .sum::<f64>()
                            * inv_h;
                        g2 += w * d * d;
                    }
                }
            }
            for vtx in &vertices {
                for v in self.evaluate_in_cell(cell, vtx) {
                    linf = linf.max(v.abs());
                }
            }
            l2.push(s2);
            h1.push(g2);
        }
        Norms {
            l2: crate::poly::pairwise_sum(&l2).sqrt(),
            h1_semi: crate::poly::pairwise_sum(&h1).sqrt(),
            linf,
        }
    }

    /// Write `<stem>.json` (header) and `<stem>.bin` (little-endian f64 coefficients).
    pub fn write_snapshot(&self, stem: &Path, time: f64) -> Result<()> {
        let header = SnapshotHeader {
            dim: self.mesh.dim(),
            n: self.mesh.n(),
            q: self.basis.degree(),
            m: self.n_components,
            time,
            layout: "cell,component,mode".into(),
            encoding: "f64-le".into(),
        };
        std::fs::write(
            stem.with_extension("json"),
            serde_json::to_string_pretty(&header)?,
        )?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(stem.with_extension("bin"))?);
        for v in &self.coeffs {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_snapshot(stem: &Path) -> Result<(Self, f64)> {
        let header: SnapshotHeader =
            serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        let mesh = CartesianMesh::new(header.dim, header.n)?;
        let basis = TensorBasis::new(header.dim, header.q);
        let mut bytes = Vec::new();
        std::fs::File::open(stem.with_extension("bin"))?.read_to_end(&mut bytes)?;
        let coeffs = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((Self::from_coeffs(mesh, basis, header.m, coeffs)?, header.time))
    }
}

/// Header of a dG snapshot dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub dim: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub q: usize,
    pub m: usize,
    pub time: f64,
    pub layout: String,
    pub encoding: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub h1_semi: f64,
    /// Max over quadrature nodes and cell vertices; a lower bound of the true sup.
    pub linf: f64,
}

/// L2 projection of `f` (writing `m` values into its output slice) onto `V_q^s`.
pub fn l2_project<F>(
    mesh: CartesianMesh,
    basis: TensorBasis,
    n_components: usize,
    n_quad: usize,
    mut f: F,
) -> Result<DgField>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if n_quad < basis.degree() + 2 {
        return Err(Error::InvalidArgument(format!(
            "projection needs at least q+2 = {} Gauss points per direction",
            basis.degree() + 2
        )));
    }
    let table = BasisTable::volume(&basis, n_quad);
    let mut field = DgField::zeros(mesh, basis, n_components);
    let h = mesh.h();
    let mut vals = vec![0.0; n_components];
    let mut x = vec![0.0; mesh.dim()];
    for cell in 0..mesh.n_cells() {
        let origin = mesh.cell_origin(cell);
        for g in 0..table.n_points() {
            for a in 0..mesh.dim() {
                x[a] = origin[a] + h * table.points[g][a];
            }
            f(&x, &mut vals);
            for (c, &v) in vals.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        what: format!("projected function at {x:?}, component {c}"),
                        value: v,
                    });
                }
                let w = table.weights[g] * v;
                for (m, phi) in field.modes_mut(cell, c).iter_mut().zip(table.value_row(g)) {
                    *m += w * phi;
                }
            }
        }
    }
    Ok(field)
}

/// Broken norms of a callable that returns `(values, gradients)` with
/// `gradients[c * dim + axis]`, integrated piecewise on the tensor grid of
/// `breakpoints` (sorted, covering `[0,1]`).
pub fn broken_norms_fn<F>(dim: usize, breakpoints: &[f64], n_quad: usize, mut f: F) -> Norms
where
    F: FnMut(&[f64]) -> (Vec<f64>, Vec<f64>),
{
    let rule = GaussRule::new(n_quad);
    let pieces: Vec<(f64, f64)> = breakpoints.windows(2).map(|w| (w[0], w[1])).collect();
    let np = pieces.len();
    let total = np.pow(dim as u32);
    let mut l2 = Vec::with_capacity(total);
    let mut h1 = Vec::with_capacity(total);
    let mut linf: f64 = 0.0;
    let (ref_pts, ref_w) = tensor_points(&rule, dim);
    let mut x = vec![0.0; dim];
    for k in 0..total {
        let mut r = k;
        let mut lo = [0.0; 2];
        let mut len = [0.0; 2];
        for a in 0..dim {
            let (a0, a1) = pieces[r % np];
            r /= np;
            lo[a] = a0;
            len[a] = a1 - a0;
        }
        let vol: f64 = len[..dim].iter().product();
        let mut s2 = 0.0;
        let mut g2 = 0.0;
        for (p, w) in ref_pts.iter().zip(&ref_w) {
            for a in 0..dim {
                x[a] = lo[a] + len[a] * p[a];
            }
            let (v, g) = f(&x);
            for &vi in &v {
                s2 += w * vol * vi * vi;
                linf = linf.max(vi.abs());
            }
            for &gi in &g {
                g2 += w * vol * gi * gi;
            }
        }
        l2.push(s2);
        h1.push(g2);
    }
    Norms {
        l2: crate::poly::pairwise_sum(&l2).sqrt(),
        h1_semi: crate::poly::pairwise_sum(&h1).sqrt(),
        linf,
    }
}

/// Uniform breakpoints `0, 1/n, ..., 1`.
pub fn uniform_breakpoints(n: usize) -> Vec<f64> {
    (0..=n).map(|k| k as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn mesh2(n: usize) -> CartesianMesh {
        CartesianMesh::new(2, n).unwrap()
    }

    #[test]
    fn mesh_invariants() {
        for n in [1, 3, 16, 64] {
            let m = mesh2(n);
            assert!((m.h() * m.n() as f64 - 1.0).abs() < 1e-14);
            assert_eq!(m.n_faces(), 2 * n * n);
        }
        let m = mesh2(4);
        assert_eq!(m.neighbor(m.cell_index(&[0, 2]), 0, -1), m.cell_index(&[3, 2]));
        assert_eq!(m.neighbor(m.cell_index(&[1, 3]), 1, 1), m.cell_index(&[1, 0]));
        assert!(CartesianMesh::new(3, 4).is_err());
    }

    #[test]
    fn reference_mass_matrix_is_identity() {
        for q in 1..=3 {
            let basis = TensorBasis::new(2, q);
            let t = BasisTable::volume(&basis, q + 2);
            for a in 0..basis.n_modes() {
                for b in 0..basis.n_modes() {
                    let m: f64 = (0..t.n_points())
                        .map(|g| t.weights[g] * t.value_row(g)[a] * t.value_row(g)[b])
                        .sum();
                    let e = if a == b { 1.0 } else { 0.0 };
                    assert!((m - e).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn projecting_constant_gives_mode_zero_only() {
        let f = l2_project(mesh2(4), TensorBasis::new(2, 2), 1, 5, |_, o| o[0] = 1.0).unwrap();
        for cell in 0..16 {
            let m = f.modes(cell, 0);
            assert!((m[0] - 1.0).abs() < 1e-14);
            assert!(m[1..].iter().all(|v| v.abs() < 1e-14));
        }
        let v = f.evaluate(&[0.123, 0.77], None).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn projection_reproduces_q1_polynomial() {
        let poly = |x: &[f64]| 0.3 + 2.0 * x[0] - 1.5 * x[1] + 0.7 * x[0] * x[1];
        let f = l2_project(mesh2(3), TensorBasis::new(2, 1), 1, 3, |x, o| o[0] = poly(x)).unwrap();
        for p in [[0.1, 0.2], [0.5, 0.9], [0.95, 0.05]] {
            let v = f.evaluate(&p, None).unwrap()[0];
            assert!((v - poly(&p)).abs() < 1e-13);
        }
    }

    #[test]
    fn projection_error_converges_at_order_two() {
        let u = |x: &[f64]| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos();
        let err = |n: usize| {
            let f = l2_project(mesh2(n), TensorBasis::new(2, 1), 1, 4, |x, o| o[0] = u(x)).unwrap();
            broken_norms_fn(2, &uniform_breakpoints(n), 5, |x| {
                let (cell, xi) = f.locate(x, None).unwrap();
                (vec![f.evaluate_in_cell(cell, &xi)[0] - u(x)], vec![])
            })
            .l2
        };
        let ratio = err(16) / err(32);
        assert!((3.6..=4.4).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn evaluation_of_projected_sine() {
        let mesh = CartesianMesh::new(1, 32).unwrap();
        let f = l2_project(mesh, TensorBasis::new(1, 2), 1, 5, |x, o| {
            o[0] = (2.0 * PI * x[0]).sin()
        })
        .unwrap();
        // 0.25 is a face for N = 32; both traces carry the endpoint projection
        // error of about 5.3e-6 (independently computed).
        for side in [Side::Minus, Side::Plus] {
            let v = f.evaluate(&[0.25], Some(side)).unwrap()[0];
            assert!((v - 1.0).abs() < 6e-6, "{v}");
        }
        let mid = f.evaluate(&[0.25 - 0.5 / 32.0], None).unwrap()[0];
        let exact = (2.0 * PI * (0.25 - 0.5 / 32.0)).sin();
        assert!((mid - exact).abs() < 1e-6);
    }

    #[test]
    fn face_points_need_a_side() {
        let mesh = CartesianMesh::new(1, 2).unwrap();
        let mut f = DgField::zeros(mesh, TensorBasis::new(1, 1), 1);
        f.modes_mut(0, 0)[0] = 1.0;
        f.modes_mut(1, 0)[0] = 3.0;
        assert!(matches!(
            f.evaluate(&[0.5], None),
            Err(Error::AmbiguousTrace { .. })
        ));
        let minus = f.evaluate(&[0.5], Some(Side::Minus)).unwrap()[0];
        let plus = f.evaluate(&[0.5], Some(Side::Plus)).unwrap()[0];
        assert_eq!(minus, 1.0);
        assert_eq!(plus, 3.0);
        assert_eq!(plus - minus, 2.0);
        // periodic face at x = 0
        let m0 = f.evaluate(&[0.0], Some(Side::Minus)).unwrap()[0];
        assert_eq!(m0, 3.0);
    }

    #[test]
    fn norms_of_simple_fields() {
        let z = DgField::zeros(mesh2(4), TensorBasis::new(2, 1), 2);
        let n = z.norms();
        assert_eq!((n.l2, n.h1_semi, n.linf), (0.0, 0.0, 0.0));
        let c = l2_project(mesh2(4), TensorBasis::new(2, 1), 1, 3, |_, o| o[0] = -2.5).unwrap();
        let n = c.norms();
        assert!((n.l2 - 2.5).abs() < 1e-13);
        assert!(n.h1_semi < 1e-12);
        let s = broken_norms_fn(2, &uniform_breakpoints(8), 6, |x| {
            (vec![(2.0 * PI * x[0]).sin()], vec![])
        });
        assert!((s.l2 - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn projected_polynomial_norms_are_exact() {
        // u = x on each cell is in Q_1; |u|_{H1} = 1 broken-wise, ||u||^2 = 1/3.
        let f = l2_project(mesh2(1), TensorBasis::new(2, 1), 1, 3, |x, o| o[0] = x[0]).unwrap();
        let n = f.norms();
        assert!((n.l2 - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((n.h1_semi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = l2_project(mesh2(3), TensorBasis::new(2, 1), 2, 3, |x, o| {
            o[0] = x[0];
            o[1] = x[1] * x[1];
        })
        .unwrap();
        let stem = dir.path().join("snap");
        f.write_snapshot(&stem, 0.25).unwrap();
        let (g, t) = DgField::read_snapshot(&stem).unwrap();
        assert_eq!(t, 0.25);
        assert_eq!(f, g);
    }

    proptest::proptest! {
        #[test]
        fn projection_is_idempotent(seed in proptest::collection::vec(-1.0f64..1.0, 36)) {
            let mesh = mesh2(3);
            let basis = TensorBasis::new(2, 1);
            let f = DgField::from_coeffs(mesh, basis, 1, seed).unwrap();
            let g = l2_project(mesh, basis, 1, 3, |x, o| {
                let (cell, xi) = f.locate(x, None).unwrap();
                o[0] = f.evaluate_in_cell(cell, &xi)[0];
            }).unwrap();
            for (a, b) in f.coeffs().iter().zip(g.coeffs()) {
                proptest::prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
