//! Hermite reconstruction in time from nodal values and nodal time derivatives.
//!
//! On the slab `[t_n, t_{n+1}]` the reconstruction interpolates value and
//! derivative at the `p + 2` nodes `t_{n-p}, ..., t_{n+1}`, giving degree
//! `2p + 3`. The first `p` slabs use the forward stencil `t_0, ..., t_{p+1}`.

use crate::error::{Error, Result};
use crate::mesh::DgField;
use crate::time::TrajectoryRecord;
use std::ops::Range;

/// Cardinal Hermite weights at one time.
///
/// The interpolant is `sum_j value[j] u_j + slope[j] w_j`, its time derivative
/// `sum_j d_value[j] u_j + d_slope[j] w_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteWeights {
    pub value: Vec<f64>,
    pub slope: Vec<f64>,
    pub d_value: Vec<f64>,
    pub d_slope: Vec<f64>,
}

/// Newton form on doubled nodes; returns `(P(s), P'(s))`.
fn newton_hermite(z: &[f64], data_v: &[f64], data_d: &[f64], s: f64) -> (f64, f64) {
    let n = z.len();
    // divided-difference table, column by column
    let mut col: Vec<f64> = (0..n).map(|i| data_v[i / 2]).collect();
    let mut coef = vec![col[0]; n];
    for k in 1..n {
        let mut next = vec![0.0; n - k];
        for i in 0..n - k {
            let dz = z[i + k] - z[i];
            next[i] = if dz == 0.0 {
                // only first-order repeats occur
                data_d[i / 2]
            } else {
                (col[i + 1] - col[i]) / dz
            };
        }
        coef[k] = next[0];
        col = next;
    }
    // Horner with derivative
    let mut p = coef[n - 1];
    let mut dp = 0.0;
    for k in (0..n - 1).rev() {
        dp = dp * (s - z[k]) + p;
        p = p * (s - z[k]) + coef[k];
    }
    (p, dp)
}

/// Weights of the Hermite interpolant through `nodes` evaluated at `t`.
pub fn hermite_weights(nodes: &[f64], t: f64) -> Result<HermiteWeights> {
    let k = nodes.len();
    if k == 0 {
        return Err(Error::DegenerateStencil("empty stencil".into()));
    }
    for w in nodes.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::DegenerateStencil(format!(
                "nodes must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    let t0 = nodes[0];
    let len = if k > 1 { nodes[k - 1] - t0 } else { 1.0 };
    let s_nodes: Vec<f64> = nodes.iter().map(|t| (t - t0) / len).collect();
    let z: Vec<f64> = s_nodes.iter().flat_map(|&s| [s, s]).collect();
    let s = (t - t0) / len;
    let mut out = HermiteWeights {
        value: vec![0.0; k],
        slope: vec![0.0; k],
        d_value: vec![0.0; k],
        d_slope: vec![0.0; k],
    };
    let zero = vec![0.0; k];
    let mut unit = vec![0.0; k];
    for j in 0..k {
        unit[j] = 1.0;
        let (p, dp) = newton_hermite(&z, &unit, &zero, s);
        out.value[j] = p;
        out.d_value[j] = dp / len;
        // derivative data in s units is w * len
        let (p, dp) = newton_hermite(&z, &zero, &unit, s);
        out.slope[j] = p * len;
        out.d_slope[j] = dp;
        unit[j] = 0.0;
    }
    Ok(out)
}

/// History depth used with polynomial degree `q`: degree-3 reconstruction for
/// `q = 1`, degree 5 for `q = 2`.
pub fn history_depth(q: usize) -> usize {
    q.saturating_sub(1)
}

/// Node indices entering slab `n` (between nodes `n` and `n + 1`).
pub fn slab_stencil(n: usize, n_nodes: usize, p: usize) -> Result<Range<usize>> {
    if n_nodes < p + 2 {
        return Err(Error::DegenerateStencil(format!(
            "history depth {p} needs at least {} time nodes, got {n_nodes}",
            p + 2
        )));
    }
    if n + 1 >= n_nodes {
        return Err(Error::InvalidArgument(format!("slab {n} out of range")));
    }
    let start = n.saturating_sub(p);
    Ok(start..start + p + 2)
}

/// Linear combination `sum_j a[j] u_j + b[j] w_j` of dG fields.
pub fn combine(values: &[&DgField], derivs: &[&DgField], a: &[f64], b: &[f64]) -> DgField {
    let mut out = values[0].clone();
    out.scale(a[0]);
    out.axpy(b[0], derivs[0]);
    for j in 1..values.len() {
        out.axpy(a[j], values[j]);
        out.axpy(b[j], derivs[j]);
    }
    out
}

/// Piecewise-in-time Hermite reconstruction `u_h^t` over a full trajectory.
#[derive(Debug, Clone)]
pub struct TemporalReconstruction {
    times: Vec<f64>,
    values: Vec<DgField>,
    derivatives: Vec<DgField>,
    p: usize,
}

impl TemporalReconstruction {
    pub fn new(times: Vec<f64>, values: Vec<DgField>, derivatives: Vec<DgField>, p: usize) -> Result<Self> {
        if times.len() != values.len() || times.len() != derivatives.len() {
            return Err(Error::InvalidArgument("node data lengths differ".into()));
        }
        slab_stencil(0, times.len(), p)?;
        for w in times.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::DegenerateStencil(format!("repeated time node {}", w[0])));
            }
        }
        Ok(Self {
            times,
            values,
            derivatives,
            p,
        })
    }

    pub fn history_depth(&self) -> usize {
        self.p
    }

    pub fn degree(&self) -> usize {
        2 * self.p + 3
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_slabs(&self) -> usize {
        self.times.len() - 1
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Slab containing `t` (right-continuous, the last slab is closed).
    pub fn slab_of(&self, t: f64) -> Result<usize> {
        let (t0, t1) = (self.times[0], self.final_time());
        if !(t >= t0 && t <= t1) {
            return Err(Error::InvalidArgument(format!("time {t} outside [{t0}, {t1}]")));
        }
        let k = self.times.partition_point(|&s| s <= t);
        Ok(k.saturating_sub(1).min(self.n_slabs() - 1))
    }

    pub fn stencil(&self, slab: usize) -> Result<Range<usize>> {
        slab_stencil(slab, self.times.len(), self.p)
    }

    pub fn weights(&self, slab: usize, t: f64) -> Result<(Range<usize>, HermiteWeights)> {
        let r = self.stencil(slab)?;
        let w = hermite_weights(&self.times[r.clone()], t)?;
        Ok((r, w))
    }

    /// `(u_h^t(t), d_t u_h^t(t))` using the polynomial of `slab`.
    pub fn eval_in_slab(&self, slab: usize, t: f64) -> Result<(DgField, DgField)> {
        let (r, w) = self.weights(slab, t)?;
        let vals: Vec<&DgField> = self.values[r.clone()].iter().collect();
        let ders: Vec<&DgField> = self.derivatives[r].iter().collect();
        Ok((
            combine(&vals, &ders, &w.value, &w.slope),
            combine(&vals, &ders, &w.d_value, &w.d_slope),
        ))
    }

    pub fn eval(&self, t: f64) -> Result<(DgField, DgField)> {
        self.eval_in_slab(self.slab_of(t)?, t)
    }

    /// Largest deviation from the interpolation conditions over all slabs
    /// and stencil nodes, relative to `1 + |data|`.
    pub fn interpolation_residual(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for slab in 0..self.n_slabs() {
            for j in self.stencil(slab)? {
                let (u, w) = self.eval_in_slab(slab, self.times[j])?;
                for (a, b) in u.coeffs().iter().zip(self.values[j].coeffs()) {
                    worst = worst.max((a - b).abs() / (1.0 + b.abs()));
                }
                for (a, b) in w.coeffs().iter().zip(self.derivatives[j].coeffs()) {
                    worst = worst.max((a - b).abs() / (1.0 + b.abs()));
                }
            }
        }
        Ok(worst)
    }
}

/// Reconstruction from a stored trajectory with history depth `p`.
pub fn build_temporal(record: &TrajectoryRecord, p: usize) -> Result<TemporalReconstruction> {
    TemporalReconstruction::new(
        record.times.clone(),
        record.values.clone(),
        record.derivatives.clone(),
        p,
    )
}
