//! Gauss–Legendre rules and orthonormal Legendre polynomials on the unit interval.
//!
//! Every cell (and every filtered sub-cell) is mapped to `[0, 1]`, and the
//! modal basis is `phi_n(xi) = sqrt(2n + 1) P_n(2 xi - 1)`, which is
//! orthonormal in `L^2(0, 1)`.

use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;

/// Gauss–Legendre rule mapped to `[0, 1]`. Integrates degree `2n - 1` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(n: usize) -> Self {
        let n = NonZeroUsize::new(n.max(1)).unwrap();
        let rule = GaussLegendre::new(n);
        let mut pairs: Vec<(f64, f64)> = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrate `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let len = b - a;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(a + len * x))
            .sum::<f64>()
            * len
    }
}

/// Derivatives `0..=max_deriv` of the orthonormal Legendre polynomials
/// `phi_0..=phi_degree` at `xi` (derivatives taken with respect to `xi`).
///
/// Returned as `out[k][n]` = `d^k phi_n / dxi^k (xi)`.
pub fn legendre_derivatives(degree: usize, max_deriv: usize, xi: f64) -> Vec<Vec<f64>> {
    let t = 2.0 * xi - 1.0;
    // p[k][n] = d^k P_n / dt^k
    let mut p = vec![vec![0.0; degree + 1]; max_deriv + 1];
    p[0][0] = 1.0;
    if degree >= 1 {
        p[0][1] = t;
        if max_deriv >= 1 {
            p[1][1] = 1.0;
        }
    }
    for n in 1..degree {
        let nf = n as f64;
        p[0][n + 1] = ((2.0 * nf + 1.0) * t * p[0][n] - nf * p[0][n - 1]) / (nf + 1.0);
        for k in 1..=max_deriv {
            p[k][n + 1] = p[k][n - 1] + (2.0 * nf + 1.0) * p[k - 1][n];
        }
    }
    for (k, row) in p.iter_mut().enumerate() {
        let chain = 2f64.powi(k as i32);
        for (n, v) in row.iter_mut().enumerate() {
            *v *= chain * ((2 * n + 1) as f64).sqrt();
        }
    }
    p
}

/// Values of `phi_0..=phi_degree` at `xi`.
pub fn legendre_values(degree: usize, xi: f64) -> Vec<f64> {
    legendre_derivatives(degree, 0, xi).swap_remove(0)
}

/// Evaluate `sum_n c_n d^k phi_n(xi)`.
pub fn legendre_eval(coeffs: &[f64], deriv: usize, xi: f64) -> f64 {
    if coeffs.is_empty() {
        return 0.0;
    }
    let d = legendre_derivatives(coeffs.len() - 1, deriv, xi);
    d[deriv].iter().zip(coeffs).map(|(a, b)| a * b).sum()
}

/// Pairwise (cascade) summation; keeps reductions deterministic and accurate.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_exactness() {
        for n in 1..8 {
            let rule = GaussRule::new(n);
            for p in 0..(2 * n) {
                let got = rule.integrate(0.0, 1.0, |x| x.powi(p as i32));
                assert!((got - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "n={n} p={p}");
            }
            assert!(rule.nodes.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn orthonormal_on_unit_interval() {
        let rule = GaussRule::new(10);
        for a in 0..7 {
            for b in 0..7 {
                let m = rule.integrate(0.0, 1.0, |x| {
                    let v = legendre_values(6, x);
                    v[a] * v[b]
                });
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((m - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let x = 0.37;
        let hstep = 1e-5;
        let d = legendre_derivatives(5, 2, x);
        let vp = legendre_values(5, x + hstep);
        let vm = legendre_values(5, x - hstep);
        let v0 = legendre_values(5, x);
        for n in 0..=5 {
            let fd1 = (vp[n] - vm[n]) / (2.0 * hstep);
            let fd2 = (vp[n] - 2.0 * v0[n] + vm[n]) / (hstep * hstep);
            assert!((d[1][n] - fd1).abs() < 1e-6 * (1.0 + fd1.abs()));
            assert!((d[2][n] - fd2).abs() < 1e-3 * (1.0 + fd2.abs()));
        }
    }
}
