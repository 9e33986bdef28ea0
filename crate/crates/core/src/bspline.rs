//! Central B-splines and SIAC kernels.
//!
//! Splines and kernel coefficients are built in exact rational arithmetic and
//! only then frozen to `f64` piecewise polynomials.

use crate::error::{Error, Result};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

type Q = BigRational;

fn q_int(v: i64) -> Q {
    Q::from_integer(BigInt::from(v))
}

fn q_frac(n: i64, d: i64) -> Q {
    Q::new(BigInt::from(n), BigInt::from(d))
}

/// Exact polynomial in monomial form, `c[k] x^k`.
fn poly_eval(c: &[Q], x: &Q) -> Q {
    c.iter().rev().fold(Q::zero(), |acc, a| acc * x + a)
}

/// Coefficients of `p(x + s)`.
fn poly_shift(c: &[Q], s: &Q) -> Vec<Q> {
    // Horner-style Taylor shift.
    let mut out = c.to_vec();
    let n = out.len();
    for i in 0..n {
        for j in (i..n.saturating_sub(1)).rev() {
            let t = out[j + 1].clone() * s;
            out[j] += t;
        }
    }
    out
}

/// Antiderivative vanishing at 0.
fn poly_integrate(c: &[Q]) -> Vec<Q> {
    let mut out = vec![Q::zero()];
    for (k, a) in c.iter().enumerate() {
        out.push(a / q_int(k as i64 + 1));
    }
    out
}

fn poly_sub(a: &[Q], b: &[Q]) -> Vec<Q> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| {
            a.get(k).cloned().unwrap_or_else(Q::zero) - b.get(k).cloned().unwrap_or_else(Q::zero)
        })
        .collect()
}

/// Exact piecewise polynomial with global monomial coefficients per piece.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalPiecewise {
    pub breakpoints: Vec<Q>,
    pub pieces: Vec<Vec<Q>>,
}

impl RationalPiecewise {
    pub fn eval(&self, x: &Q) -> Q {
        let n = self.pieces.len();
        if x < &self.breakpoints[0] || x > &self.breakpoints[n] {
            return Q::zero();
        }
        let k = (0..n)
            .find(|&k| x < &self.breakpoints[k + 1])
            .unwrap_or(n - 1);
        poly_eval(&self.pieces[k], x)
    }

    /// Running antiderivative on each piece and the accumulated constants.
    fn antiderivative(&self) -> (Vec<Vec<Q>>, Vec<Q>) {
        let anti: Vec<Vec<Q>> = self.pieces.iter().map(|p| poly_integrate(p)).collect();
        let mut consts = vec![Q::zero()];
        for (k, a) in anti.iter().enumerate() {
            let inc = poly_eval(a, &self.breakpoints[k + 1]) - poly_eval(a, &self.breakpoints[k]);
            let next = consts[k].clone() + inc;
            consts.push(next);
        }
        (anti, consts)
    }

    pub fn integral(&self) -> Q {
        self.antiderivative().1.pop().unwrap()
    }

    /// `int psi(z) z^k dz`.
    pub fn moment(&self, k: usize) -> Q {
        let mut total = Q::zero();
        for (j, p) in self.pieces.iter().enumerate() {
            let mut shifted = vec![Q::zero(); k];
            shifted.extend(p.iter().cloned());
            let a = poly_integrate(&shifted);
            total += poly_eval(&a, &self.breakpoints[j + 1]) - poly_eval(&a, &self.breakpoints[j]);
        }
        total
    }

    /// Freeze to doubles, re-expanding each piece about its left breakpoint.
    pub fn to_f64(&self) -> PiecewisePoly1D {
        let pieces = self
            .pieces
            .iter()
            .zip(&self.breakpoints)
            .map(|(p, b)| {
                poly_shift(p, b)
                    .iter()
                    .map(|c| c.to_f64().unwrap_or(f64::NAN))
                    .collect()
            })
            .collect();
        PiecewisePoly1D {
            breakpoints: self
                .breakpoints
                .iter()
                .map(|b| b.to_f64().unwrap_or(f64::NAN))
                .collect(),
            pieces,
        }
    }
}

/// Exact central B-spline of order `ell` (degree `ell - 1`, support `[-ell/2, ell/2]`).
pub fn central_bspline_exact(ell: usize) -> Result<RationalPiecewise> {
    if ell < 1 {
        return Err(Error::InvalidArgument("B-spline order must be at least 1".into()));
    }
    let half = q_frac(1, 2);
    let mut psi = RationalPiecewise {
        breakpoints: vec![-half.clone(), half.clone()],
        pieces: vec![vec![Q::one()]],
    };
    for order in 1..ell {
        // psi_{order+1}(x) = Psi(x + 1/2) - Psi(x - 1/2)
        let (anti, consts) = psi.antiderivative();
        let new_order = order + 1;
        let lo = q_frac(-(new_order as i64), 2);
        let breakpoints: Vec<Q> = (0..=new_order).map(|k| lo.clone() + q_int(k as i64)).collect();
        let mut pieces = Vec::with_capacity(new_order);
        for k in 0..new_order {
            let mid = (breakpoints[k].clone() + breakpoints[k + 1].clone()) / q_int(2);
            let upper = branch(&psi, &anti, &consts, &(mid.clone() + half.clone()), &half);
            let lower = branch(&psi, &anti, &consts, &(mid - half.clone()), &(-half.clone()));
            pieces.push(poly_sub(&upper, &lower));
        }
        psi = RationalPiecewise { breakpoints, pieces };
    }
    Ok(psi)
}

/// Polynomial in `x` equal to `Psi(x + shift)` near the sample point `y = x + shift`.
fn branch(psi: &RationalPiecewise, anti: &[Vec<Q>], consts: &[Q], y: &Q, shift: &Q) -> Vec<Q> {
    let n = psi.pieces.len();
    if y <= &psi.breakpoints[0] {
        return vec![Q::zero()];
    }
    if y >= &psi.breakpoints[n] {
        return vec![consts[n].clone()];
    }
    let k = (0..n).find(|&k| y < &psi.breakpoints[k + 1]).unwrap();
    let mut p = anti[k].clone();
    p[0] += consts[k].clone() - poly_eval(&anti[k], &psi.breakpoints[k]);
    poly_shift(&p, shift)
}

/// Central B-spline of order `ell` as a double-precision piecewise polynomial.
pub fn central_bspline(ell: usize) -> Result<PiecewisePoly1D> {
    Ok(central_bspline_exact(ell)?.to_f64())
}

fn binomial(n: usize, k: usize) -> Q {
    let mut r = Q::one();
    for i in 0..k {
        r = r * q_int((n - i) as i64) / q_int(i as i64 + 1);
    }
    r
}

/// Exact Gaussian elimination with partial pivoting on nonzero entries.
fn solve_exact(mut a: Vec<Vec<Q>>, mut b: Vec<Q>) -> Result<Vec<Q>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .filter(|&r| !a[r][col].is_zero())
            .max_by(|&r, &s| a[r][col].abs().cmp(&a[s][col].abs()))
            .ok_or_else(|| Error::Internal("singular kernel moment system".into()))?;
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone() / a[col][col].clone();
            for c in col..n {
                let t = f.clone() * a[col][c].clone();
                a[r][c] -= t;
            }
            let t = f * b[col].clone();
            b[r] -= t;
        }
    }
    let mut x = vec![Q::zero(); n];
    for r in (0..n).rev() {
        let mut s = b[r].clone();
        for c in r + 1..n {
            s -= a[r][c].clone() * x[c].clone();
        }
        x[r] = s / a[r][r].clone();
    }
    Ok(x)
}

/// Coefficients `c_0..c_{2q}` of `sum_g c_g psi^(r)(x - (g - q))` reproducing
/// polynomials of degree `<= 2q` by convolution.
pub fn kernel_coefficients_exact(q: usize, r: usize) -> Result<Vec<Q>> {
    if q < 1 {
        return Err(Error::InvalidArgument("kernel needs q >= 1".into()));
    }
    let psi = central_bspline_exact(r)?;
    let n = 2 * q + 1;
    let mu: Vec<Q> = (0..n).map(|k| psi.moment(k)).collect();
    // int psi(z - s) z^k dz = sum_j C(k,j) s^(k-j) mu_j
    let mut a = vec![vec![Q::zero(); n]; n];
    for (k, row) in a.iter_mut().enumerate() {
        for (g, entry) in row.iter_mut().enumerate() {
            let s = q_int(g as i64 - q as i64);
            let mut v = Q::zero();
            let mut spow = Q::one();
            for j in (0..=k).rev() {
                v += binomial(k, j) * spow.clone() * mu[j].clone();
                spow *= s.clone();
            }
            *entry = v;
        }
    }
    let mut rhs = vec![Q::zero(); n];
    rhs[0] = Q::one();
    solve_exact(a, rhs)
}

/// Main-kernel coefficients (`r = q + 1`) frozen to doubles.
pub fn kernel_coefficients(q: usize) -> Result<Vec<f64>> {
    Ok(kernel_coefficients_exact(q, q + 1)?
        .iter()
        .map(|c| c.to_f64().unwrap_or(f64::NAN))
        .collect())
}

/// Double-precision piecewise polynomial; each piece is stored in powers of
/// `x - breakpoints[k]`. Zero outside `[breakpoints[0], breakpoints[last]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePoly1D {
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<Vec<f64>>,
}

impl PiecewisePoly1D {
    pub fn support(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().unwrap())
    }

    pub fn degree(&self) -> usize {
        self.pieces.iter().map(|p| p.len().saturating_sub(1)).max().unwrap_or(0)
    }

    fn piece_deriv(p: &[f64], deriv: usize, t: f64) -> f64 {
        let mut acc = 0.0;
        for k in (deriv..p.len()).rev() {
            let mut f = 1.0;
            for j in 0..deriv {
                f *= (k - j) as f64;
            }
            acc = acc * t + f * p[k];
        }
        acc
    }

    /// Derivative of order `deriv` at `x` taken from the piece containing `x`
    /// (right-continuous; left-continuous at the right end of the support).
    pub fn eval_deriv(&self, x: f64, deriv: usize) -> f64 {
        let (lo, hi) = self.support();
        if x < lo || x > hi {
            return 0.0;
        }
        let n = self.pieces.len();
        let k = match self.breakpoints[1..].iter().position(|&b| x < b) {
            Some(k) => k,
            None => n - 1,
        };
        Self::piece_deriv(&self.pieces[k], deriv, x - self.breakpoints[k])
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_deriv(x, 0)
    }

    /// One-sided derivative limits `(left, right)` at breakpoint index `k`.
    pub fn one_sided(&self, k: usize, deriv: usize) -> (f64, f64) {
        let n = self.pieces.len();
        let left = if k == 0 {
            0.0
        } else {
            let p = &self.pieces[k - 1];
            Self::piece_deriv(p, deriv, self.breakpoints[k] - self.breakpoints[k - 1])
        };
        let right = if k >= n {
            0.0
        } else {
            Self::piece_deriv(&self.pieces[k], deriv, 0.0)
        };
        (left, right)
    }

    pub fn integral(&self) -> f64 {
        self.pieces
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let len = self.breakpoints[k + 1] - self.breakpoints[k];
                p.iter()
                    .enumerate()
                    .map(|(j, c)| c * len.powi(j as i32 + 1) / (j as f64 + 1.0))
                    .sum::<f64>()
            })
            .sum()
    }

    /// `h^{-1} P(x / h)`.
    pub fn scaled(&self, h: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.iter().map(|b| b * h).collect(),
            pieces: self
                .pieces
                .iter()
                .map(|p| {
                    p.iter()
                        .enumerate()
                        .map(|(j, c)| c / h.powi(j as i32 + 1))
                        .collect()
                })
                .collect(),
        }
    }
}

/// One-dimensional SIAC kernel `sum_g c_g psi^(r)(x - (g - q))`, optionally scaled by `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiacKernel {
    q: usize,
    r: usize,
    h: f64,
    coeffs_exact: Vec<Q>,
    coeffs: Vec<f64>,
    /// Unscaled kernel.
    poly: PiecewisePoly1D,
}

impl SiacKernel {
    /// Kernel built from `2q + 1` B-splines of order `r`.
    pub fn new(q: usize, r: usize) -> Result<Self> {
        if r < 1 {
            return Err(Error::InvalidArgument("spline order must be at least 1".into()));
        }
        let coeffs_exact = kernel_coefficients_exact(q, r)?;
        let psi = central_bspline_exact(r)?;
        let half_width = q_frac((2 * q + r) as i64, 2);
        let lo = -half_width;
        let n_pieces = 2 * q + r;
        let breakpoints: Vec<Q> = (0..=n_pieces).map(|k| lo.clone() + q_int(k as i64)).collect();
        let mut pieces = Vec::with_capacity(n_pieces);
        for k in 0..n_pieces {
            let mid = (breakpoints[k].clone() + breakpoints[k + 1].clone()) / q_int(2);
            let mut acc: Vec<Q> = vec![Q::zero(); r];
            for (g, c) in coeffs_exact.iter().enumerate() {
                let s = q_int(g as i64 - q as i64);
                let y = mid.clone() - s.clone();
                let npsi = psi.pieces.len();
                if y <= psi.breakpoints[0] || y >= psi.breakpoints[npsi] {
                    continue;
                }
                let j = (0..npsi).find(|&j| y < psi.breakpoints[j + 1]).unwrap();
                let shifted = poly_shift(&psi.pieces[j], &(-s));
                for (a, b) in acc.iter_mut().zip(shifted) {
                    *a += c.clone() * b;
                }
            }
            pieces.push(acc);
        }
        let exact = RationalPiecewise { breakpoints, pieces };
        Ok(Self {
            q,
            r,
            h: 1.0,
            coeffs: coeffs_exact
                .iter()
                .map(|c| c.to_f64().unwrap_or(f64::NAN))
                .collect(),
            coeffs_exact,
            poly: exact.to_f64(),
        })
    }

    /// Main kernel with B-spline order `q + 1`.
    pub fn main(q: usize) -> Result<Self> {
        Self::new(q, q + 1)
    }

    /// Scaled kernel `h^{-1} K(x / h)`; `order_override` replaces the spline order.
    pub fn scaled(q: usize, h: f64, order_override: Option<usize>) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("kernel scaling must be positive, got {h}")));
        }
        let mut k = Self::new(q, order_override.unwrap_or(q + 1))?;
        k.h = h;
        Ok(k)
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn spline_order(&self) -> usize {
        self.r
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Exact coefficients rendered as `num/den` strings.
    pub fn coefficients_exact(&self) -> Vec<String> {
        self.coeffs_exact.iter().map(|c| c.to_string()).collect()
    }

    /// Kernel on the reference scale (`h = 1`).
    pub fn reference(&self) -> &PiecewisePoly1D {
        &self.poly
    }

    /// Kernel on the physical scale.
    pub fn piecewise(&self) -> PiecewisePoly1D {
        self.poly.scaled(self.h)
    }

    /// Support half-width `(2q + r) h / 2`.
    pub fn half_width(&self) -> f64 {
        0.5 * (2 * self.q + self.r) as f64 * self.h
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.poly.eval(x / self.h) / self.h
    }

    /// Continuity class `C^{r-2}`; `None` for the discontinuous order-1 case.
    pub fn smoothness(&self) -> Option<usize> {
        self.r.checked_sub(2)
    }

    pub fn dump(&self) -> KernelDump {
        let p = self.piecewise();
        KernelDump {
            q: self.q,
            spline_order: self.r,
            h: self.h,
            coefficients: self.coeffs.clone(),
            coefficients_exact: self.coefficients_exact(),
            breakpoints: p.breakpoints,
            pieces: p.pieces,
            piece_basis: "powers of (x - left breakpoint)".into(),
        }
    }
}

/// JSON dump of a kernel for cross-checking.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelDump {
    pub q: usize,
    pub spline_order: usize,
    pub h: f64,
    pub coefficients: Vec<f64>,
    pub coefficients_exact: Vec<String>,
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<Vec<f64>>,
    pub piece_basis: String,
}

/// Tensor-product kernel `prod_i K_i(x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorKernel {
    pub factors: Vec<SiacKernel>,
}

impl TensorKernel {
    /// Main kernel in every direction.
    pub fn main(q: usize, h: f64, dim: usize) -> Result<Self> {
        let k = SiacKernel::scaled(q, h, None)?;
        Ok(Self {
            factors: vec![k; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.factors.iter().zip(x).map(|(k, &xi)| k.eval(xi)).product()
    }
}

/// Order `q + 2` along axis `beta` (0-based), order `q + 1` elsewhere.
pub fn directional_kernel(q: usize, h: f64, beta: usize, dim: usize) -> Result<TensorKernel> {
    if beta >= dim {
        return Err(Error::InvalidArgument(format!(
            "direction {beta} out of range for dimension {dim}"
        )));
    }
    let main = SiacKernel::scaled(q, h, None)?;
    let aux = SiacKernel::scaled(q, h, Some(q + 2))?;
    let factors = (0..dim)
        .map(|a| if a == beta { aux.clone() } else { main.clone() })
        .collect();
    Ok(TensorKernel { factors })
}
