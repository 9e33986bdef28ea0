//! Problem definitions: fluxes, diffusion, exact solutions and sources.
//!
//! The three shipped problems are registered under `"linadv"`, `"burgers"` and
//! `"psystem"`. All of them are two-dimensional and their exact solutions are
//! products of travelling sines and cosines, which [`TrigSolution`] evaluates
//! together with all derivatives the pipeline needs.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Which stability estimate the problem's bound is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    LinearScalar,
    NonlinearScalar,
    PSystem,
}

/// Interval constraint on one state component.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StateBox {
    pub component: usize,
    pub lo: f64,
    pub hi: f64,
}

impl StateBox {
    /// Same center, half-width scaled by `factor`.
    pub fn inflated(&self, factor: f64) -> Self {
        let c = 0.5 * (self.lo + self.hi);
        let r = 0.5 * (self.hi - self.lo) * factor;
        Self {
            component: self.component,
            lo: c - r,
            hi: c + r,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }
}

/// Exact solution and derivatives at one space–time point (`d = 2`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSample {
    pub u: Vec<f64>,
    pub ut: Vec<f64>,
    /// `grad[c * 2 + alpha]`
    pub grad: Vec<f64>,
    /// `hess[(c * 2 + alpha) * 2 + beta]`
    pub hess: Vec<f64>,
}

/// Exact data on a tensor grid `xs x ys` (x fastest), point-major.
#[derive(Debug, Clone, Default)]
pub struct ExactGrid {
    pub u: Vec<f64>,
    /// `grad[(point * m + c) * 2 + alpha]`, filled when requested
    pub grad: Vec<f64>,
    /// filled when requested
    pub source: Vec<f64>,
}

/// Entropy data of the pressure law `p(tau) = tau^-2`, with `W' = -p`, i.e. `W = 1/tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureEntropy {
    pub tau_box: StateBox,
}

impl PressureEntropy {
    pub fn w(&self, tau: f64) -> f64 {
        1.0 / tau
    }

    pub fn dw(&self, tau: f64) -> f64 {
        -1.0 / (tau * tau)
    }

    pub fn d2w(&self, tau: f64) -> f64 {
        2.0 / (tau * tau * tau)
    }

    pub fn d3w(&self, tau: f64) -> f64 {
        -6.0 / (tau * tau * tau * tau)
    }

    /// `W(a | b) = W(a) - W(b) - W'(b)(a - b)`.
    pub fn relative(&self, a: f64, b: f64) -> f64 {
        self.w(a) - self.w(b) - self.dw(b) * (a - b)
    }

    /// `min_K W''`; `W''` is decreasing, so attained at the upper end.
    pub fn c_w(&self) -> f64 {
        self.d2w(self.tau_box.hi)
    }

    /// `max_K |W'''|`; attained at the lower end.
    pub fn big_c_w(&self) -> f64 {
        self.d3w(self.tau_box.lo).abs()
    }
}

/// Interface the operators, reconstruction and estimators need from a problem.
pub trait ProblemDefinition: Send + Sync {
    fn id(&self) -> &str;
    fn n_components(&self) -> usize;
    fn dim(&self) -> usize {
        2
    }
    fn eps(&self) -> f64;
    fn final_time(&self) -> f64;
    /// Maximum advective speed used by the time-step rule.
    fn lambda_max(&self) -> f64;

    fn flux(&self, u: &[f64], alpha: usize, out: &mut [f64]);
    /// Row-major `m x m` Jacobian `d f_alpha,i / d u_j`.
    fn flux_jacobian(&self, u: &[f64], alpha: usize, out: &mut [f64]);
    /// Local wave-speed bound for the Rusanov flux.
    fn wave_speed(&self, a: &[f64], b: &[f64], normal: &[f64]) -> f64;

    /// Row-major `m x m` diffusion block `A_{alpha beta}(u)`.
    fn diffusion(&self, u: &[f64], alpha: usize, beta: usize, out: &mut [f64]);
    fn diffusion_is_constant(&self) -> bool {
        true
    }

    /// First component outside the admissible set, if any.
    fn inadmissible_component(&self, _u: &[f64]) -> Option<usize> {
        None
    }
    /// Compact state box used by the stability constants.
    fn state_box(&self) -> Option<StateBox> {
        None
    }

    fn exact(&self, t: f64, x: &[f64]) -> ExactSample;
    /// Exact values, optionally gradients and sources, on a tensor grid.
    fn exact_grid(
        &self,
        t: f64,
        xs: &[f64],
        ys: &[f64],
        want_grad: bool,
        want_source: bool,
        out: &mut ExactGrid,
    ) {
        let m = self.n_components();
        let n = xs.len() * ys.len();
        out.u.resize(n * m, 0.0);
        out.grad.resize(if want_grad { n * m * 2 } else { 0 }, 0.0);
        out.source.resize(if want_source { n * m } else { 0 }, 0.0);
        let mut s = vec![0.0; m];
        for (iy, &y) in ys.iter().enumerate() {
            for (ix, &x) in xs.iter().enumerate() {
                let p = iy * xs.len() + ix;
                let e = self.exact(t, &[x, y]);
                out.u[p * m..(p + 1) * m].copy_from_slice(&e.u);
                if want_grad {
                    out.grad[p * m * 2..(p + 1) * m * 2].copy_from_slice(&e.grad);
                }
                if want_source {
                    self.source(t, &[x, y], &mut s);
                    out.source[p * m..(p + 1) * m].copy_from_slice(&s);
                }
            }
        }
    }

    /// Manufactured source `s = u_t + sum_a d_a f_a(u) - eps sum_ab d_a (A_ab d_b u)`
    /// for constant `A`.
    fn source(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let e = self.exact(t, x);
        source_from_sample(self, &e, out);
    }
    fn has_source(&self) -> bool;

    fn estimator(&self) -> EstimatorKind;
    /// Components entering the H1-seminorm error column.
    fn h1_components(&self) -> Vec<usize> {
        (0..self.n_components()).collect()
    }
    /// `sup_K |f_alpha''|` (scalar problems).
    fn flux_second_derivative_sup(&self) -> f64 {
        0.0
    }
    /// `sup_K |A'|` (scalar problems).
    fn diffusion_derivative_sup(&self) -> f64 {
        0.0
    }
    fn pressure_entropy(&self) -> Option<PressureEntropy> {
        None
    }
}

/// Chain-rule source evaluation from an exact sample (constant diffusion).
pub fn source_from_sample<P: ProblemDefinition + ?Sized>(p: &P, e: &ExactSample, out: &mut [f64]) {
    let m = p.n_components();
    let mut jac = vec![0.0; m * m];
    let mut a = vec![0.0; m * m];
    out.copy_from_slice(&e.ut);
    for alpha in 0..2 {
        p.flux_jacobian(&e.u, alpha, &mut jac);
        for i in 0..m {
            for j in 0..m {
                out[i] += jac[i * m + j] * e.grad[j * 2 + alpha];
            }
        }
    }
    let eps = p.eps();
    if eps != 0.0 {
        for alpha in 0..2 {
            for beta in 0..2 {
                p.diffusion(&e.u, alpha, beta, &mut a);
                for i in 0..m {
                    for j in 0..m {
                        out[i] -= eps * a[i * m + j] * e.hess[(j * 2 + alpha) * 2 + beta];
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trig {
    Sin,
    Cos,
}

/// One component `c0 + amp e^{-decay t} F(2 pi (x - ax t)) G(2 pi (y - ay t))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrigMode {
    pub c0: f64,
    pub amp: f64,
    pub decay: f64,
    pub fx: Trig,
    pub fy: Trig,
}

/// Product-of-travelling-waves exact solution shared by all shipped problems.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigSolution {
    pub ax: f64,
    pub ay: f64,
    pub modes: Vec<TrigMode>,
}

/// `(value, derivative)` of `F` given `(sin, cos)` of its argument.
#[inline]
fn trig_pair(f: Trig, s: f64, c: f64) -> (f64, f64) {
    match f {
        Trig::Sin => (s, c),
        Trig::Cos => (c, -s),
    }
}

impl TrigSolution {
    fn phases(&self, t: f64, x: f64, y: f64) -> (f64, f64) {
        (2.0 * PI * (x - self.ax * t), 2.0 * PI * (y - self.ay * t))
    }

    pub fn sample(&self, t: f64, x: &[f64]) -> ExactSample {
        let (px, py) = self.phases(t, x[0], x[1]);
        let (sx, cx) = px.sin_cos();
        let (sy, cy) = py.sin_cos();
        let m = self.modes.len();
        let mut e = ExactSample {
            u: vec![0.0; m],
            ut: vec![0.0; m],
            grad: vec![0.0; 2 * m],
            hess: vec![0.0; 4 * m],
        };
        let k = 2.0 * PI;
        for (c, md) in self.modes.iter().enumerate() {
            let a = md.amp * (-md.decay * t).exp();
            let (f, df) = trig_pair(md.fx, sx, cx);
            let (g, dg) = trig_pair(md.fy, sy, cy);
            e.u[c] = md.c0 + a * f * g;
            e.ut[c] = -md.decay * a * f * g - k * a * (self.ax * df * g + self.ay * f * dg);
            e.grad[c * 2] = k * a * df * g;
            e.grad[c * 2 + 1] = k * a * f * dg;
            e.hess[c * 4] = -k * k * a * f * g;
            e.hess[c * 4 + 1] = k * k * a * df * dg;
            e.hess[c * 4 + 2] = k * k * a * df * dg;
            e.hess[c * 4 + 3] = -k * k * a * f * g;
        }
        e
    }

    /// Sines/cosines of the two phases on 1D grids at time `t`.
    pub fn phase_tables(&self, t: f64, xs: &[f64], ys: &[f64]) -> PhaseTables {
        let sc = |pts: &[f64], speed: f64| -> Vec<(f64, f64)> {
            pts.iter()
                .map(|&p| (2.0 * PI * (p - speed * t)).sin_cos())
                .collect()
        };
        PhaseTables {
            x: sc(xs, self.ax),
            y: sc(ys, self.ay),
        }
    }

    /// Values and physical gradients of component `c` from phase sines/cosines.
    #[inline]
    pub fn value_grad(&self, c: usize, t: f64, sx: (f64, f64), sy: (f64, f64)) -> (f64, f64, f64) {
        let md = &self.modes[c];
        let a = if md.decay == 0.0 {
            md.amp
        } else {
            md.amp * (-md.decay * t).exp()
        };
        let (f, df) = trig_pair(md.fx, sx.0, sx.1);
        let (g, dg) = trig_pair(md.fy, sy.0, sy.1);
        let k = 2.0 * PI;
        (md.c0 + a * f * g, k * a * df * g, k * a * f * dg)
    }
}

#[derive(Debug, Clone, Default)]
pub struct PhaseTables {
    pub x: Vec<(f64, f64)>,
    pub y: Vec<(f64, f64)>,
}

/// Grid evaluation through phase tables; sources use `source_at`.
fn trig_grid<P: ProblemDefinition + ?Sized>(
    p: &P,
    sol: &TrigSolution,
    t: f64,
    xs: &[f64],
    ys: &[f64],
    want_grad: bool,
    want_source: bool,
    out: &mut ExactGrid,
    source_at: impl Fn(&[f64], &[f64], &mut [f64]),
) {
    let m = p.n_components();
    let n = xs.len() * ys.len();
    out.u.resize(n * m, 0.0);
    out.grad.resize(if want_grad || want_source { n * m * 2 } else { 0 }, 0.0);
    out.source.resize(if want_source { n * m } else { 0 }, 0.0);
    let tabs = sol.phase_tables(t, xs, ys);
    let mut u = vec![0.0; m];
    let mut g = vec![0.0; 2 * m];
    for (iy, &sy) in tabs.y.iter().enumerate() {
        for (ix, &sx) in tabs.x.iter().enumerate() {
            let pt = iy * xs.len() + ix;
            for c in 0..m {
                let (v, gx, gy) = sol.value_grad(c, t, sx, sy);
                u[c] = v;
                g[2 * c] = gx;
                g[2 * c + 1] = gy;
            }
            out.u[pt * m..(pt + 1) * m].copy_from_slice(&u);
            if want_grad || want_source {
                out.grad[pt * m * 2..(pt + 1) * m * 2].copy_from_slice(&g);
            }
            if want_source {
                source_at(&u, &g, &mut out.source[pt * m..(pt + 1) * m]);
            }
        }
    }
    let _ = p;
}

/// `u_t + div(a u) = eps Laplace(u)` with `a = (1, 0.5)`, `T = 1`.
#[derive(Debug, Clone)]
pub struct LinearAdvectionDiffusion {
    pub a: [f64; 2],
    pub eps: f64,
    pub t_final: f64,
    sol: TrigSolution,
}

impl LinearAdvectionDiffusion {
    pub fn new(eps: f64) -> Self {
        Self {
            a: [1.0, 0.5],
            eps,
            t_final: 1.0,
            sol: TrigSolution {
                ax: 1.0,
                ay: 0.5,
                modes: vec![TrigMode {
                    c0: 0.0,
                    amp: 1.0,
                    decay: 8.0 * eps * PI * PI,
                    fx: Trig::Sin,
                    fy: Trig::Cos,
                }],
            },
        }
    }
}

impl ProblemDefinition for LinearAdvectionDiffusion {
    fn id(&self) -> &str {
        "linadv"
    }
    fn n_components(&self) -> usize {
        1
    }
    fn eps(&self) -> f64 {
        self.eps
    }
    fn final_time(&self) -> f64 {
        self.t_final
    }
    fn lambda_max(&self) -> f64 {
        1.0
    }
    fn flux(&self, u: &[f64], alpha: usize, out: &mut [f64]) {
        out[0] = self.a[alpha] * u[0];
    }
    fn flux_jacobian(&self, _u: &[f64], alpha: usize, out: &mut [f64]) {
        out[0] = self.a[alpha];
    }
    fn wave_speed(&self, _a: &[f64], _b: &[f64], n: &[f64]) -> f64 {
        (self.a[0] * n[0] + self.a[1] * n[1]).abs()
    }
    fn diffusion(&self, _u: &[f64], alpha: usize, beta: usize, out: &mut [f64]) {
        out[0] = if alpha == beta { 1.0 } else { 0.0 };
    }
    fn exact(&self, t: f64, x: &[f64]) -> ExactSample {
        self.sol.sample(t, x)
    }
    fn exact_grid(
        &self,
        t: f64,
        xs: &[f64],
        ys: &[f64],
        want_grad: bool,
        want_source: bool,
        out: &mut ExactGrid,
    ) {
        trig_grid(self, &self.sol, t, xs, ys, want_grad, want_source, out, |_, _, s| {
            s[0] = 0.0
        });
    }
    fn source(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn has_source(&self) -> bool {
        false
    }
    fn estimator(&self) -> EstimatorKind {
        EstimatorKind::LinearScalar
    }
}

/// `u_t + d_x(u^2/2) + d_y(u^2/2) = eps Laplace(u) + s`, `T = 0.1`.
#[derive(Debug, Clone)]
pub struct ViscousBurgers {
    pub eps: f64,
    pub t_final: f64,
    sol: TrigSolution,
}

impl ViscousBurgers {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            t_final: 0.1,
            sol: TrigSolution {
                ax: 0.7,
                ay: -0.4,
                modes: vec![TrigMode {
                    c0: 2.0,
                    amp: 0.2,
                    decay: 0.0,
                    fx: Trig::Sin,
                    fy: Trig::Cos,
                }],
            },
        }
    }

    /// `s = u_t + u (u_x + u_y) - eps (u_xx + u_yy)` with
    /// `u_t = -0.7 u_x + 0.4 u_y` and `Laplace(u) = -8 pi^2 (u - 2)`.
    #[inline]
    fn source_from(&self, u: f64, ux: f64, uy: f64) -> f64 {
        -0.7 * ux + 0.4 * uy + u * (ux + uy) + self.eps * 8.0 * PI * PI * (u - 2.0)
    }
}

impl ProblemDefinition for ViscousBurgers {
    fn id(&self) -> &str {
        "burgers"
    }
    fn n_components(&self) -> usize {
        1
    }
    fn eps(&self) -> f64 {
        self.eps
    }
    fn final_time(&self) -> f64 {
        self.t_final
    }
    fn lambda_max(&self) -> f64 {
        2.2
    }
    fn flux(&self, u: &[f64], _alpha: usize, out: &mut [f64]) {
        out[0] = 0.5 * u[0] * u[0];
    }
    fn flux_jacobian(&self, u: &[f64], _alpha: usize, out: &mut [f64]) {
        out[0] = u[0];
    }
    fn wave_speed(&self, a: &[f64], b: &[f64], n: &[f64]) -> f64 {
        (n[0] + n[1]).abs() * a[0].abs().max(b[0].abs())
    }
    fn diffusion(&self, _u: &[f64], alpha: usize, beta: usize, out: &mut [f64]) {
        out[0] = if alpha == beta { 1.0 } else { 0.0 };
    }
    fn state_box(&self) -> Option<StateBox> {
        Some(StateBox {
            component: 0,
            lo: 1.8,
            hi: 2.2,
        })
    }
    fn exact(&self, t: f64, x: &[f64]) -> ExactSample {
        self.sol.sample(t, x)
    }
    fn exact_grid(
        &self,
        t: f64,
        xs: &[f64],
        ys: &[f64],
        want_grad: bool,
        want_source: bool,
        out: &mut ExactGrid,
    ) {
        trig_grid(self, &self.sol, t, xs, ys, want_grad, want_source, out, |u, g, s| {
            s[0] = self.source_from(u[0], g[0], g[1])
        });
    }
    fn source(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let e = self.sol.sample(t, x);
        out[0] = self.source_from(e.u[0], e.grad[0], e.grad[1]);
    }
    fn has_source(&self) -> bool {
        true
    }
    fn estimator(&self) -> EstimatorKind {
        EstimatorKind::NonlinearScalar
    }
    fn flux_second_derivative_sup(&self) -> f64 {
        1.0
    }
}

/// Diffusive p-system in `(tau, v1, v2)` with `p(tau) = tau^-2`, `T = 0.05`.
#[derive(Debug, Clone)]
pub struct DiffusivePSystem {
    pub eps: f64,
    pub t_final: f64,
    sol: TrigSolution,
}

impl DiffusivePSystem {
    pub fn new(eps: f64) -> Self {
        let mode = |c0, amp, fx, fy| TrigMode {
            c0,
            amp,
            decay: 0.0,
            fx,
            fy,
        };
        Self {
            eps,
            t_final: 0.05,
            sol: TrigSolution {
                ax: 0.3,
                ay: -0.2,
                modes: vec![
                    mode(1.0, 0.1, Trig::Sin, Trig::Cos),
                    mode(0.0, 0.2, Trig::Cos, Trig::Cos),
                    mode(0.0, -0.15, Trig::Sin, Trig::Sin),
                ],
            },
        }
    }

    pub fn pressure(tau: f64) -> f64 {
        1.0 / (tau * tau)
    }

    pub fn pressure_derivative(tau: f64) -> f64 {
        -2.0 / (tau * tau * tau)
    }

    /// Hand-derived sources. With `w_t = -0.3 w_x + 0.2 w_y` for every component and
    /// `Laplace(v_i) = -8 pi^2 v_i`:
    /// `s1 = tau_t - v1_x - v2_y`,
    /// `s2 = v1_t + p'(tau) tau_x + 8 eps pi^2 v1`,
    /// `s3 = v2_t + p'(tau) tau_y + 8 eps pi^2 v2`.
    #[inline]
    fn source_from(&self, u: &[f64], g: &[f64], s: &mut [f64]) {
        let dt = |c: usize| -0.3 * g[2 * c] + 0.2 * g[2 * c + 1];
        let dp = Self::pressure_derivative(u[0]);
        let lap = 8.0 * PI * PI * self.eps;
        s[0] = dt(0) - g[2] - g[5];
        s[1] = dt(1) + dp * g[0] + lap * u[1];
        s[2] = dt(2) + dp * g[1] + lap * u[2];
    }
}

impl ProblemDefinition for DiffusivePSystem {
    fn id(&self) -> &str {
        "psystem"
    }
    fn n_components(&self) -> usize {
        3
    }
    fn eps(&self) -> f64 {
        self.eps
    }
    fn final_time(&self) -> f64 {
        self.t_final
    }
    fn lambda_max(&self) -> f64 {
        2f64.sqrt() * 0.9f64.powf(-1.5)
    }
    fn flux(&self, u: &[f64], alpha: usize, out: &mut [f64]) {
        let p = Self::pressure(u[0]);
        out[0] = -u[1 + alpha];
        out[1] = if alpha == 0 { p } else { 0.0 };
        out[2] = if alpha == 1 { p } else { 0.0 };
    }
    fn flux_jacobian(&self, u: &[f64], alpha: usize, out: &mut [f64]) {
        out.fill(0.0);
        out[1 + alpha] = -1.0;
        out[(1 + alpha) * 3] = Self::pressure_derivative(u[0]);
    }
    fn wave_speed(&self, a: &[f64], b: &[f64], n: &[f64]) -> f64 {
        let nn = (n[0] * n[0] + n[1] * n[1]).sqrt();
        let c = |tau: f64| (-Self::pressure_derivative(tau)).sqrt();
        nn * c(a[0]).max(c(b[0]))
    }
    fn diffusion(&self, _u: &[f64], alpha: usize, beta: usize, out: &mut [f64]) {
        out.fill(0.0);
        if alpha == beta {
            out[4] = 1.0;
            out[8] = 1.0;
        }
    }
    fn inadmissible_component(&self, u: &[f64]) -> Option<usize> {
        if u[0] > 0.0 && u[0].is_finite() {
            None
        } else {
            Some(0)
        }
    }
    fn state_box(&self) -> Option<StateBox> {
        Some(StateBox {
            component: 0,
            lo: 0.9,
            hi: 1.1,
        })
    }
    fn exact(&self, t: f64, x: &[f64]) -> ExactSample {
        self.sol.sample(t, x)
    }
    fn exact_grid(
        &self,
        t: f64,
        xs: &[f64],
        ys: &[f64],
        want_grad: bool,
        want_source: bool,
        out: &mut ExactGrid,
    ) {
        trig_grid(self, &self.sol, t, xs, ys, want_grad, want_source, out, |u, g, s| {
            self.source_from(u, g, s)
        });
    }
    fn source(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let e = self.sol.sample(t, x);
        self.source_from(&e.u, &e.grad, out);
    }
    fn has_source(&self) -> bool {
        true
    }
    fn estimator(&self) -> EstimatorKind {
        EstimatorKind::PSystem
    }
    fn h1_components(&self) -> Vec<usize> {
        vec![1, 2]
    }
    fn pressure_entropy(&self) -> Option<PressureEntropy> {
        Some(PressureEntropy {
            tau_box: self.state_box().unwrap(),
        })
    }
}

/// Registry lookup by id.
pub fn problem_by_id(id: &str, eps: f64) -> Result<Box<dyn ProblemDefinition>> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!("viscosity must be finite and >= 0, got {eps}")));
    }
    match id {
        "linadv" => Ok(Box::new(LinearAdvectionDiffusion::new(eps))),
        "burgers" => Ok(Box::new(ViscousBurgers::new(eps))),
        "psystem" => Ok(Box::new(DiffusivePSystem::new(eps))),
        other => Err(Error::Config(format!(
            "unknown problem '{other}' (expected linadv, burgers or psystem)"
        ))),
    }
}

pub const PROBLEM_IDS: [&str; 3] = ["linadv", "burgers", "psystem"];

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn all(eps: f64) -> Vec<Box<dyn ProblemDefinition>> {
        PROBLEM_IDS.iter().map(|id| problem_by_id(id, eps).unwrap()).collect()
    }

    /// Residual of the PDE with all derivatives taken by central differences
    /// of the exact solution and of the flux function.
    fn fd_residual(p: &dyn ProblemDefinition, t: f64, x: [f64; 2]) -> Vec<f64> {
        let m = p.n_components();
        let h = 1e-4;
        let u = |t: f64, x: [f64; 2]| p.exact(t, &x).u;
        let mut res = vec![0.0; m];
        let up = u(t + h, x);
        let um = u(t - h, x);
        for c in 0..m {
            res[c] += (up[c] - um[c]) / (2.0 * h);
        }
        let mut fp = vec![0.0; m];
        let mut fm = vec![0.0; m];
        let mut a = vec![0.0; m * m];
        for alpha in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[alpha] += h;
            xm[alpha] -= h;
            p.flux(&u(t, xp), alpha, &mut fp);
            p.flux(&u(t, xm), alpha, &mut fm);
            for c in 0..m {
                res[c] += (fp[c] - fm[c]) / (2.0 * h);
            }
            p.diffusion(&u(t, x), alpha, alpha, &mut a);
            let u0 = u(t, x);
            let (uxp, uxm) = (u(t, xp), u(t, xm));
            for i in 0..m {
                for j in 0..m {
                    res[i] -= p.eps() * a[i * m + j] * (uxp[j] - 2.0 * u0[j] + uxm[j]) / (h * h);
                }
            }
        }
        let mut s = vec![0.0; m];
        p.source(t, &x, &mut s);
        for c in 0..m {
            res[c] -= s[c];
        }
        res
    }

    #[test]
    fn sources_agree_with_finite_differences() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for eps in [0.0, 1e-3, 0.1] {
            for p in all(eps) {
                for _ in 0..500 {
                    let t = rng.gen_range(0.0..p.final_time());
                    let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                    for r in fd_residual(p.as_ref(), t, x) {
                        // central differences of O(1e-8) accuracy at this step
                        assert!(r.abs() < 5e-6, "{} eps={eps}: residual {r}", p.id());
                    }
                }
            }
        }
    }

    #[test]
    fn hand_sources_match_chain_rule() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        for eps in [0.0, 1e-2] {
            for p in all(eps) {
                let m = p.n_components();
                for _ in 0..500 {
                    let t = rng.gen_range(0.0..1.0);
                    let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                    let mut a = vec![0.0; m];
                    let mut b = vec![0.0; m];
                    p.source(t, &x, &mut a);
                    source_from_sample(p.as_ref(), &p.exact(t, &x), &mut b);
                    for c in 0..m {
                        assert!((a[c] - b[c]).abs() < 1e-9, "{}", p.id());
                    }
                }
            }
        }
    }

    #[test]
    fn exact_derivatives_match_finite_differences() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        let h = 1e-5;
        for p in all(1e-2) {
            for _ in 0..50 {
                let t = rng.gen_range(0.0..0.5);
                let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                let e = p.exact(t, &x);
                for c in 0..p.n_components() {
                    let d = (p.exact(t + h, &x).u[c] - p.exact(t - h, &x).u[c]) / (2.0 * h);
                    assert!((d - e.ut[c]).abs() < 1e-6);
                    for a in 0..2 {
                        let mut xp = x;
                        let mut xm = x;
                        xp[a] += h;
                        xm[a] -= h;
                        let d = (p.exact(t, &xp).u[c] - p.exact(t, &xm).u[c]) / (2.0 * h);
                        assert!((d - e.grad[2 * c + a]).abs() < 1e-6);
                        for b in 0..2 {
                            let d = (p.exact(t, &xp).grad[2 * c + b] - p.exact(t, &xm).grad[2 * c + b])
                                / (2.0 * h);
                            assert!((d - e.hess[(2 * c + a) * 2 + b]).abs() < 1e-4);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn grid_evaluation_matches_pointwise() {
        let xs = [0.1, 0.35, 0.8];
        let ys = [0.05, 0.6];
        for p in all(1e-3) {
            let m = p.n_components();
            let mut g = ExactGrid::default();
            p.exact_grid(0.03, &xs, &ys, true, true, &mut g);
            let mut s = vec![0.0; m];
            for (iy, &y) in ys.iter().enumerate() {
                for (ix, &x) in xs.iter().enumerate() {
                    let pt = iy * xs.len() + ix;
                    let e = p.exact(0.03, &[x, y]);
                    p.source(0.03, &[x, y], &mut s);
                    for c in 0..m {
                        assert!((g.u[pt * m + c] - e.u[c]).abs() < 1e-14);
                        assert!((g.source[pt * m + c] - s[c]).abs() < 1e-12);
                        for a in 0..2 {
                            assert!((g.grad[(pt * m + c) * 2 + a] - e.grad[2 * c + a]).abs() < 1e-13);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn initial_data_and_periodicity() {
        let p = LinearAdvectionDiffusion::new(0.3);
        let e = p.exact(0.0, &[0.2, 0.7]);
        let want = (2.0 * PI * 0.2).sin() * (2.0 * PI * 0.7).cos();
        assert!((e.u[0] - want).abs() < 1e-15);
        for q in all(1e-3) {
            for (x, y) in [(0.13, 0.77), (0.5, 0.01)] {
                let a = q.exact(0.02, &[x, y]).u;
                let b = q.exact(0.02, &[x + 1.0, y - 1.0]).u;
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_advection_mean_is_zero() {
        let p = LinearAdvectionDiffusion::new(0.01);
        let rule = crate::poly::GaussRule::new(8);
        let n = 4;
        let mut mean = 0.0;
        for t in [0.0, 0.37] {
            for i in 0..n {
                for j in 0..n {
                    for (xa, wa) in rule.nodes.iter().zip(&rule.weights) {
                        for (ya, wb) in rule.nodes.iter().zip(&rule.weights) {
                            let x = [(i as f64 + xa) / n as f64, (j as f64 + ya) / n as f64];
                            mean += wa * wb * p.exact(t, &x).u[0] / (n * n) as f64;
                        }
                    }
                }
            }
            assert!(mean.abs() < 1e-14);
        }
    }

    #[test]
    fn solution_ranges() {
        let b = ViscousBurgers::new(0.0);
        let ps = DiffusivePSystem::new(0.0);
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        for _ in 0..1000 {
            let t = rng.gen_range(0.0..0.1);
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            assert!(b.state_box().unwrap().contains(b.exact(t, &x).u[0]));
            assert!(ps.state_box().unwrap().contains(ps.exact(t, &x).u[0]));
        }
    }

    #[test]
    fn burgers_source_is_linear_in_eps() {
        let x = [0.3, 0.45];
        let s = |eps: f64| {
            let mut o = [0.0];
            ViscousBurgers::new(eps).source(0.05, &x, &mut o);
            o[0]
        };
        let (s0, s1, s2) = (s(0.0), s(0.1), s(0.2));
        assert!(((s2 - s1) - (s1 - s0)).abs() < 1e-12);
    }

    #[test]
    fn flux_jacobians_match_finite_differences() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        let h = 1e-6;
        for p in all(0.0) {
            let m = p.n_components();
            let mut jac = vec![0.0; m * m];
            let (mut fp, mut fm) = (vec![0.0; m], vec![0.0; m]);
            for _ in 0..200 {
                let u: Vec<f64> = (0..m)
                    .map(|c| if c == 0 { rng.gen_range(0.8..1.2) } else { rng.gen_range(-1.0..1.0) })
                    .collect();
                for alpha in 0..2 {
                    p.flux_jacobian(&u, alpha, &mut jac);
                    for j in 0..m {
                        let mut up = u.clone();
                        let mut um = u.clone();
                        up[j] += h;
                        um[j] -= h;
                        p.flux(&up, alpha, &mut fp);
                        p.flux(&um, alpha, &mut fm);
                        for i in 0..m {
                            let d = (fp[i] - fm[i]) / (2.0 * h);
                            assert!((d - jac[i * m + j]).abs() < 1e-7);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn psystem_entropy_constants() {
        let e = DiffusivePSystem::new(0.0).pressure_entropy().unwrap();
        assert!((e.c_w() - 2.0 * 1.1f64.powi(-3)).abs() < 1e-15);
        assert!((e.c_w() - 1.5026).abs() < 1e-4);
        assert!((e.big_c_w() - 9.1449).abs() < 1e-4);
        // W' = -p
        for tau in [0.9, 1.0, 1.07] {
            assert!((e.dw(tau) + DiffusivePSystem::pressure(tau)).abs() < 1e-15);
        }
        let lam = DiffusivePSystem::new(0.0).lambda_max();
        assert!((lam * lam - 2.0 * 0.9f64.powi(-3)).abs() < 1e-12);
    }

    #[test]
    fn relative_entropy_bounds() {
        let e = DiffusivePSystem::new(0.0).pressure_entropy().unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(13);
        for _ in 0..1000 {
            let a = rng.gen_range(0.9..1.1);
            let b = rng.gen_range(0.9..1.1);
            assert!(e.relative(a, b) >= 0.5 * e.c_w() * (a - b) * (a - b) - 1e-15);
            // adding a constant to W leaves W(a|b) unchanged
            let shifted = (e.w(a) + 3.0) - (e.w(b) + 3.0) - e.dw(b) * (a - b);
            assert!((shifted - e.relative(a, b)).abs() < 1e-12);
        }
    }

    #[test]
    fn psystem_diffusion_is_entropy_compatible() {
        // D^2 eta = diag(W''(tau), 1, 1); A_aa = diag(0, 1, 1).
        let p = DiffusivePSystem::new(1.0);
        let ent = p.pressure_entropy().unwrap();
        let mut rng = rand::rngs::StdRng::seed_from_u64(17);
        let mut a = [0.0; 9];
        for _ in 0..100 {
            let tau = rng.gen_range(0.9..1.1);
            let hess = [ent.d2w(tau), 1.0, 1.0];
            let xi: Vec<[f64; 3]> = (0..2)
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let mut q = 0.0;
            for al in 0..2 {
                for be in 0..2 {
                    p.diffusion(&[tau, 0.0, 0.0], al, be, &mut a);
                    for i in 0..3 {
                        for j in 0..3 {
                            q += xi[al][i] * hess[i] * a[i * 3 + j] * xi[be][j];
                        }
                    }
                }
            }
            assert!(q >= 0.0);
        }
    }

    #[test]
    fn registry() {
        assert!(problem_by_id("nope", 0.0).is_err());
        assert!(problem_by_id("linadv", -1.0).is_err());
        assert_eq!(problem_by_id("psystem", 0.0).unwrap().n_components(), 3);
    }
}
