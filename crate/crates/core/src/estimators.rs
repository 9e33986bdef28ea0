//! A posteriori bounds assembled from the residual norms.
//!
//! All bounds control squared errors. The `r2` term uses the computable
//! majorant `E_r2 = ||G~ - G^||_{L2(L2)}` in place of `||r2||_{L2(H^-1)}`.

use crate::error::Result;
use crate::problems::{EstimatorKind, PressureEntropy, ProblemDefinition, StateBox};
use crate::residual::{run_pipeline, NormReport, PipelineOptions, PipelineOutput};
use crate::time::TrajectoryConfig;
use serde::{Deserialize, Serialize};

/// Safety factor applied to the half-width of the problem's admissible box.
pub const BOX_INFLATION: f64 = 1.05;

/// `2 e0^2 + 4 ||r1||^2 + 2 eps E_r2^2`.
pub fn bound_linear_scalar(init_err: f64, r1: f64, eps: f64, e_r2: Option<f64>) -> f64 {
    2.0 * init_err * init_err + 4.0 * r1 * r1 + 2.0 * eps * e_r2.map_or(0.0, |e| e * e)
}

/// `(4 e0^2 + 16 ||r1||^2 + 8 eps E_r2^2) exp(2 lambda t)`.
pub fn bound_nonlinear_scalar(init_err: f64, r1: f64, eps: f64, e_r2: Option<f64>, lambda: f64, t: f64) -> f64 {
    let base = 4.0 * init_err * init_err + 16.0 * r1 * r1 + 8.0 * eps * e_r2.map_or(0.0, |e| e * e);
    base * (2.0 * lambda * t).exp()
}

/// Inputs of the p-system bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PSystemBoundInputs {
    /// `||W(tau_0 | tau^(0))||_{L1}`
    pub init_relative_entropy_l1: f64,
    /// `||v_0 - v^(0)||_{L2}`
    pub init_velocity_l2: f64,
    /// `||W''(tau^) r_tau||_{L1(L2)}`
    pub r_tau_weighted_l1l2: f64,
    /// `||r_v||_{L1(L2)}`
    pub r_v_l1l2: f64,
    /// velocity rows of `E_r2`
    pub e_r2_velocity: Option<f64>,
    pub eps: f64,
    pub c_w: f64,
    pub lambda: f64,
    pub t: f64,
}

/// `(16/3 W0 + 8/3 v0^2 + 16/(3 c_W) ||W'' r_tau||^2 + 16/3 ||r_v||^2 + 16/3 eps E_v^2) exp(lambda t)`.
pub fn bound_p_system(inp: &PSystemBoundInputs) -> f64 {
    let e_v = inp.e_r2_velocity.map_or(0.0, |e| e * e);
    let base = 16.0 / 3.0 * inp.init_relative_entropy_l1
        + 8.0 / 3.0 * inp.init_velocity_l2.powi(2)
        + 16.0 / (3.0 * inp.c_w) * inp.r_tau_weighted_l1l2.powi(2)
        + 16.0 / 3.0 * inp.r_v_l1l2.powi(2)
        + 16.0 / 3.0 * inp.eps * e_v;
    base * (inp.lambda * inp.t).exp()
}

/// `2 sum_a sup|f_a''| ||d_a u^||_inf + 2 eps sup|A'|^2 ||grad u^||_inf^2`.
pub fn lambda_nonlinear_scalar(f2_sup: f64, grad_sup: [f64; 2], eps: f64, a1_sup: f64) -> f64 {
    let grad_norm_sq = grad_sup[0] * grad_sup[0] + grad_sup[1] * grad_sup[1];
    2.0 * f2_sup * (grad_sup[0] + grad_sup[1]) + 2.0 * eps * a1_sup * a1_sup * grad_norm_sq
}

/// `(2 C_W / c_W) ||div v^||_inf`.
pub fn lambda_p_system(c_w: f64, big_c_w: f64, div_sup: f64) -> f64 {
    2.0 * big_c_w / c_w * div_sup
}

/// Constants of the stability estimate on the inflated admissible box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub lambda: f64,
    pub c_w: Option<f64>,
    pub big_c_w: Option<f64>,
    pub state_box: Option<StateBox>,
    /// Set when sampled reconstruction states leave `state_box`.
    pub box_violation: Option<String>,
}

/// Growth constant and box check from the sampled reconstruction.
pub fn compute_lambda(problem: &dyn ProblemDefinition, norms: &NormReport) -> StabilityConstants {
    let state_box = problem.state_box().map(|b| b.inflated(BOX_INFLATION));
    let box_violation = state_box.and_then(|b| {
        let (lo, hi) = (norms.state_min[b.component], norms.state_max[b.component]);
        (!(b.contains(lo) && b.contains(hi))).then(|| {
            format!(
                "component {} sampled in [{lo:.6}, {hi:.6}], outside [{:.6}, {:.6}]",
                b.component, b.lo, b.hi
            )
        })
    });
    let eps = problem.eps();
    match problem.estimator() {
        EstimatorKind::LinearScalar => StabilityConstants {
            lambda: 0.0,
            c_w: None,
            big_c_w: None,
            state_box,
            box_violation,
        },
        EstimatorKind::NonlinearScalar => StabilityConstants {
            lambda: lambda_nonlinear_scalar(
                problem.flux_second_derivative_sup(),
                norms.grad_sup,
                eps,
                problem.diffusion_derivative_sup(),
            ),
            c_w: None,
            big_c_w: None,
            state_box,
            box_violation,
        },
        EstimatorKind::PSystem => {
            let pe = PressureEntropy {
                tau_box: state_box.expect("p-system has an admissible box"),
            };
            let (c_w, big_c_w) = (pe.c_w(), pe.big_c_w());
            StabilityConstants {
                lambda: lambda_p_system(c_w, big_c_w, norms.div_velocity_sup.unwrap_or(0.0)),
                c_w: Some(c_w),
                big_c_w: Some(big_c_w),
                state_box,
                box_violation,
            }
        }
    }
}

/// Bound against measured error for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub problem: String,
    pub q: usize,
    pub n: usize,
    pub eps: f64,
    pub norms: NormReport,
    pub constants: StabilityConstants,
    pub bound: f64,
    /// Left-hand side of the stability estimate at `t = T`.
    pub lhs: f64,
    /// p-system only: the same quantity without the `c_W` weight on the `tau` error.
    pub lhs_unweighted: Option<f64>,
    /// `bound / lhs`
    pub ratio: f64,
    /// `bound >= lhs`, finite, and all states inside the box.
    pub reliable: bool,
}

/// Combine norms and constants into the bound and measured left-hand side.
///
/// The `L_inf(L2)` part of the left-hand side is taken per component and summed,
/// which can only overestimate it.
pub fn assemble(problem: &dyn ProblemDefinition, q: usize, n: usize, norms: NormReport) -> EstimatorReport {
    let eps = problem.eps();
    let constants = compute_lambda(problem, &norms);
    let t = norms.t_final;
    let h1_sq = norms.err_l2h1.map_or(0.0, |e| e * e);
    let comp_sq: Vec<f64> = norms.err_linf_l2_components.iter().map(|e| e * e).collect();
    let (bound, lhs, lhs_unweighted) = match problem.estimator() {
        EstimatorKind::LinearScalar => (
            bound_linear_scalar(norms.init_error_l2, norms.r1_l1l2, eps, norms.e_r2),
            norms.err_linf_l2.powi(2) + eps * h1_sq,
            None,
        ),
        EstimatorKind::NonlinearScalar => (
            bound_nonlinear_scalar(norms.init_error_l2, norms.r1_l1l2, eps, norms.e_r2, constants.lambda, t),
            norms.err_linf_l2.powi(2) + eps * h1_sq,
            None,
        ),
        EstimatorKind::PSystem => {
            let ps = norms.psystem.as_ref().expect("p-system norms present");
            let c_w = constants.c_w.unwrap_or(1.0);
            let inputs = PSystemBoundInputs {
                init_relative_entropy_l1: ps.init_relative_entropy_l1,
                init_velocity_l2: ps.init_velocity_l2,
                r_tau_weighted_l1l2: ps.r_tau_weighted_l1l2,
                r_v_l1l2: ps.r_v_l1l2,
                e_r2_velocity: ps.e_r2_velocity,
                eps,
                c_w,
                lambda: constants.lambda,
                t,
            };
            let v_sq: f64 = comp_sq[1..].iter().sum();
            (
                bound_p_system(&inputs),
                c_w * comp_sq[0] + v_sq + eps * h1_sq,
                Some(comp_sq[0] + v_sq + eps * h1_sq),
            )
        }
    };
    let ratio = bound / lhs;
    let reliable = bound.is_finite() && bound >= lhs && constants.box_violation.is_none();
    EstimatorReport {
        problem: problem.id().to_string(),
        q,
        n,
        eps,
        norms,
        constants,
        bound,
        lhs,
        lhs_unweighted,
        ratio,
        reliable,
    }
}

/// Run the full pipeline and assemble the bound.
pub fn estimate(
    problem: &dyn ProblemDefinition,
    config: &TrajectoryConfig,
    options: &PipelineOptions,
) -> Result<(EstimatorReport, PipelineOutput)> {
    let out = run_pipeline(problem, config, options)?;
    let rep = assemble(problem, config.q, config.n, out.report.clone());
    Ok((rep, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{DiffusivePSystem, ViscousBurgers};
    use proptest::prelude::*;

    #[test]
    fn zero_inputs_give_zero() {
        assert_eq!(bound_linear_scalar(0.0, 0.0, 0.1, Some(0.0)), 0.0);
        assert_eq!(bound_nonlinear_scalar(0.0, 0.0, 0.1, Some(0.0), 3.0, 1.0), 0.0);
        let z = PSystemBoundInputs {
            init_relative_entropy_l1: 0.0,
            init_velocity_l2: 0.0,
            r_tau_weighted_l1l2: 0.0,
            r_v_l1l2: 0.0,
            e_r2_velocity: Some(0.0),
            eps: 0.1,
            c_w: 1.5,
            lambda: 2.0,
            t: 0.05,
        };
        assert_eq!(bound_p_system(&z), 0.0);
    }

    #[test]
    fn eps_zero_drops_diffusive_term() {
        assert!((bound_linear_scalar(0.1, 0.2, 0.0, Some(5.0)) - 0.18).abs() < 1e-15);
        assert_eq!(bound_linear_scalar(0.1, 0.2, 0.0, None), bound_linear_scalar(0.1, 0.2, 0.0, Some(5.0)));
    }

    #[test]
    fn burgers_lambda_is_gradient_sum() {
        let l = lambda_nonlinear_scalar(1.0, [0.7, 1.1], 0.3, 0.0);
        assert!((l - 2.0 * 1.8).abs() < 1e-15);
        assert_eq!(lambda_nonlinear_scalar(0.0, [0.7, 1.1], 0.0, 0.0), 0.0);
        assert!(lambda_nonlinear_scalar(1.0, [0.7, 1.1], 0.3, 0.5) >= l);
    }

    #[test]
    fn p_system_entropy_constants() {
        let pe = DiffusivePSystem::new(0.0).pressure_entropy().unwrap();
        assert!((pe.c_w() - 2.0 / 1.1f64.powi(3)).abs() < 1e-14);
        assert!((pe.c_w() - 1.5026).abs() < 5e-5);
        assert!((pe.big_c_w() - 9.1449).abs() < 5e-5);
        let inflated = PressureEntropy {
            tau_box: pe.tau_box.inflated(BOX_INFLATION),
        };
        assert!(inflated.c_w() < pe.c_w() && inflated.big_c_w() > pe.big_c_w());
    }

    proptest! {
        #[test]
        fn relative_entropy_dominates_quadratic(a in 0.9f64..1.1, b in 0.9f64..1.1, shift in -3.0f64..3.0) {
            let pe = DiffusivePSystem::new(0.0).pressure_entropy().unwrap();
            let rel = pe.relative(a, b);
            prop_assert!(rel >= 0.5 * pe.c_w() * (a - b).powi(2) - 1e-15);
            // adding a constant to W leaves W(a|b) unchanged
            let shifted = (pe.w(a) + shift) - (pe.w(b) + shift) - pe.dw(b) * (a - b);
            prop_assert!((shifted - rel).abs() <= 1e-12);
        }

        #[test]
        fn bounds_monotone_in_inputs(e0 in 0.0f64..1.0, r1 in 0.0f64..1.0, er in 0.0f64..1.0, d in 0.0f64..0.5,
                                     eps in 0.0f64..0.1, lam in 0.0f64..5.0, t in 0.0f64..1.0) {
            let b = bound_nonlinear_scalar(e0, r1, eps, Some(er), lam, t);
            prop_assert!(bound_nonlinear_scalar(e0 + d, r1, eps, Some(er), lam, t) >= b);
            prop_assert!(bound_nonlinear_scalar(e0, r1 + d, eps, Some(er), lam, t) >= b);
            prop_assert!(bound_nonlinear_scalar(e0, r1, eps, Some(er + d), lam, t) >= b);
            prop_assert!(bound_nonlinear_scalar(e0, r1, eps, Some(er), lam, t + d) >= b);
            prop_assert!(bound_linear_scalar(e0 + d, r1 + d, eps, Some(er + d)) >= bound_linear_scalar(e0, r1, eps, Some(er)));
        }
    }

    #[test]
    fn burgers_short_run_is_reliable() {
        let problem = ViscousBurgers::new(1e-4);
        let mut cfg = TrajectoryConfig::new(1, 8);
        cfg.t_final = Some(0.02);
        let (rep, _) = estimate(&problem, &cfg, &PipelineOptions::default()).unwrap();
        assert!(rep.constants.lambda > 0.0 && rep.constants.box_violation.is_none());
        assert!(rep.ratio.is_finite() && rep.ratio >= 1.0, "ratio {}", rep.ratio);
        assert!(rep.reliable);
    }
}
