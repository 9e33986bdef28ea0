//! Runge–Kutta discontinuous Galerkin solvers for periodic convection–diffusion
//! systems, SIAC space–time reconstruction, residual splitting and
//! relative-entropy a posteriori error bounds.
//!
//! The pipeline, bottom up:
//!
//! * [`mesh`]: periodic Cartesian meshes, the Legendre tensor basis, [`mesh::DgField`].
//! * [`operators`]: the Rusanov convective operator and interior-penalty diffusion.
//! * [`time`]: IMEX additive Runge–Kutta stepping.
//! * [`bspline`] and [`filter`]: B-splines, SIAC kernels and exact convolution.
//! * [`temporal`] and [`reconstruction`]: Hermite-in-time and space–time reconstruction.
//! * [`residual`]: residual splitting and space–time norms.
//! * [`estimators`]: the assembled error bounds.
//! * [`harness`]: sweeps, EoCs and table output used by the `estimate` binary.
//!
//! ```
//! use dgsiac::bspline::kernel_coefficients;
//!
//! let c = kernel_coefficients(1).unwrap();
//! assert!((c[0] + 1.0 / 12.0).abs() < 1e-15);
//! assert!((c[1] - 7.0 / 6.0).abs() < 1e-15);
//! ```

pub mod bspline;
pub mod error;
pub mod estimators;
pub mod filter;
pub mod harness;
pub mod mesh;
pub mod operators;
pub mod poly;
pub mod problems;
pub mod reconstruction;
pub mod residual;
pub mod temporal;
pub mod time;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/dg.md")]
    mod dg {}
    #[doc = include_str!("../../../book/src/time.md")]
    mod time {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/estimators.md")]
    mod estimators {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
