//! Functional determinants of one-dimensional Sturm-Liouville operators.
//!
//! * [`gy`] evaluates `det J` and ratios `det(J + λ²)/det J` by integrating
//!   a single initial value problem (the Gelfand-Yaglom construction).
//! * [`spectrum`] computes eigenvalues by shooting, dense diagonalization or
//!   restarted Lanczos on finite-difference meshes.
//! * [`zeta`] builds operator zeta functions from spectra or from
//!   Gelfand-Yaglom ratios, and zeta-regularized determinants.
//! * [`semiclassical`] finds classical paths and the Van Vleck prefactor of
//!   the semiclassical propagator.
//! * [`expr`] and [`ode`] are the symbolic and numerical plumbing.
//!
//! ```
//! use fundet::gy::{gy_determinant, SlOperator1D};
//! use fundet::ode::Storage;
//!
//! let op = SlOperator1D::free(1.0, 0.0, std::f64::consts::PI).unwrap();
//! let det = gy_determinant(&op, 1000, Storage::BoundaryOnly).unwrap();
//! assert!((det.value - std::f64::consts::PI).abs() < 1e-12);
//! ```

pub mod expr;
pub mod gy;
pub mod ode;
pub mod semiclassical;
pub mod spectrum;
pub mod zeta;

// The guide's chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/expressions.md")]
    mod expressions {}
    #[doc = include_str!("../../../book/src/gelfand_yaglom.md")]
    mod gelfand_yaglom {}
    #[doc = include_str!("../../../book/src/spectra.md")]
    mod spectra {}
    #[doc = include_str!("../../../book/src/zeta.md")]
    mod zeta {}
    #[doc = include_str!("../../../book/src/semiclassical.md")]
    mod semiclassical {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
