//! Legendre-Gauss pseudospectral discretization of control-constrained
//! optimal control problems.
//!
//! The state equation is collocated at the Gauss points and the costate is
//! integrated with the matching discrete adjoint, so the discrete
//! optimality system can be checked and solved directly. The guide in
//! `book/` walks through each module; its snippets run as doc-tests.
//!
//! ```
//! use gauss_colloc::problem::builtin;
//! use gauss_colloc::solver::{solve, SolverConfig};
//!
//! let p = builtin("hager84-constrained").unwrap();
//! let report = solve(&p, 24, &SolverConfig::default(), None).unwrap();
//! assert!(report.converged);
//! ```

pub mod analysis;
pub mod diffmat;
pub mod error;
pub mod problem;
pub mod quadrature;
pub mod solver;
pub mod transcription;

pub use diffmat::CollocationOperators;
pub use error::{Error, Result};
pub use quadrature::{QuadratureRule, RuleKind};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quadrature.md")]
    mod quadrature {}
    #[doc = include_str!("../../../book/src/differentiation.md")]
    mod differentiation {}
    #[doc = include_str!("../../../book/src/problems.md")]
    mod problems {}
    #[doc = include_str!("../../../book/src/transcription.md")]
    mod transcription {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/convergence.md")]
    mod convergence {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
