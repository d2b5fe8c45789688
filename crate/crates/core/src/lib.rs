//! Time-domain preconditioning for discrete Helmholtz problems.
//!
//! A Helmholtz system `H U = F` is approximated by running a damped wave
//! simulation with time-harmonic forcing (see [`precond`]), and that
//! approximate inverse is used as a preconditioner for GMRES ([`krylov`]).

pub mod diagnostics;
pub mod direct;
pub mod error;
pub mod experiment;
pub mod fd;
pub mod fixtures;
pub mod krylov;
pub mod leapfrog;
pub mod operator;
pub mod precond;
pub mod setup;

pub use error::{Error, Result};
pub use operator::{ComplexLinearMap, ComplexVector, SplitOperator};
