//! Numerical building blocks shared by the solvers.

pub mod ode;
pub mod quad;
