//! Numerical integration of the evolution equations: the mean and
//! second-moment semigroups, the nonlinear flows and the immigration
//! log-Laplace integrals.

mod linear;
mod nonlinear;
mod trajectory;

pub use linear::{linear_action, second_moment, second_moment_forms, SECOND_MOMENT_RTOL};
pub use nonlinear::{
    immigration_log_laplace, laplace_at, solve_u, solve_v, stationary_log_laplace, survival_curve, survival_from_u,
    survival_probability, StationaryLaplace, SurvivalCurve, CLAMP_FAULT, LADDER_TOL, STATIONARY_DOUBLINGS, STATIONARY_START,
    THETA_LADDER, THETA_MAX,
};
pub use trajectory::{log2_checkpoints, Trajectory};
