pub mod corpus;
pub mod error;
pub mod limits;
pub mod model;
pub mod numerics;
pub mod semigroup;
pub mod simulator;
pub mod spectral;

pub use error::{Error, ErrorClass, Result};

/// Renders a number with 17 significant digits; non-finite values as
/// `inf`, `-inf` or `nan`.
pub fn format_number(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../book/src/models.md")]
    pub mod models {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    pub mod spectrum {}
    #[doc = include_str!("../../../book/src/semigroups.md")]
    pub mod semigroups {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub mod simulation {}
    #[doc = include_str!("../../../book/src/limits.md")]
    pub mod limits {}
}
