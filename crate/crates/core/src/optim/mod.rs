//! Derivative-free minimizers shared by the tomography and fitting code.

pub mod de;
pub mod simplex;

pub use de::{differential_evolution, DeOptions, DeResult};
pub use simplex::{nelder_mead, SimplexOptions, SimplexResult};

/// Maps NaN objective values to +inf so they always lose comparisons.
#[inline]
pub(crate) fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}
