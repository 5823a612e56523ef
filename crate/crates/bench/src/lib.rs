//! Fixtures shared by the criterion targets.

use hypomix_core::model::build_triad;
use hypomix_core::poly::rational_from_int;
use hypomix_core::ModelSpec;

/// Triad with coefficients (1, 1, -2) and unit noise on the first two modes.
pub fn triad(eps: f64) -> ModelSpec {
    let alpha = [1, 1, -2].map(rational_from_int);
    build_triad(alpha, 1.0, 1.0, eps, 1.0).expect("valid triad")
}
