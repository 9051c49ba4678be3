//! Learned value function, learned dynamics model, and the
//! quadratic-in-action Q approximators built from them.

mod dynamics;
mod qbuild;
mod value;

pub use dynamics::{fit_dynamics, DynamicsModel};
pub use qbuild::{build_quadratic_q, q_dyn, QVariant};
pub use value::{fit_value, ValueFitConfig, ValueModel};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Least squares with a ridge fallback for rank-deficient designs.
///
/// Returns the coefficient vector and whether the ridge path was taken.
pub(crate) fn solve_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, bool)> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;

    // Cholesky alone can squeak through an exactly singular system on
    // round-off, so gate it on the spectrum.
    let sv = xtx.clone().svd(false, false).singular_values;
    let full_rank = sv.min() > sv.max() * 1e-10;
    if full_rank {
        if let Some(chol) = xtx.clone().cholesky() {
            return Ok((chol.solve(&xty), false));
        }
    }
    let p = xtx.nrows();
    let ridged = &xtx + DMatrix::<f64>::identity(p, p) * 1e-6;
    let chol = ridged
        .cholesky()
        .ok_or_else(|| Error::invalid("regression design is unusably degenerate"))?;
    Ok((chol.solve(&xty), true))
}
