//! Error measures between predicted and reference trajectories.

use crate::linalg::{LinalgError, Matrix};

/// `‖pred − truth‖_F / ‖truth‖_F`. Returns the absolute error when the
/// reference is identically zero.
pub fn relative_l2_error(pred: &Matrix, truth: &Matrix) -> Result<f64, LinalgError> {
    pred.check_same_shape(truth, "relative error")?;
    let diff = (pred - truth).frobenius_norm();
    let scale = truth.frobenius_norm();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Per-column Euclidean error `‖pred_k − truth_k‖`, one entry per time step.
pub fn per_step_errors(pred: &Matrix, truth: &Matrix) -> Result<Vec<f64>, LinalgError> {
    pred.check_same_shape(truth, "per-step error")?;
    let diff = pred - truth;
    Ok((0..diff.cols()).map(|k| crate::linalg::norm(&diff.column(k))).collect())
}

/// Pointwise absolute error field `|pred − truth|`, same shape as the inputs.
pub fn error_field(pred: &Matrix, truth: &Matrix) -> Result<Matrix, LinalgError> {
    pred.check_same_shape(truth, "error field")?;
    let d = pred - truth;
    Ok(Matrix::from_fn(d.rows(), d.cols(), |i, j| d[(i, j)].abs()))
}
