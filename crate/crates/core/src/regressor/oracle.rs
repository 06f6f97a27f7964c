use super::RegressorOutput;
use crate::error::Result;
use crate::learning::bounded_correction;
use crate::model::{AnnotatedFace, Shape};

/// Ideal stage function: the bounded step towards ground truth, with the
/// true visibility and pose. `bound = None` steps all the way.
pub fn oracle_predict(gt: &AnnotatedFace, current: &Shape, bound: Option<f64>) -> Result<RegressorOutput> {
    let corrections = bounded_correction(
        &gt.shape,
        current,
        bound.unwrap_or(f64::INFINITY),
        &gt.visibility,
    )?;
    Ok(RegressorOutput {
        corrections,
        visibility: gt.visibility.clone(),
        pose: gt.pose,
    })
}
