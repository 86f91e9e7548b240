use super::tensor::Scalar;
use crate::error::{Error, Result};

/// Mean squared error over unmasked entries (`mask[i] == true` counts) and
/// its gradient with respect to `pred`. Masked entries get zero gradient.
pub fn mse_loss<T: Scalar>(pred: &[T], target: &[T], mask: Option<&[bool]>) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() || mask.is_some_and(|m| m.len() != pred.len()) {
        return Err(Error::dim(format!(
            "mse over {} predictions and {} targets",
            pred.len(),
            target.len()
        )));
    }
    let keep = |i: usize| mask.is_none_or(|m| m[i]);
    let count = (0..pred.len()).filter(|&i| keep(i)).count();
    if count == 0 {
        return Err(Error::invalid("every entry is masked"));
    }
    let n = T::from_usize(count).unwrap();
    let two = T::of(2.0);
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); pred.len()];
    for i in 0..pred.len() {
        if keep(i) {
            let d = pred[i] - target[i];
            loss += d * d;
            grad[i] = two * d / n;
        }
    }
    Ok((loss / n, grad))
}
