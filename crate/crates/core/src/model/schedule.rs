use crate::error::{Error, Result};

/// Polynomial decay `lr0 * (1 - iter/total_iter)^0.9`.
pub fn poly_lr(iter: usize, total_iter: usize, lr0: f64) -> Result<f64> {
    if total_iter == 0 {
        return Err(Error::domain("poly schedule needs total_iter >= 1"));
    }
    if iter > total_iter {
        return Err(Error::domain(format!(
            "iteration {iter} beyond schedule length {total_iter}"
        )));
    }
    if !(lr0 > 0.0) || !lr0.is_finite() {
        return Err(Error::domain(format!("initial learning rate {lr0}")));
    }
    let progress = iter as f64 / total_iter as f64;
    Ok(lr0 * (1.0 - progress).powf(0.9))
}
