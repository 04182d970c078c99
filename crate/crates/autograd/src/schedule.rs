//! Learning-rate schedules.

use crate::error::{Error, Result};

/// Linear warmup to `base_lr`, then linear decay to zero at `total_epochs`.
///
/// `epoch` may be fractional so callers can advance the schedule per step.
pub fn pretrain_lr(epoch: f64, base_lr: f64, warmup_epochs: f64, total_epochs: f64) -> Result<f64> {
    if !(warmup_epochs >= 0.0 && warmup_epochs < total_epochs) {
        return Err(Error::InvalidArgument(format!(
            "warmup {warmup_epochs} must lie in [0, {total_epochs})"
        )));
    }
    if !(0.0..=total_epochs).contains(&epoch) {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside [0, {total_epochs}]"
        )));
    }
    Ok(if epoch < warmup_epochs {
        base_lr * (epoch / warmup_epochs)
    } else {
        base_lr * ((total_epochs - epoch) / (total_epochs - warmup_epochs))
    })
}

/// Step decay: `base_lr * factor^floor(epoch / step)`.
pub fn finetune_lr(epoch: usize, base_lr: f64, step: usize, factor: f64) -> f64 {
    let k = epoch / step.max(1);
    base_lr * factor.powi(k as i32)
}
