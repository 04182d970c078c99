//! Loss assembly, the pre-training and fine-tuning loops, and evaluation.

pub mod check;
mod finetune;
mod metrics;
mod pretrain;

use masa_autograd::{Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::masking::MotionField;

pub use finetune::{evaluate, finetune, predict_logits, FinetuneConfig, FinetuneOutcome, FinetuneRow};
pub use metrics::{argmax, rank_of, Metrics};
pub use pretrain::{online_params, pretrain, write_loss_log, EpochMeans, LossRow, PretrainConfig, PretrainOutcome};

/// `lambda_s * min(epoch / ramp_epochs, 1)`; a zero ramp means no ramp.
pub fn lambda_schedule(epoch: usize, lambda_s: f64, ramp_epochs: usize) -> f64 {
    if ramp_epochs == 0 {
        return lambda_s;
    }
    lambda_s * (epoch as f64 / ramp_epochs as f64).min(1.0)
}

/// `l_m + lambda(epoch) * l_s`.
pub fn total_loss(l_m: f64, l_s: f64, epoch: usize, lambda_s: f64, ramp_epochs: usize) -> Result<f64> {
    if !l_m.is_finite() || !l_s.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss terms l_m={l_m}, l_s={l_s}")));
    }
    Ok(l_m + lambda_schedule(epoch, lambda_s, ramp_epochs) * l_s)
}

fn motion_targets(field: &MotionField, masked: &[usize]) -> Result<(Tensor, Tensor)> {
    let n = field.joints;
    let mut target = Vec::with_capacity(masked.len() * n * 2);
    let mut weight = Vec::with_capacity(masked.len() * n * 2);
    for &i in masked {
        if i >= field.eligible() {
            return Err(Error::invalid(format!("masked frame {i} has no residual")));
        }
        for j in 0..n {
            target.extend_from_slice(&field.residual(i, j));
            let c = field.pair_conf(i, j);
            weight.extend_from_slice(&[c, c]);
        }
    }
    Ok((
        Tensor::matrix(masked.len(), n * 2, target)?,
        Tensor::matrix(masked.len(), n * 2, weight)?,
    ))
}

/// Confidence-weighted squared error between predictions `[|M|, 2N]` and the
/// residuals of the masked frames, averaged over masked frames.
pub fn motion_loss(g: &mut Graph, preds: Var, field: &MotionField, masked: &[usize]) -> Result<Var> {
    if masked.is_empty() {
        return Err(Error::invalid("motion loss needs at least one masked frame"));
    }
    let (target, weight) = motion_targets(field, masked)?;
    if g.shape(preds) != target.shape() {
        return Err(Error::Shape(format!(
            "predictions {:?} against targets {:?}",
            g.shape(preds),
            target.shape()
        )));
    }
    let target = g.constant(target);
    let weight = g.constant(weight);
    let diff = g.sub(preds, target)?;
    let weighted = g.mul(diff, weight)?;
    let sq = g.mul(weighted, weighted)?;
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / masked.len() as f64))
}

/// [`motion_loss`] on plain values: `preds[f]` is the prediction for
/// `masked[f]`, laid out as `[x0, y0, x1, y1, ...]`.
pub fn motion_loss_value(preds: &[Vec<f64>], field: &MotionField, masked: &[usize]) -> Result<f64> {
    if masked.is_empty() || preds.len() != masked.len() {
        return Err(Error::invalid("motion loss needs one prediction per masked frame"));
    }
    let mut total = 0.0;
    for (p, &i) in preds.iter().zip(masked) {
        for j in 0..field.joints {
            let c = field.pair_conf(i, j);
            let m = field.residual(i, j);
            for a in 0..2 {
                let e = (p[2 * j + a] - m[a]) * c;
                total += e * e;
            }
        }
    }
    Ok(total / masked.len() as f64)
}
