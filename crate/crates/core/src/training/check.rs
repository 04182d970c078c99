//! Finite-difference check of the whole pre-training objective.
//!
//! The objective is rebuilt from fixed ingredients (one short sequence, a
//! fixed masked set, a fixed positive key and a small bank) so that every
//! evaluation sees exactly the same function of the parameters.

use masa_autograd::gradcheck::{grad_check, GradCheckReport};
use masa_autograd::{Graph, ParamStore, Var};
use rand_distr::{Distribution, StandardNormal};

use super::motion_loss;
use crate::alignment::{info_nce, MemoryBank};
use crate::error::Result;
use crate::masking::{motion_residuals, truncate_confidence, MotionField};
use crate::model::{network_input, Head, Masa, ModelConfig};
use crate::posedata::{gen_synthetic, normalize_sequence, Point, NUM_JOINTS};
use crate::seeding::rng_for;

/// Sequence length of the checked objective.
pub const CHECK_FRAMES: usize = 8;
const CHECK_K: usize = 3;
const CHECK_MASK: [usize; 2] = [1, 3];
const CHECK_BANK: usize = 4;

/// Fixed inputs of the checked objective `L_m + lambda * L_s`.
pub struct PipelineObjective {
    pub model: Masa,
    pub params: ParamStore,
    input: Vec<Point>,
    field: MotionField,
    masked: Vec<usize>,
    visible: Vec<usize>,
    k_pos: Vec<f64>,
    bank: MemoryBank,
    pub lambda: f64,
    pub tau: f64,
}

fn unit_vector(seed: u64, tag: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, &[0xc4ec, tag]);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl PipelineObjective {
    /// Tiny model, one synthetic sequence of [`CHECK_FRAMES`] frames, masked
    /// frames `{1, 3}` and a bank of four random unit keys.
    pub fn tiny(seed: u64, lambda: f64) -> Result<Self> {
        let model = Masa::new(ModelConfig::tiny())?;
        let params = model.init_params(seed)?;
        let seq = gen_synthetic(2, 1, CHECK_FRAMES, seed)?.sequences.remove(0);
        let field = motion_residuals(
            &normalize_sequence(&seq),
            &truncate_confidence(seq.conf(), 0.4),
            NUM_JOINTS,
            CHECK_K,
        )?;
        let masked = CHECK_MASK.to_vec();
        let visible = (0..CHECK_FRAMES).filter(|t| !masked.contains(t)).collect();
        let dim = model.config().proj_dim;
        let mut bank = MemoryBank::new(CHECK_BANK, dim)?;
        let negatives: Vec<Vec<f64>> = (1..=CHECK_BANK as u64).map(|t| unit_vector(seed, t, dim)).collect();
        bank.enqueue(&negatives)?;
        Ok(Self {
            input: network_input(&seq),
            k_pos: unit_vector(seed, 0, dim),
            model,
            params,
            field,
            masked,
            visible,
            bank,
            lambda,
            tau: 0.07,
        })
    }

    /// Builds the scalar objective on `g` from `store`.
    pub fn build(&self, g: &mut Graph, store: &ParamStore) -> Result<Var> {
        let enc = self.model.encode_frames(g, store, &self.input, &self.visible)?;
        let preds = self
            .model
            .decode_predict(g, store, enc, &self.masked, &self.visible, CHECK_FRAMES)?;
        let l_m = motion_loss(g, preds, &self.field, &self.masked)?;
        let q = self.model.project_global(g, store, enc, Head::Query)?;
        let l_s = info_nce(g, q, &self.k_pos, &self.bank, self.tau)?;
        let weighted = g.scale(l_s, self.lambda);
        Ok(g.add(l_m, weighted)?)
    }

    pub fn check(&self, h: f64, max_entries: usize, seed: u64) -> Result<GradCheckReport> {
        let report = grad_check(
            |g, s| self.build(g, s).map_err(|e| masa_autograd::Error::InvalidArgument(e.to_string())),
            &self.params,
            h,
            max_entries,
            seed,
        )?;
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use masa_autograd::gradcheck::DEFAULT_STEP;

    #[test]
    fn tiny_objective_matches_central_differences() {
        let obj = PipelineObjective::tiny(0, 0.05).unwrap();
        let report = obj.check(DEFAULT_STEP, 150, 0).unwrap();
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }
}
