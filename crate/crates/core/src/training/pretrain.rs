//! Self-supervised pre-training: masked motion prediction plus momentum
//! alignment against a FIFO bank of keys.

use std::io::Write;

use masa_autograd::{adamw_step, pretrain_lr, AdamWConfig, Checkpoint, Gradients, Graph, OptimState, ParamStore};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{lambda_schedule, motion_loss};
use crate::alignment::{info_nce, MemoryBank, MomentumPair};
use crate::error::{Error, Result};
use crate::exec::{map_collect, Execution};
use crate::masking::{plan_mask, random_temporal_sample, MaskSettings, PiDenominator};
use crate::model::{network_input, Head, Masa, ModelConfig};
use crate::posedata::{normalize_sequence, Dataset, PoseSequence, NUM_JOINTS};
use crate::seeding::{hash_str, rng_for};

const SHUFFLE_STREAM: u64 = 0x5f1e;
const SAMPLE_STREAM: u64 = 0x5a3e;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub k_interval: usize,
    pub eps_c: f64,
    pub eps_m: f64,
    pub delta: f64,
    pub alpha: f64,
    pub pi_denominator: PiDenominator,
    pub alpha_r: f64,
    pub tau: f64,
    pub lambda_s: f64,
    pub ramp_epochs: usize,
    pub mu: f64,
    pub bank_k: usize,
    /// Train the masked motion branch.
    pub motion: bool,
    /// Train the momentum alignment branch.
    pub alignment: bool,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    /// Desk-scale settings: see [`PretrainConfig::paper`] for the full-scale
    /// schedule.
    fn default() -> Self {
        Self {
            epochs: 60,
            warmup_epochs: 5,
            base_lr: 1e-3,
            batch_size: 16,
            ramp_epochs: 20,
            bank_k: 128,
            model: ModelConfig::default(),
            ..Self::paper()
        }
    }
}

impl PretrainConfig {
    pub fn paper() -> Self {
        Self {
            epochs: 400,
            warmup_epochs: 20,
            base_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.95,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            batch_size: 64,
            k_interval: 3,
            eps_c: 0.4,
            eps_m: 5.0,
            delta: 0.5,
            alpha: 0.9,
            pi_denominator: PiDenominator::All,
            alpha_r: 0.5,
            tau: 0.07,
            lambda_s: 0.05,
            ramp_epochs: 100,
            mu: 0.996,
            bank_k: 6144,
            motion: true,
            alignment: true,
            model: ModelConfig {
                d_e: 1536,
                proj_dim: 128,
                max_t: 256,
                ..ModelConfig::default()
            },
            seed: 0,
        }
    }

    pub fn mask_settings(&self) -> MaskSettings {
        MaskSettings {
            k: self.k_interval,
            eps_c: self.eps_c,
            eps_m: self.eps_m,
            delta: self.delta,
            alpha: self.alpha,
            pi_denominator: self.pi_denominator,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mask_settings().validate()?;
        self.model.validate()?;
        if !self.motion && !self.alignment {
            return Err(Error::invalid("at least one of motion and alignment must be enabled"));
        }
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(Error::invalid(format!(
                "warmup ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 || self.batch_size > self.bank_k {
            return Err(Error::invalid(format!(
                "batch size {} must lie in 1..={} (bank capacity)",
                self.batch_size, self.bank_k
            )));
        }
        if !(0.0..1.0).contains(&self.alpha_r) || !(self.tau > 0.0) || !(0.0..=1.0).contains(&self.mu) {
            return Err(Error::invalid("alpha_r must lie in [0, 1), tau above 0 and mu in [0, 1]"));
        }
        if !(self.base_lr >= 0.0) || !(self.lambda_s >= 0.0) {
            return Err(Error::invalid("learning rate and lambda_s must be non-negative"));
        }
        Ok(())
    }
}

/// One optimizer step of the loss log.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub l_m: f64,
    pub l_s: f64,
    pub lambda: f64,
    pub lr: f64,
    pub total: f64,
    /// Samples of the step whose mask came from the empty-candidate fallback.
    pub fallbacks: usize,
}

pub fn write_loss_log<W: Write>(mut w: W, rows: &[LossRow]) -> std::io::Result<()> {
    writeln!(w, "epoch,step,l_m,l_s,lambda,lr,total,fallbacks")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.epoch, r.step, r.l_m, r.l_s, r.lambda, r.lr, r.total, r.fallbacks
        )?;
    }
    w.flush()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMeans {
    pub epoch: usize,
    pub l_m: f64,
    pub l_s: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub pair: MomentumPair,
    pub bank: MemoryBank,
    pub log: Vec<LossRow>,
    pub config: PretrainConfig,
}

impl PretrainOutcome {
    /// Step-weighted means per epoch.
    pub fn epoch_means(&self) -> Vec<EpochMeans> {
        let mut out: Vec<(EpochMeans, usize)> = Vec::new();
        for r in &self.log {
            match out.last_mut() {
                Some((m, n)) if m.epoch == r.epoch => {
                    m.l_m += r.l_m;
                    m.l_s += r.l_s;
                    *n += 1;
                }
                _ => out.push((
                    EpochMeans {
                        epoch: r.epoch,
                        l_m: r.l_m,
                        l_s: r.l_s,
                    },
                    1,
                )),
            }
        }
        out.into_iter()
            .map(|(m, n)| EpochMeans {
                l_m: m.l_m / n as f64,
                l_s: m.l_s / n as f64,
                ..m
            })
            .collect()
    }

    /// Online parameters plus the momentum branch.
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let mut params = self.pair.query.clone();
        params.merge(self.pair.key_for_checkpoint()?)?;
        let mut ckpt = Checkpoint::new(params);
        ckpt.epoch = self.config.epochs;
        ckpt.seeds.insert("seed".into(), self.config.seed);
        ckpt.hyperparameters = serde_json::to_value(&self.config).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(ckpt)
    }
}

struct SampleResult {
    grads: Gradients,
    l_m: f64,
    l_s: f64,
    key: Vec<f64>,
    fallback: bool,
}

struct StepContext<'a> {
    model: &'a Masa,
    cfg: &'a PretrainConfig,
    pair: &'a MomentumPair,
    bank: &'a MemoryBank,
    lambda: f64,
    epoch: usize,
}

fn sample_step(ctx: &StepContext<'_>, index: usize, seq: &PoseSequence) -> Result<SampleResult> {
    let cfg = ctx.cfg;
    let frames = seq.frames();
    let mut rng = rng_for(cfg.seed, &[SAMPLE_STREAM, ctx.epoch as u64, index as u64, hash_str(seq.id())]);
    let input = network_input(seq);
    let store = &ctx.pair.query;

    let (field, plan) = if cfg.motion {
        let (f, p) = plan_mask(&normalize_sequence(seq), seq.conf(), NUM_JOINTS, &cfg.mask_settings(), &mut rng)?;
        (Some(f), Some(p))
    } else {
        (None, None)
    };
    let visible = match &plan {
        Some(p) => p.visible(frames),
        None => (0..frames).collect(),
    };

    let mut g = Graph::new();
    let encoded = ctx.model.encode_frames(&mut g, store, &input, &visible)?;

    let mut total = None;
    let mut l_m = 0.0;
    if let (Some(field), Some(plan)) = (&field, &plan) {
        if !plan.masked.is_empty() {
            let preds = ctx.model.decode_predict(&mut g, store, encoded, &plan.masked, &visible, frames)?;
            let lm = motion_loss(&mut g, preds, field, &plan.masked)?;
            l_m = g.value(lm).data()[0];
            total = Some(lm);
        }
    }

    let mut l_s = 0.0;
    let mut key = Vec::new();
    if cfg.alignment {
        let (_, kept) = random_temporal_sample(seq, cfg.alpha_r, &mut rng)?;
        let mut gk = Graph::no_grad();
        let key_enc = ctx.model.encode_frames(&mut gk, &ctx.pair.key, &input, &kept)?;
        let k = ctx.model.project_global(&mut gk, &ctx.pair.key, key_enc, Head::Key)?;
        key = gk.value(k).data().to_vec();

        let q = ctx.model.project_global(&mut g, store, encoded, Head::Query)?;
        let ls = info_nce(&mut g, q, &key, ctx.bank, cfg.tau)?;
        l_s = g.value(ls).data()[0];
        if ctx.lambda > 0.0 && !ctx.bank.is_empty() {
            let weighted = g.scale(ls, ctx.lambda);
            total = Some(match total {
                Some(t) => g.add(t, weighted)?,
                None => weighted,
            });
        }
    }

    if !l_m.is_finite() || !l_s.is_finite() {
        return Err(Error::Numerical(format!(
            "epoch {} sample `{}`: l_m={l_m}, l_s={l_s}",
            ctx.epoch,
            seq.id()
        )));
    }
    let grads = match total {
        Some(t) => {
            g.backward(t)?;
            g.param_grads()
        }
        None => Gradients::new(),
    };
    Ok(SampleResult {
        grads,
        l_m,
        l_s,
        key,
        fallback: plan.is_some_and(|p| p.fallback),
    })
}

/// Runs the full pre-training loop. Deterministic in `(cfg, data)` for
/// either execution mode.
pub fn pretrain(cfg: &PretrainConfig, data: &Dataset, exec: Execution) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let model = Masa::new(cfg.model.clone())?;
    if data.is_empty() {
        return Err(Error::invalid("pre-training needs at least one sequence"));
    }
    if let Some(s) = data.sequences.iter().find(|s| s.frames() > cfg.model.max_t) {
        return Err(Error::invalid(format!(
            "sequence `{}` has {} frames, above max_t {}",
            s.id(),
            s.frames(),
            cfg.model.max_t
        )));
    }
    if cfg.motion {
        if let Some(s) = data.sequences.iter().find(|s| s.frames() <= cfg.k_interval) {
            return Err(Error::invalid(format!("sequence `{}` is not longer than k", s.id())));
        }
    }
    let batch = cfg.batch_size.min(data.len());

    let mut pair = MomentumPair::new(model.init_params(cfg.seed)?, cfg.mu)?;
    let mut bank = MemoryBank::new(cfg.bank_k, cfg.model.proj_dim)?;
    let mut state = OptimState::new();
    let mut log = Vec::new();
    let steps = data.len().div_ceil(batch);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let lambda = lambda_schedule(epoch, cfg.lambda_s, cfg.ramp_epochs);
        for (step, chunk) in order.chunks(batch).enumerate() {
            let lr = pretrain_lr(
                epoch as f64 + (step + 1) as f64 / steps as f64,
                cfg.base_lr,
                cfg.warmup_epochs as f64,
                cfg.epochs as f64,
            )?;
            let ctx = StepContext {
                model: &model,
                cfg,
                pair: &pair,
                bank: &bank,
                lambda,
                epoch,
            };
            let results: Vec<SampleResult> = map_collect(exec, chunk, |_, &i| sample_step(&ctx, i, &data.sequences[i]))
                .into_iter()
                .collect::<Result<_>>()?;

            let n = results.len() as f64;
            pair.query.zero_grad();
            for r in &results {
                pair.query.accumulate_grads(&r.grads, 1.0 / n)?;
            }
            let adam = AdamWConfig {
                lr,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.adam_eps,
                weight_decay: cfg.weight_decay,
            };
            adamw_step(&mut pair.query, &mut state, &adam)?;
            pair.ema_update()?;
            if cfg.alignment {
                let keys: Vec<Vec<f64>> = results.iter().map(|r| r.key.clone()).collect();
                bank.enqueue(&keys)?;
            }

            let l_m = results.iter().map(|r| r.l_m).sum::<f64>() / n;
            let l_s = results.iter().map(|r| r.l_s).sum::<f64>() / n;
            log.push(LossRow {
                epoch,
                step,
                l_m,
                l_s,
                lambda,
                lr,
                total: l_m + lambda * l_s,
                fallbacks: results.iter().filter(|r| r.fallback).count(),
            });
        }
    }
    Ok(PretrainOutcome {
        pair,
        bank,
        log,
        config: cfg.clone(),
    })
}

/// Online parameters from a pre-training checkpoint, without the momentum
/// branch.
pub fn online_params(store: &ParamStore) -> ParamStore {
    let mut out = ParamStore::new();
    for (path, p) in store.iter() {
        if !path.starts_with(crate::alignment::MOMENTUM_PREFIX) && !path.starts_with("proj_k.") {
            out.insert(path, p.value.clone()).expect("unique paths");
        }
    }
    out
}
