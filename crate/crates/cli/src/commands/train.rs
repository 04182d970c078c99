use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use masa_autograd::{Checkpoint, ParamStore};
use masa_core::exec::Execution;
use masa_core::model::{Masa, ModelConfig};
use masa_core::posedata::{add_noise, load_sequences, Dataset};
use masa_core::training::{self, online_params, write_loss_log, FinetuneConfig, Metrics};
use serde::{Deserialize, Serialize};

use super::{apply_finetune, apply_mask, apply_pretrain, emit, in_pool, prepare, required, to_json};
use crate::args::{EvaluateArgs, FinetuneArgs, PretrainArgs};
use crate::error::{CliError, Result};

pub const LOSS_LOG: &str = "loss_log.csv";

/// Metrics JSON written by `finetune`, `evaluate` and reported by `ablate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `scratch`, or the checkpoint / logits file the numbers came from.
    pub source: String,
    pub seed: u64,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_loss: Option<f64>,
    pub metrics: Metrics,
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let mut cfg = prepare(&a.common)?;
    apply_mask(&mut cfg.pretrain, &a.mask);
    apply_pretrain(&mut cfg.pretrain, &a.train);
    let data_path = required(a.data.clone(), &cfg.paths.data_in, "--data")?;
    let out_dir = required(a.out_dir.clone(), &cfg.paths.checkpoint_dir, "--out-dir")?;
    let data = load_sequences(&data_path, false)?;

    let pc = &cfg.pretrain;
    let outcome = in_pool(cfg.workers, || Ok(training::pretrain(pc, &data, Execution::default())?))?;
    outcome.checkpoint()?.save(&out_dir)?;
    let log_path = out_dir.join(LOSS_LOG);
    let file = fs::File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    write_loss_log(std::io::BufWriter::new(file), &outcome.log).map_err(|e| CliError::io(&log_path, e))?;

    match outcome.epoch_means().last() {
        Some(m) => println!(
            "pretrained {} epochs on {} sequences: final l_m {:.4}, l_s {:.4}; checkpoint {}",
            pc.epochs,
            data.len(),
            m.l_m,
            m.l_s,
            out_dir.display()
        ),
        None => println!("0 epochs: saved initial parameters to {}", out_dir.display()),
    }
    Ok(())
}

/// Model settings stored in a checkpoint's hyperparameters.
fn checkpoint_model(ckpt: &Checkpoint, dir: &Path) -> Result<ModelConfig> {
    #[derive(Deserialize)]
    struct WithModel {
        model: ModelConfig,
    }
    let hp: WithModel = serde_json::from_value(ckpt.hyperparameters.clone()).map_err(|e| {
        CliError::Data(format!("{}: checkpoint has no usable model settings: {e}", dir.display()))
    })?;
    Ok(hp.model)
}

/// Backbone parameters and model settings from a pre-training checkpoint.
pub(crate) fn load_backbone(dir: &Path) -> Result<(ParamStore, ModelConfig)> {
    let ckpt = Checkpoint::load(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let model = checkpoint_model(&ckpt, dir)?;
    Ok((online_params(&ckpt.params), model))
}

fn labelled(path: &Path) -> Result<Dataset> {
    let data = load_sequences(path, true)?;
    if data.is_empty() {
        return Err(CliError::Data(format!("{}: no sequences", path.display())));
    }
    Ok(data)
}

pub fn finetune(a: &FinetuneArgs) -> Result<()> {
    let mut cfg = prepare(&a.common)?;
    apply_finetune(&mut cfg.finetune, &a.tune);
    let train = labelled(&required(a.train.clone(), &cfg.paths.data_in, "--train")?)?;
    let test = labelled(&required(a.test.clone(), &cfg.paths.test_in, "--test")?)?;

    let (init, source) = match &a.init {
        Some(dir) => {
            let (params, model) = load_backbone(dir)?;
            // the backbone fixes the architecture; only the class count is ours
            cfg.finetune.model = ModelConfig {
                num_classes: cfg.finetune.model.num_classes,
                ..model
            };
            (Some(params), dir.display().to_string())
        }
        None => (None, "scratch".to_string()),
    };
    let fc = &cfg.finetune;
    let outcome = in_pool(cfg.workers, || {
        Ok(training::finetune(fc, &train, &test, init.as_ref(), Execution::default())?)
    })?;

    if let Some(dir) = a.save.clone().or(cfg.paths.checkpoint_dir.clone()) {
        let mut ckpt = Checkpoint::new(outcome.params.clone());
        ckpt.epoch = fc.epochs;
        ckpt.seeds.insert("seed".into(), fc.seed);
        let saved = FinetuneConfig {
            model: outcome.model.config().clone(),
            ..fc.clone()
        };
        ckpt.hyperparameters = serde_json::to_value(&saved).map_err(|e| CliError::Data(e.to_string()))?;
        ckpt.save(&dir)?;
    }

    let report = MetricsReport {
        source,
        seed: fc.seed,
        sigma: 0.0,
        epochs: Some(fc.epochs),
        final_loss: outcome.log.last().map(|r| r.loss),
        metrics: outcome.metrics,
    };
    eprintln!(
        "fine-tuned from {}: top-1 P-I {:.2}, P-C {:.2}",
        report.source, report.metrics.top1_pi, report.metrics.top1_pc
    );
    let out = a.out.clone().or(cfg.paths.report_out);
    emit(out.as_deref(), &to_json(&report)?)
}

/// Metrics on `data` after adding `N(0, sigma^2)` coordinate noise;
/// `sigma == 0` evaluates the clean sequences.
pub fn noisy_metrics(
    model: &Masa,
    params: &ParamStore,
    data: &Dataset,
    frames: usize,
    sigma: f64,
    seed: u64,
    exec: Execution,
) -> Result<Metrics> {
    let noisy = if sigma == 0.0 {
        data.clone()
    } else {
        let sequences = data
            .sequences
            .iter()
            .map(|s| add_noise(s, sigma, seed))
            .collect::<masa_core::Result<Vec<_>>>()?;
        Dataset::new(sequences, data.num_classes, data.split)?
    };
    Ok(training::evaluate(model, params, &noisy, frames, exec)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LogitRow {
    logits: Vec<f64>,
    label: usize,
}

fn score_logits(path: &Path) -> Result<Metrics> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: LogitRow = serde_json::from_str(&line)
            .map_err(|e| CliError::Data(format!("{} line {}: {e}", path.display(), i + 1)))?;
        logits.push(row.logits);
        labels.push(row.label);
    }
    let classes = logits.first().map_or(0, Vec::len);
    Ok(Metrics::from_logits(&logits, &labels, classes)?)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let cfg = prepare(&a.common)?;
    let report = match (&a.logits, &a.checkpoint) {
        (Some(path), _) => MetricsReport {
            source: path.display().to_string(),
            seed: cfg.seed(),
            sigma: 0.0,
            epochs: None,
            final_loss: None,
            metrics: score_logits(path)?,
        },
        (None, Some(dir)) => {
            let ckpt = Checkpoint::load(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
            let saved: FinetuneConfig = serde_json::from_value(ckpt.hyperparameters.clone())
                .map_err(|e| CliError::Data(format!("{}: not a fine-tuned checkpoint: {e}", dir.display())))?;
            let model = Masa::new(saved.model.clone())?;
            let data = labelled(&required(a.data.clone(), &cfg.paths.test_in, "--data")?)?;
            let frames = a.frames.unwrap_or(saved.frames);
            let seed = cfg.seed();
            let metrics = in_pool(cfg.workers, || {
                noisy_metrics(&model, &ckpt.params, &data, frames, a.noise, seed, Execution::default())
            })?;
            MetricsReport {
                source: dir.display().to_string(),
                seed,
                sigma: a.noise,
                epochs: None,
                final_loss: None,
                metrics,
            }
        }
        (None, None) => return Err(CliError::Usage("--checkpoint or --logits is required".into())),
    };
    let out: Option<PathBuf> = a.out.clone().or(cfg.paths.report_out);
    emit(out.as_deref(), &to_json(&report)?)
}

