use std::str::FromStr;

use masa_core::exec::Execution;
use masa_core::model::{Masa, ModelConfig};
use masa_core::posedata::{gen_synthetic_split, load_sequences, Dataset, Split, SyntheticSpec};
use masa_core::training::{self, FinetuneConfig, Metrics, PretrainConfig};

use super::{apply_finetune, apply_mask, apply_pretrain, emit, in_pool, noisy_metrics, prepare};
use crate::args::AblateArgs;
use crate::error::{CliError, Result};

/// Desk-scale corpus used when no data files are given.
const DESK_CLASSES: usize = 10;
const DESK_PER_CLASS: usize = 20;
const DESK_FRAMES: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKey {
    K,
    Alpha,
    Sigma,
    LambdaS,
    EpsM,
    Delta,
    Components,
}

impl FromStr for SweepKey {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "k" => Self::K,
            "alpha" => Self::Alpha,
            "sigma" => Self::Sigma,
            "lambda_s" => Self::LambdaS,
            "eps_m" => Self::EpsM,
            "delta" => Self::Delta,
            "components" => Self::Components,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown sweep key `{other}` (expected k, alpha, sigma, lambda_s, eps_m, delta or components)"
                )))
            }
        })
    }
}

/// Which objectives a `components` row pre-trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Components {
    None,
    Motion,
    Alignment,
    Both,
}

impl FromStr for Components {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Self::None,
            "ma" => Self::Motion,
            "sa" => Self::Alignment,
            "both" => Self::Both,
            other => return Err(CliError::Usage(format!("component set `{other}` is not none, ma, sa or both"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub key: SweepKey,
    pub values: Vec<String>,
}

/// Parses `key=v1,v2,...`, checking every value's type up front.
pub fn parse_sweep(spec: &str) -> Result<Sweep> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("sweep `{spec}` is not key=v1,v2,...")))?;
    let key: SweepKey = key.trim().parse()?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Usage(format!("sweep `{spec}` has no values")));
    }
    for v in &values {
        let ok = match key {
            SweepKey::K => v.parse::<usize>().is_ok(),
            SweepKey::Components => v.parse::<Components>().is_ok(),
            _ => v.parse::<f64>().is_ok_and(f64::is_finite),
        };
        if !ok {
            return Err(CliError::Usage(format!("`{v}` is not a valid value for this sweep")));
        }
    }
    Ok(Sweep { key, values })
}

fn number(v: &str) -> f64 {
    v.parse().expect("validated by parse_sweep")
}

struct Row {
    metrics: Metrics,
    l_m: Option<f64>,
    l_s: Option<f64>,
    fallbacks: Option<usize>,
}

/// Pre-trains with `pc` (unless `pc` is `None`) and fine-tunes on top.
fn train_and_test(pc: Option<&PretrainConfig>, fc: &FinetuneConfig, train: &Dataset, test: &Dataset) -> Result<(Row, training::FinetuneOutcome)> {
    let exec = Execution::default();
    let (init, l_m, l_s, fallbacks) = match pc {
        Some(pc) => {
            let out = training::pretrain(pc, train, exec)?;
            let last = out.epoch_means().last().copied();
            let fallbacks = out.log.iter().map(|r| r.fallbacks).sum();
            (Some(out.pair.query), last.map(|m| m.l_m), last.map(|m| m.l_s), Some(fallbacks))
        }
        None => (None, None, None, None),
    };
    let outcome = training::finetune(fc, train, test, init.as_ref(), exec)?;
    Ok((
        Row {
            metrics: outcome.metrics.clone(),
            l_m,
            l_s,
            fallbacks,
        },
        outcome,
    ))
}

fn datasets(a: &AblateArgs, cfg: &crate::config::RunConfig) -> Result<(Dataset, Dataset)> {
    let train = a.train.clone().or(cfg.paths.data_in.clone());
    let test = a.test.clone().or(cfg.paths.test_in.clone());
    match (train, test) {
        (Some(tr), Some(te)) => Ok((load_sequences(&tr, true)?, load_sequences(&te, true)?)),
        (None, None) => {
            let spec = SyntheticSpec::new(DESK_CLASSES, DESK_PER_CLASS, DESK_FRAMES, cfg.seed());
            Ok((gen_synthetic_split(&spec, Split::Train)?, gen_synthetic_split(&spec, Split::Test)?))
        }
        _ => Err(CliError::Usage("give both --train and --test, or neither".into())),
    }
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let sweep = parse_sweep(&a.sweep)?;
    let mut cfg = prepare(&a.common)?;
    apply_mask(&mut cfg.pretrain, &a.mask);
    apply_pretrain(&mut cfg.pretrain, &a.pretrain);
    apply_finetune(&mut cfg.finetune, &a.tune);
    // one architecture for both stages so every row can transfer weights
    cfg.finetune.model = ModelConfig {
        num_classes: cfg.finetune.model.num_classes,
        ..cfg.pretrain.model.clone()
    };
    let (train, test) = datasets(a, &cfg)?;

    let rows = in_pool(cfg.workers, || {
        let mut rows = Vec::with_capacity(sweep.values.len());
        if sweep.key == SweepKey::Sigma {
            let (_, trained) = train_and_test(Some(&cfg.pretrain), &cfg.finetune, &train, &test)?;
            let model = Masa::new(trained.model.config().clone())?;
            for v in &sweep.values {
                let metrics = noisy_metrics(
                    &model,
                    &trained.params,
                    &test,
                    cfg.finetune.frames,
                    number(v),
                    cfg.seed(),
                    Execution::default(),
                )?;
                rows.push(Row {
                    metrics,
                    l_m: None,
                    l_s: None,
                    fallbacks: None,
                });
            }
            return Ok(rows);
        }
        for v in &sweep.values {
            let mut pc = cfg.pretrain.clone();
            let mut skip_pretrain = false;
            match sweep.key {
                SweepKey::K => pc.k_interval = v.parse().expect("validated"),
                SweepKey::Alpha => pc.alpha = number(v),
                SweepKey::LambdaS => pc.lambda_s = number(v),
                SweepKey::EpsM => pc.eps_m = number(v),
                SweepKey::Delta => pc.delta = number(v),
                SweepKey::Components => match v.parse::<Components>()? {
                    Components::None => skip_pretrain = true,
                    Components::Motion => (pc.motion, pc.alignment) = (true, false),
                    Components::Alignment => (pc.motion, pc.alignment) = (false, true),
                    Components::Both => (pc.motion, pc.alignment) = (true, true),
                },
                SweepKey::Sigma => unreachable!("handled above"),
            }
            let pc = (!skip_pretrain).then_some(&pc);
            rows.push(train_and_test(pc, &cfg.finetune, &train, &test)?.0);
        }
        Ok(rows)
    })?;

    let key = a.sweep.split_once('=').map_or("", |(k, _)| k.trim());
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(format!("csv: {e}"));
    w.write_record([
        "key", "value", "top1_pi", "top5_pi", "top1_pc", "top5_pc", "final_l_m", "final_l_s", "fallbacks",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (v, r) in sweep.values.iter().zip(&rows) {
        w.write_record([
            key.to_string(),
            v.clone(),
            r.metrics.top1_pi.to_string(),
            r.metrics.top5_pi.to_string(),
            r.metrics.top1_pc.to_string(),
            r.metrics.top5_pc.to_string(),
            opt(r.l_m),
            opt(r.l_s),
            r.fallbacks.map_or(String::new(), |f| f.to_string()),
        ])
        .map_err(csv_err)?;
        eprintln!("{key}={v}: top-1 P-I {:.2}", r.metrics.top1_pi);
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    let out = a.out.clone().or(cfg.paths.report_out.clone());
    emit(out.as_deref(), &bytes)
}
