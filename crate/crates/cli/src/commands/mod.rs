mod ablate;
mod data;
mod gradcheck;
mod train;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use masa_core::exec::with_workers;
use masa_core::training::{FinetuneConfig, PretrainConfig};

pub use ablate::{ablate, parse_sweep, Sweep, SweepKey};
pub use data::{gen_data, mask_stats};
pub use gradcheck::grad_check;
pub use train::{evaluate, finetune, noisy_metrics, pretrain, MetricsReport};

use crate::args::{CommonArgs, FinetuneFlags, MaskArgs, PretrainFlags};
use crate::config::{seed_env, set, RunConfig};
use crate::error::{CliError, Result};

/// Loads the config file, applies the seed and worker flags.
fn prepare(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.resolve_seed(common.seed, seed_env().as_deref())?;
    set(&mut cfg.workers, common.workers);
    Ok(cfg)
}

fn apply_mask(cfg: &mut PretrainConfig, m: &MaskArgs) {
    set(&mut cfg.k_interval, m.k);
    set(&mut cfg.eps_c, m.eps_c);
    set(&mut cfg.eps_m, m.eps_m);
    set(&mut cfg.delta, m.delta);
    set(&mut cfg.alpha, m.alpha);
    set(&mut cfg.pi_denominator, m.pi_denominator);
}

fn apply_pretrain(cfg: &mut PretrainConfig, f: &PretrainFlags) {
    set(&mut cfg.epochs, f.epochs);
    set(&mut cfg.warmup_epochs, f.warmup_epochs);
    set(&mut cfg.batch_size, f.batch_size);
    set(&mut cfg.base_lr, f.lr);
    set(&mut cfg.lambda_s, f.lambda_s);
    set(&mut cfg.ramp_epochs, f.ramp_epochs);
    set(&mut cfg.bank_k, f.bank_k);
    set(&mut cfg.mu, f.mu);
    set(&mut cfg.tau, f.tau);
    set(&mut cfg.alpha_r, f.alpha_r);
    if f.no_motion {
        cfg.motion = false;
    }
    if f.no_alignment {
        cfg.alignment = false;
    }
}

fn apply_finetune(cfg: &mut FinetuneConfig, f: &FinetuneFlags) {
    set(&mut cfg.epochs, f.epochs);
    set(&mut cfg.base_lr, f.lr);
    set(&mut cfg.batch_size, f.batch_size);
    set(&mut cfg.frames, f.frames);
}

/// Flag value, else config value, else a usage error naming the flag.
fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| CliError::Usage(format!("{name} is required (flag or config paths)")))
}

fn in_pool<R: Send>(workers: usize, f: impl FnOnce() -> Result<R> + Send) -> Result<R> {
    with_workers(workers, f)?
}

/// Writes `bytes` to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            fs::write(p, bytes).map_err(|e| CliError::io(p, e))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Data(format!("stdout: {e}")))
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    Ok(text.into_bytes())
}
