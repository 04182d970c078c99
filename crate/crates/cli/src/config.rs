//! JSON run configuration.
//!
//! Values resolve as command-line flag, then config file, then the built-in
//! default. The seed has one extra layer: `MASA_SEED` stands in for the
//! default when neither a flag nor the file sets it.

use std::fs;
use std::path::{Path, PathBuf};

use masa_core::training::{FinetuneConfig, PretrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "MASA_SEED";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Training (or pre-training) data, JSON lines.
    pub data_in: Option<PathBuf>,
    /// Held-out evaluation data, JSON lines.
    pub test_in: Option<PathBuf>,
    pub checkpoint_dir: Option<PathBuf>,
    /// Metrics JSON or CSV report destination.
    pub report_out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Applied to every section when set.
    pub seed: Option<u64>,
    /// Worker threads; `0` uses every core.
    pub workers: usize,
    pub paths: Paths,
    /// Pre-training schedule, masking and model settings. `mask-stats` reads
    /// its masking parameters from here too.
    pub pretrain: PretrainConfig,
    pub finetune: FinetuneConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// The file's contents, or all defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                Self::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
            }
        }
    }

    /// Resolves the seed from `flag`, the file, then `env`, and writes it into
    /// both sections. With none of the three the section seeds stand.
    pub fn resolve_seed(&mut self, flag: Option<u64>, env: Option<&str>) -> Result<()> {
        let from_env = env
            .map(|v| {
                v.trim()
                    .parse::<u64>()
                    .map_err(|_| CliError::Usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer")))
            })
            .transpose()?;
        if let Some(seed) = flag.or(self.seed).or(from_env) {
            self.seed = Some(seed);
            self.pretrain.seed = seed;
            self.finetune.seed = seed;
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.pretrain.seed)
    }
}

/// `MASA_SEED` from the process environment.
pub fn seed_env() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

/// Replaces `slot` when the flag was given.
pub(crate) fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
