use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use masa_core::masking::PiDenominator;

#[derive(Debug, Parser)]
#[command(name = "masa", version, about = "Masked motion pre-training and fine-tuning for pose sequences")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labelled corpus as JSON lines.
    GenData(GenDataArgs),
    /// Per-sequence candidate and mask statistics as CSV.
    MaskStats(MaskStatsArgs),
    /// Self-supervised pre-training; writes a checkpoint and a loss log.
    Pretrain(PretrainArgs),
    /// Supervised fine-tuning and test evaluation.
    Finetune(FinetuneArgs),
    /// Evaluate a fine-tuned checkpoint, or score precomputed logits.
    Evaluate(EvaluateArgs),
    /// Sweep one setting through pre-training and fine-tuning.
    Ablate(AblateArgs),
    /// Finite-difference gradient checks.
    GradCheck(GradCheckArgs),
}

/// Options shared by the training commands.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream [default: $MASA_SEED, else 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 20)]
    pub per_class: usize,
    #[arg(long, default_value_t = 48)]
    pub frames: usize,
    /// [default: $MASA_SEED, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = SplitArg::Train)]
    pub split: SplitArg,
    /// Per-coordinate jitter standard deviation in pixels.
    #[arg(long, default_value_t = 2.0)]
    pub jitter: f64,
    /// Motionless sequences: every frame repeats one pose.
    #[arg(long = "static")]
    pub static_motion: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Masking overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct MaskArgs {
    /// Motion interval in frames.
    #[arg(long)]
    pub k: Option<usize>,
    /// Confidence truncation threshold.
    #[arg(long)]
    pub eps_c: Option<f64>,
    /// Minimum weighted displacement for a moving joint.
    #[arg(long)]
    pub eps_m: Option<f64>,
    /// Minimum share of moving joints for a candidate frame.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Share of candidates masked.
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_parser = parse_pi)]
    pub pi_denominator: Option<PiDenominator>,
}

fn parse_pi(s: &str) -> Result<PiDenominator, String> {
    s.parse().map_err(|e: masa_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct MaskStatsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub mask: MaskArgs,
    /// Sequences to analyse [config: paths.data_in].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// CSV destination; stdout when absent [config: paths.report_out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Pre-training overrides, shared by `pretrain` and `ablate`.
#[derive(Debug, Clone, Default, Args)]
pub struct PretrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda_s: Option<f64>,
    #[arg(long)]
    pub ramp_epochs: Option<usize>,
    /// Memory bank capacity.
    #[arg(long)]
    pub bank_k: Option<usize>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Share of frames dropped for the key view.
    #[arg(long)]
    pub alpha_r: Option<f64>,
    /// Disable the reconstruction objective.
    #[arg(long)]
    pub no_motion: bool,
    /// Disable the alignment objective.
    #[arg(long)]
    pub no_alignment: bool,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub mask: MaskArgs,
    #[command(flatten)]
    pub train: PretrainFlags,
    /// Training sequences [config: paths.data_in].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory [config: paths.checkpoint_dir].
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Fine-tuning overrides, shared by `finetune` and `ablate`.
#[derive(Debug, Clone, Default, Args)]
pub struct FinetuneFlags {
    #[arg(id = "ft_epochs", long = "ft-epochs", value_name = "EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(id = "ft_lr", long = "ft-lr", value_name = "LR")]
    pub lr: Option<f64>,
    #[arg(id = "ft_batch_size", long = "ft-batch-size", value_name = "BATCH_SIZE")]
    pub batch_size: Option<usize>,
    /// Frames sampled per sequence.
    #[arg(long)]
    pub frames: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("start").required(true).args(["init", "from_scratch"])))]
pub struct FinetuneArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub tune: FinetuneFlags,
    /// Labelled training sequences [config: paths.data_in].
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Labelled test sequences [config: paths.test_in].
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Pre-training checkpoint providing the embedding and encoder.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Start from random weights.
    #[arg(long)]
    pub from_scratch: bool,
    /// Metrics JSON destination [config: paths.report_out].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Where to save the fine-tuned model [config: paths.checkpoint_dir].
    #[arg(long)]
    pub save: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["checkpoint", "logits"])))]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Fine-tuned checkpoint directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// JSON lines of `{"logits": [...], "label": n}` to score directly.
    #[arg(long)]
    pub logits: Option<PathBuf>,
    /// Labelled sequences [config: paths.test_in].
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Gaussian coordinate noise added before evaluation, in pixels.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Metrics JSON destination; stdout when absent [config: paths.report_out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub mask: MaskArgs,
    #[command(flatten)]
    pub pretrain: PretrainFlags,
    #[command(flatten)]
    pub tune: FinetuneFlags,
    /// `key=v1,v2,...` with key one of k, alpha, sigma, lambda_s, eps_m,
    /// delta, components (values none, ma, sa, both).
    #[arg(long)]
    pub sweep: String,
    /// Training sequences; a desk-scale synthetic corpus when absent.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// CSV destination; stdout when absent [config: paths.report_out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Bound on the full-objective relative error.
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Bound on each primitive operator's relative error.
    #[arg(long, default_value_t = 1e-6)]
    pub ops_tolerance: f64,
    /// Only check primitive operators.
    #[arg(long)]
    pub ops_only: bool,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Parameters sampled for the full-objective check.
    #[arg(long, default_value_t = 400)]
    pub entries: usize,
    /// [default: $MASA_SEED, else 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        super::Cli::command().debug_assert();
    }
}
