use masa_core::masking::{motion_ratios, plan_mask};
use masa_core::posedata::{gen_synthetic_split, load_sequences, normalize_sequence, save_sequences, Split, SyntheticSpec, NUM_JOINTS};
use masa_core::seeding::{hash_str, rng_for};

use super::{apply_mask, emit, prepare, required};
use crate::args::{GenDataArgs, MaskStatsArgs, SplitArg};
use crate::config::{seed_env, RunConfig};
use crate::error::{CliError, Result};

const MASK_STATS_STREAM: u64 = 0x3a57;

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg = RunConfig::default();
    cfg.resolve_seed(a.seed, seed_env().as_deref())?;
    let spec = SyntheticSpec {
        jitter: a.jitter,
        static_motion: a.static_motion,
        ..SyntheticSpec::new(a.classes, a.per_class, a.frames, cfg.seed())
    };
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let data = gen_synthetic_split(&spec, split)?;
    save_sequences(&data, &a.out)?;
    println!("wrote {} sequences to {}", data.len(), a.out.display());
    Ok(())
}

pub fn mask_stats(a: &MaskStatsArgs) -> Result<()> {
    let mut cfg = prepare(&a.common)?;
    apply_mask(&mut cfg.pretrain, &a.mask);
    let settings = cfg.pretrain.mask_settings();
    settings.validate()?;
    let path = required(a.data.clone(), &cfg.paths.data_in, "--data")?;
    let data = load_sequences(&path, false)?;
    let seed = cfg.seed();

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(format!("csv: {e}"));
    w.write_record(["id", "T", "S", "M", "mean_p", "fallback"]).map_err(csv_err)?;
    let (mut sum_t, mut sum_s, mut sum_m, mut sum_p, mut fallbacks) = (0usize, 0usize, 0usize, 0.0, 0usize);
    for seq in &data.sequences {
        let mut rng = rng_for(seed, &[MASK_STATS_STREAM, hash_str(seq.id())]);
        let (field, plan) = plan_mask(&normalize_sequence(seq), seq.conf(), NUM_JOINTS, &settings, &mut rng)?;
        let ratios = motion_ratios(&field, settings.eps_m, settings.pi_denominator);
        let mean_p = ratios.iter().sum::<f64>() / ratios.len() as f64;
        w.write_record([
            seq.id().to_string(),
            seq.frames().to_string(),
            plan.candidates.len().to_string(),
            plan.masked.len().to_string(),
            mean_p.to_string(),
            u8::from(plan.fallback).to_string(),
        ])
        .map_err(csv_err)?;
        sum_t += seq.frames();
        sum_s += plan.candidates.len();
        sum_m += plan.masked.len();
        sum_p += mean_p;
        fallbacks += usize::from(plan.fallback);
    }
    // footer: corpus means, and the number of fallback sequences
    let n = data.len() as f64;
    w.write_record([
        "__corpus__".to_string(),
        (sum_t as f64 / n).to_string(),
        (sum_s as f64 / n).to_string(),
        (sum_m as f64 / n).to_string(),
        (sum_p / n).to_string(),
        fallbacks.to_string(),
    ])
    .map_err(csv_err)?;
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    let out = a.out.clone().or(cfg.paths.report_out);
    emit(out.as_deref(), &bytes)
}
