use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use masa_autograd::Checkpoint;
use masa_cli::commands::MetricsReport;
use masa_core::model::{Masa, ModelConfig};

const TINY_MODEL: &str =
    r#"{"d_e":16,"enc_layers":1,"heads":2,"mlp_ratio":2,"proj_dim":8,"gcn_layers":1,"gcn_hidden":4,"max_t":16}"#;

fn masa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masa"))
        .args(args)
        .current_dir(dir)
        .env_remove("MASA_SEED")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = masa(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn tiny_config(dir: &Path, pretrain_epochs: usize, finetune_epochs: usize) -> PathBuf {
    let path = dir.join("run.json");
    let text = format!(
        r#"{{"pretrain": {{"epochs": {pretrain_epochs}, "warmup_epochs": 0, "batch_size": 4, "bank_k": 8, "model": {TINY_MODEL}}},
            "finetune": {{"epochs": {finetune_epochs}, "frames": 8, "model": {TINY_MODEL}}}}}"#
    );
    fs::write(&path, text).unwrap();
    path
}

fn small_corpus(dir: &Path) {
    ok(dir, &["gen-data", "--classes", "3", "--per-class", "3", "--frames", "16", "--seed", "1", "--out", "tr.jsonl"]);
    ok(
        dir,
        &["gen-data", "--classes", "3", "--per-class", "2", "--frames", "16", "--seed", "1", "--split", "test", "--out", "te.jsonl"],
    );
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn gen_data_counts_and_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let args = |out: &'static str| ["gen-data", "--classes", "10", "--per-class", "20", "--frames", "48", "--seed", "7", "--out", out];
    ok(d, &args("a.jsonl"));
    ok(d, &args("b.jsonl"));
    let a = fs::read(d.join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 200);
    assert_eq!(code(&masa(d, &["gen-data", "--classes", "1", "--out", "c.jsonl"])), 1);
}

#[test]
fn seed_comes_from_the_environment_when_not_given() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |seed_env: Option<&str>, extra: &[&str], out: &str| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_masa"));
        cmd.current_dir(d).env_remove("MASA_SEED");
        if let Some(s) = seed_env {
            cmd.env("MASA_SEED", s);
        }
        cmd.args(["gen-data", "--classes", "2", "--per-class", "1", "--frames", "8", "--out", out]).args(extra);
        assert!(cmd.output().unwrap().status.success());
        fs::read(d.join(out)).unwrap()
    };
    let env5 = run(Some("5"), &[], "e5.jsonl");
    assert_eq!(env5, run(None, &["--seed", "5"], "f5.jsonl"));
    assert_ne!(env5, run(None, &[], "d0.jsonl"));
    assert_eq!(run(Some("9"), &["--seed", "5"], "g5.jsonl"), env5);
}

#[test]
fn mask_stats_on_static_corpus_always_falls_back() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--classes", "2", "--per-class", "3", "--frames", "16", "--static", "--out", "s.jsonl"]);
    let rows = csv_rows(&ok(d, &["mask-stats", "--data", "s.jsonl"]));
    let (body, footer) = rows.split_at(rows.len() - 1);
    assert_eq!(body.len(), 6);
    for r in body {
        assert_eq!(r[2], "0", "{r:?}");
        assert_eq!(r[5], "1", "{r:?}");
    }
    assert_eq!(footer[0][0], "__corpus__");
    assert_eq!(footer[0][5], "6");
}

#[test]
fn mask_stats_mask_sizes_and_delta_monotonicity() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--classes", "4", "--per-class", "5", "--frames", "32", "--seed", "3", "--out", "g.jsonl"]);
    let rows = csv_rows(&ok(d, &["mask-stats", "--data", "g.jsonl"]));
    let mut saw_candidates = false;
    for r in &rows[..rows.len() - 1] {
        let (s, m): (usize, usize) = (r[2].parse().unwrap(), r[3].parse().unwrap());
        if r[5] == "0" {
            assert_eq!(m, (0.9 * s as f64 + 1e-9).floor() as usize, "{r:?}");
            saw_candidates |= s > 0;
        }
    }
    assert!(saw_candidates);
    let mean_s = |delta: &str| -> f64 {
        let rows = csv_rows(&ok(d, &["mask-stats", "--data", "g.jsonl", "--delta", delta]));
        rows.last().unwrap()[2].parse().unwrap()
    };
    let lo = mean_s("0.1");
    let hi = mean_s("0.9");
    assert!(hi <= lo, "mean |S| rose from {lo} to {hi}");
}

#[test]
fn missing_data_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = masa(dir.path(), &["mask-stats", "--data", "nope.jsonl"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.jsonl"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_corpus(d);
    fs::write(d.join("bad.json"), r#"{"pretrain": {"epochz": 1}}"#).unwrap();
    let out = masa(d, &["pretrain", "--config", "bad.json", "--data", "tr.jsonl", "--out-dir", "ck"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochz"));
}

#[test]
fn zero_epoch_pretraining_saves_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_corpus(d);
    let cfg = tiny_config(d, 0, 1);
    ok(d, &["pretrain", "--config", cfg.to_str().unwrap(), "--data", "tr.jsonl", "--out-dir", "ck", "--seed", "4"]);
    let ckpt = Checkpoint::load(d.join("ck")).unwrap();
    let model = Masa::new(ModelConfig {
        d_e: 16,
        enc_layers: 1,
        heads: 2,
        mlp_ratio: 2,
        proj_dim: 8,
        gcn_layers: 1,
        gcn_hidden: 4,
        max_t: 16,
        ..ModelConfig::default()
    })
    .unwrap();
    let init = model.init_params(4).unwrap();
    for (path, p) in init.iter() {
        assert_eq!(ckpt.params.value(path).unwrap(), &p.value, "{path}");
    }
    assert_eq!(ckpt.epoch, 0);
    assert_eq!(ckpt.seeds["seed"], 4);
}

/// Flag beats file beats default, observed through the saved hyperparameters.
#[test]
fn configuration_precedence_three_ways() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_corpus(d);
    fs::write(d.join("file.json"), r#"{"seed": 11, "pretrain": {"alpha": 0.5, "batch_size": 8}}"#).unwrap();
    let saved = |extra: &[&str], out: &str| -> serde_json::Value {
        let mut args = vec!["pretrain", "--data", "tr.jsonl", "--epochs", "0", "--out-dir", out];
        args.extend_from_slice(extra);
        ok(d, &args);
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(d.join(out).join("manifest.json")).unwrap()).unwrap();
        manifest["hyperparameters"].clone()
    };
    let default = saved(&[], "c0");
    assert_eq!(default["alpha"], 0.9);
    assert_eq!(default["batch_size"], 16);
    assert_eq!(default["seed"], 0);
    let file = saved(&["--config", "file.json"], "c1");
    assert_eq!(file["alpha"], 0.5);
    assert_eq!(file["batch_size"], 8);
    assert_eq!(file["seed"], 11);
    let flag = saved(&["--config", "file.json", "--alpha", "0.7", "--seed", "3"], "c2");
    assert_eq!(flag["alpha"], 0.7);
    assert_eq!(flag["batch_size"], 8);
    assert_eq!(flag["seed"], 3);
}

#[test]
fn training_commands_are_byte_for_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_corpus(d);
    let cfg = tiny_config(d, 2, 2);
    let c = cfg.to_str().unwrap();
    for run in ["a", "b"] {
        ok(d, &["pretrain", "--config", c, "--data", "tr.jsonl", "--out-dir", &format!("pre-{run}")]);
        ok(
            d,
            &[
                "finetune", "--config", c, "--train", "tr.jsonl", "--test", "te.jsonl", "--init", &format!("pre-{run}"),
                "--out", &format!("m-{run}.json"), "--save", &format!("ft-{run}"),
            ],
        );
    }
    for f in ["manifest.json", "params.bin", "loss_log.csv"] {
        assert_eq!(fs::read(d.join("pre-a").join(f)).unwrap(), fs::read(d.join("pre-b").join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read(d.join("ft-a/params.bin")).unwrap(), fs::read(d.join("ft-b/params.bin")).unwrap());
    let ma = fs::read_to_string(d.join("m-a.json")).unwrap();
    let mb = fs::read_to_string(d.join("m-b.json")).unwrap();
    assert_eq!(ma.replace("pre-a", "pre-b"), mb);
}

#[test]
fn scratch_and_pretrained_finetuning_write_separate_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_corpus(d);
    let cfg = tiny_config(d, 1, 2);
    let c = cfg.to_str().unwrap();
    ok(d, &["pretrain", "--config", c, "--data", "tr.jsonl", "--out-dir", "pre"]);
    ok(d, &["finetune", "--config", c, "--train", "tr.jsonl", "--test", "te.jsonl", "--init", "pre", "--out", "pre.json"]);
    ok(d, &["finetune", "--config", c, "--train", "tr.jsonl", "--test", "te.jsonl", "--from-scratch", "--out", "scr.json"]);
    let read = |f: &str| -> MetricsReport { serde_json::from_str(&fs::read_to_string(d.join(f)).unwrap()).unwrap() };
    let (p, s) = (read("pre.json"), read("scr.json"));
    assert_eq!(p.source, "pre");
    assert_eq!(s.source, "scratch");
    assert_eq!(p.metrics.count, 6);
    let both = masa(d, &["finetune", "--config", c, "--train", "tr.jsonl", "--test", "te.jsonl", "--init", "pre", "--from-scratch"]);
    assert_eq!(code(&both), 1);
}

#[test]
fn evaluate_scores_the_four_sample_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let rows = [
        r#"{"logits": [2.0, 1.0], "label": 0}"#,
        r#"{"logits": [3.0, 0.0], "label": 0}"#,
        r#"{"logits": [0.5, 0.1], "label": 0}"#,
        r#"{"logits": [1.0, 0.0], "label": 1}"#,
    ];
    fs::write(d.join("fixture.jsonl"), rows.join("\n")).unwrap();
    let report: MetricsReport = serde_json::from_str(&ok(d, &["evaluate", "--logits", "fixture.jsonl"])).unwrap();
    assert_eq!(report.metrics.top1_pi, 75.0);
    assert_eq!(report.metrics.top1_pc, 50.0);
}

#[test]
fn zero_noise_evaluation_equals_clean_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_corpus(d);
    let c = tiny_config(d, 1, 2);
    let c = c.to_str().unwrap();
    ok(d, &["finetune", "--config", c, "--train", "tr.jsonl", "--test", "te.jsonl", "--from-scratch", "--save", "ft"]);
    let clean = ok(d, &["evaluate", "--checkpoint", "ft", "--data", "te.jsonl"]);
    let zero = ok(d, &["evaluate", "--checkpoint", "ft", "--data", "te.jsonl", "--noise", "0"]);
    assert_eq!(clean, zero);
    let noisy: MetricsReport =
        serde_json::from_str(&ok(d, &["evaluate", "--checkpoint", "ft", "--data", "te.jsonl", "--noise", "40"])).unwrap();
    assert_eq!(noisy.sigma, 40.0);
}

#[test]
fn ablation_sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_corpus(d);
    let c = tiny_config(d, 1, 1);
    let base = ["ablate", "--config", c.to_str().unwrap(), "--train", "tr.jsonl", "--test", "te.jsonl"];
    let run = |sweep: &str| csv_rows(&ok(d, &[&base[..], &["--sweep", sweep]].concat()));

    assert_eq!(run("k=1,3,5,7").len(), 4);

    let sigma = run("sigma=0,5");
    let clean = ok(d, &[&base[..], &["--sweep", "components=both"]].concat());
    // the sigma sweep trains with the base settings, which is the `both` row
    assert_eq!(sigma[0][2..6], csv_rows(&clean)[0][2..6]);

    let alpha = run("alpha=0.0");
    assert_eq!(alpha[0][6], "0", "empty masks contribute no reconstruction loss");
    assert_ne!(alpha[0][7], "", "alignment still trains");

    let comps = run("components=none,ma,sa,both");
    assert_eq!(comps.len(), 4);
    assert_eq!(comps[0][6], "");

    let bad = masa(d, &[&base[..], &["--sweep", "gamma=1"]].concat());
    assert_eq!(code(&bad), 1);
}

#[test]
fn grad_check_contract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = ok(d, &["grad-check"]);
    assert!(out.lines().all(|l| l.starts_with("PASS")), "{out}");
    assert!(out.contains("full objective"));
    let ops = ok(d, &["grad-check", "--ops-only"]);
    assert!(!ops.contains("full objective"));
    assert_eq!(code(&masa(d, &["grad-check", "--tolerance", "1e-12"])), 3);
}
