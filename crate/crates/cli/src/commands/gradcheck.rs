use masa_autograd::gradcheck::primitive_suite;
use masa_core::training::check::PipelineObjective;

use crate::args::GradCheckArgs;
use crate::config::{seed_env, RunConfig};
use crate::error::{CliError, Result};

/// Alignment weights checked on the full objective: the configured one, and
/// full weight so the projection head is not drowned out.
const LAMBDAS: [f64; 2] = [0.05, 1.0];

pub fn grad_check(a: &GradCheckArgs) -> Result<()> {
    if !(a.tolerance > 0.0) || !(a.ops_tolerance > 0.0) {
        return Err(CliError::Usage("tolerances must be positive".into()));
    }
    let mut cfg = RunConfig::default();
    cfg.resolve_seed(a.seed, seed_env().as_deref())?;
    let seed = cfg.seed();
    let mut failures = Vec::new();

    for c in primitive_suite(seed, a.step)? {
        let ok = c.report.max_rel_error < a.ops_tolerance;
        println!(
            "{} op {:<14} max_rel_error {:.3e}",
            if ok { "PASS" } else { "FAIL" },
            c.op,
            c.report.max_rel_error
        );
        if !ok {
            failures.push(c.op.to_string());
        }
    }
    if !a.ops_only {
        for lambda in LAMBDAS {
            let report = PipelineObjective::tiny(seed, lambda)?.check(a.step, a.entries, seed)?;
            let ok = report.max_rel_error < a.tolerance;
            println!(
                "{} full objective (lambda {lambda}) max_rel_error {:.3e} over {} entries",
                if ok { "PASS" } else { "FAIL" },
                report.max_rel_error,
                report.checked
            );
            if !ok {
                failures.push(format!("full objective (lambda {lambda})"));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!("gradient check over tolerance: {}", failures.join(", "))))
    }
}
