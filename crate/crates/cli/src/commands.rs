use earlystop::checks;
use earlystop::report::{deviation_csv, summary_csv};
use earlystop::{estimate_deviation, run_experiment, DeviationTargets, ExperimentConfig};

use crate::config::{CliConfig, CommandKind, Format};
use crate::output::write_output;
use crate::CliError;

pub fn run_command(cfg: &CliConfig) -> Result<(), CliError> {
    let out = cfg.out.as_deref();
    let experiments: Vec<ExperimentConfig> = cfg
        .sample_sizes()
        .into_iter()
        .map(|n| cfg.experiment(n))
        .collect();
    if cfg.dry_run {
        return write_output(&experiments, || unreachable!(), out, Format::Json);
    }
    match cfg.command {
        CommandKind::Simulate => {
            let result = run_experiment(&experiments[0])?;
            write_output(
                &result,
                || summary_csv(std::slice::from_ref(&result)),
                out,
                cfg.format,
            )
        }
        CommandKind::Sweep => {
            let results = experiments
                .iter()
                .map(run_experiment)
                .collect::<Result<Vec<_>, _>>()?;
            write_output(&results, || summary_csv(&results), out, cfg.format)
        }
        CommandKind::Deviation => {
            let targets = DeviationTargets {
                times: cfg.ts.clone(),
                ys: cfg.ys.clone(),
            };
            let est = estimate_deviation(&experiments[0], &targets)?;
            write_output(&est, || deviation_csv(&est), out, cfg.format)
        }
        CommandKind::Check => check(cfg),
    }
}

fn check(cfg: &CliConfig) -> Result<(), CliError> {
    let reports = checks::run_all(cfg.seed)?;
    let failed = reports.iter().filter(|r| !r.passed).count();
    let rows: Vec<serde_json::Value> = reports
        .iter()
        .map(|r| serde_json::json!({ "name": r.name, "passed": r.passed, "detail": r.detail }))
        .collect();
    let text = || {
        let mut s = String::new();
        for r in &reports {
            let status = if r.passed { "PASS" } else { "FAIL" };
            s.push_str(&format!("{status} {}: {}\n", r.name, r.detail));
        }
        s
    };
    write_output(&rows, text, cfg.out.as_deref(), cfg.format)?;
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::ChecksFailed(failed))
    }
}
