//! Running a protocol × seed sweep and writing its results.

use std::path::Path;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::metrics::{centralized_ceiling, relative_target, CeilingOptions, Summary, SummaryRow};
use crate::error::{Error, Result};
use crate::sim::{self, RunLog, SimConfig};

pub struct ExperimentOutput {
    pub summary: Summary,
    /// Run logs in `(protocol, seed)` order.
    pub logs: Vec<RunLog>,
}

/// Absolute targets followed by ceiling-relative ones, plus the ceiling if it
/// was needed.
pub fn resolve_targets(cfg: &ExperimentConfig) -> Result<(Option<f64>, Vec<f64>)> {
    let mut targets = cfg.targets.clone();
    let ceiling = if cfg.ceiling_fractions.is_empty() {
        None
    } else {
        let c = centralized_ceiling(&cfg.settings, CeilingOptions::default())?;
        targets.extend(cfg.ceiling_fractions.iter().map(|&f| relative_target(c, f)));
        Some(c)
    };
    Ok((ceiling, targets))
}

/// One simulation per `(protocol, seed)`. Runs execute in parallel; results
/// are assembled in sorted order so the output does not depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let (ceiling, targets) = resolve_targets(cfg)?;
    let mut jobs: Vec<_> = cfg
        .protocols
        .iter()
        .flat_map(|&p| cfg.seeds.iter().map(move |&s| (p, s)))
        .collect();
    jobs.sort();
    jobs.dedup();
    let logs: Vec<RunLog> = jobs
        .par_iter()
        .map(|&(p, seed)| sim::run(&SimConfig::new(p, seed, cfg.settings.clone())))
        .collect::<Result<_>>()?;
    let rows = logs.iter().map(|l| SummaryRow::from_log(l, &targets)).collect();
    Ok(ExperimentOutput {
        summary: Summary::new(ceiling, targets, rows),
        logs,
    })
}

/// Writes `runs/<protocol>_seed<seed>.jsonl`, `summary.json` and, if asked,
/// `summary.csv` under `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path, csv: bool) -> Result<()> {
    let runs = dir.join("runs");
    std::fs::create_dir_all(&runs).map_err(|e| Error::io(&runs, e))?;
    for log in &out.logs {
        log.write_jsonl(&runs.join(format!("{}_seed{}.jsonl", log.protocol, log.seed)))?;
    }
    let summary_path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&out.summary)? + "\n";
    std::fs::write(&summary_path, text).map_err(|e| Error::io(&summary_path, e))?;
    if csv {
        let csv_path = dir.join("summary.csv");
        std::fs::write(&csv_path, out.summary.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    }
    Ok(())
}
