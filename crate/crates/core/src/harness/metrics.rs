//! Post-processing of run logs: time-to-target and summary rows.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model;
use crate::params::ParamVector;
use crate::sim::{prepare_data, MetricsRecord, Protocol, RunLog, SimSettings};

/// Earliest `sim_time` whose accuracy reaches `target`. The first crossing
/// counts even if accuracy later falls back below the target.
pub fn time_to_target(records: &[MetricsRecord], target: f64) -> Option<f64> {
    records.iter().find(|r| r.eval_acc >= target).map(|r| r.sim_time)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub protocol: Protocol,
    pub seed: u64,
    pub final_acc: f64,
    /// One entry per target; `None` when the target was never reached.
    pub time_to_target: Vec<Option<f64>>,
}

impl SummaryRow {
    /// Row for one run, computed purely from its metrics records.
    pub fn from_records(protocol: Protocol, seed: u64, records: &[MetricsRecord], targets: &[f64]) -> Self {
        SummaryRow {
            protocol,
            seed,
            final_acc: records.last().map_or(0.0, |r| r.eval_acc),
            time_to_target: targets.iter().map(|&t| time_to_target(records, t)).collect(),
        }
    }

    pub fn from_log(log: &RunLog, targets: &[f64]) -> Self {
        Self::from_records(log.protocol, log.seed, &log.records, targets)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub time_unit: String,
    /// Centralized-training accuracy, when any target was given relative to it.
    pub ceiling: Option<f64>,
    pub targets: Vec<f64>,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn new(ceiling: Option<f64>, targets: Vec<f64>, mut rows: Vec<SummaryRow>) -> Self {
        rows.sort_by(|a, b| (a.protocol, a.seed).cmp(&(b.protocol, b.seed)));
        Summary {
            time_unit: "simulated seconds".into(),
            ceiling,
            targets,
            rows,
        }
    }

    pub fn rows_for(&self, protocol: Protocol) -> impl Iterator<Item = &SummaryRow> {
        self.rows.iter().filter(move |r| r.protocol == protocol)
    }

    /// CSV with header `protocol,seed,final_acc,ttt_<target>...`; unreached
    /// targets are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("protocol,seed,final_acc");
        for t in &self.targets {
            out.push_str(&format!(",ttt_{t}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.protocol, r.seed, r.final_acc));
            for t in &r.time_to_target {
                out.push(',');
                if let Some(t) = t {
                    out.push_str(&t.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Training length and step size for [`centralized_ceiling`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CeilingOptions {
    pub steps: usize,
    pub eta: f64,
}

impl Default for CeilingOptions {
    fn default() -> Self {
        CeilingOptions { steps: 2000, eta: 0.5 }
    }
}

/// Test accuracy of the model trained by full-batch gradient descent on the
/// pooled training split: the reference a federated run is measured against.
pub fn centralized_ceiling(settings: &SimSettings, opts: CeilingOptions) -> Result<f64> {
    let (train, test) = prepare_data(settings)?;
    let batch = train.as_batch()?;
    let mut w: ParamVector = settings.model.init_params(settings.dataset.seed);
    for _ in 0..opts.steps {
        let g = model::grad(&settings.model, &w, &batch)?;
        w = model::sgd_step(&w, &g, opts.eta)?;
    }
    Ok(model::evaluate(&settings.model, &w, &test)?.1)
}

/// `fraction * ceiling`, rounded to four decimals so CSV headers stay readable.
pub fn relative_target(ceiling: f64, fraction: f64) -> f64 {
    (ceiling * fraction * 1e4).round() / 1e4
}
