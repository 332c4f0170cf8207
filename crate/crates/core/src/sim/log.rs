use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Protocol, SimConfig};
use super::events::EventKind;
use crate::error::{Error, Result};
use crate::params::ParamVector;

/// One evaluation snapshot; serialised as one JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub sim_time: f64,
    pub version: u64,
    pub eval_loss: f64,
    pub eval_acc: f64,
    pub discarded: u64,
    pub protocol: Protocol,
    pub seed: u64,
}

/// Server-side handling of one arriving upload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationRecord {
    pub sim_time: f64,
    pub device: usize,
    /// Global round, for synchronous protocols.
    pub round: Option<u64>,
    /// Base version the upload was trained from.
    pub o: u64,
    /// Global version at arrival.
    pub t: u64,
    pub staleness: u64,
    pub accepted: bool,
    /// Whether the global model changed as a result of this upload.
    pub applied: bool,
    pub alpha: Option<f64>,
    pub version_before: u64,
    pub version_after: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub start: f64,
    pub end: f64,
    pub participants: Vec<usize>,
    pub accepted: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UploadCapture {
    pub round: Option<u64>,
    pub device: usize,
    pub base_version: u64,
    pub model: ParamVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub protocol: Protocol,
    pub seed: u64,
    pub records: Vec<MetricsRecord>,
    pub aggregations: Vec<AggregationRecord>,
    pub rounds: Vec<RoundRecord>,
    pub trace: Vec<TraceEntry>,
    pub final_model: ParamVector,
    pub final_version: u64,
    pub discarded: u64,
    /// `(device, device_round)` of every fresh-model request.
    pub fresh_requests: Vec<(usize, u64)>,
    /// `(device, device_round, epochs)` of every local round that ended in an upload.
    pub completed_rounds: Vec<(usize, u64, usize)>,
    pub uploads: Vec<UploadCapture>,
    /// Global model at the end of each synchronous round.
    pub round_models: Vec<ParamVector>,
}

impl RunLog {
    pub fn new(protocol: Protocol, seed: u64, initial: ParamVector) -> Self {
        RunLog {
            protocol,
            seed,
            records: Vec::new(),
            aggregations: Vec::new(),
            rounds: Vec::new(),
            trace: Vec::new(),
            final_model: initial,
            final_version: 1,
            discarded: 0,
            fresh_requests: Vec::new(),
            completed_rounds: Vec::new(),
            uploads: Vec::new(),
            round_models: Vec::new(),
        }
    }

    pub fn accepted(&self) -> usize {
        self.aggregations.iter().filter(|a| a.accepted).count()
    }

    /// Metrics as JSON lines, one record per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRecord>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(Error::from))
            .collect()
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.records.iter().map(|r| r.eval_acc).reduce(f64::max)
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.eval_acc)
    }

    /// Structural checks every run must satisfy.
    pub fn check_invariants(&self, cfg: &SimConfig) -> Result<()> {
        let s = &cfg.settings;
        let fail = |msg: String| Err(Error::InvariantViolation(format!("{} seed {}: {msg}", self.protocol, self.seed)));

        let mut version = 1u64;
        for a in &self.aggregations {
            if a.accepted && a.staleness > s.tau && self.protocol != Protocol::FedAvg {
                return fail(format!("accepted upload with staleness {} > tau {}", a.staleness, s.tau));
            }
            if a.staleness != a.t + 1 - a.o {
                return fail(format!("inconsistent staleness record at t={}", a.t));
            }
            if a.version_before != version {
                return fail(format!("version jumped from {version} to {}", a.version_before));
            }
            let expect = version + u64::from(a.applied);
            if a.version_after != expect {
                return fail(format!("version {} -> {} for applied={}", version, a.version_after, a.applied));
            }
            if a.applied && !a.accepted {
                return fail("a discarded upload changed the global model".into());
            }
            version = a.version_after;
        }
        if version != self.final_version {
            return fail(format!("final version {} disagrees with log {version}", self.final_version));
        }
        let discarded = self.aggregations.iter().filter(|a| !a.accepted).count() as u64;
        if discarded != self.discarded {
            return fail("discarded counter disagrees with aggregation log".into());
        }

        let mut seen = HashSet::new();
        for req in &self.fresh_requests {
            if !seen.insert(*req) {
                return fail(format!("device {} requested twice in round {}", req.0, req.1));
            }
        }
        if let Some((d, r, n)) = self
            .completed_rounds
            .iter()
            .find(|(_, _, n)| *n != s.local_epochs)
        {
            return fail(format!("device {d} round {r} ran {n} epochs, expected {}", s.local_epochs));
        }
        if !self.final_model.is_finite() {
            return fail("final model has non-finite parameters".into());
        }
        Ok(())
    }
}
