//! Round-based protocols: FedSSMU (sequential in-round merging) and FedAvg.
//!
//! Within a round the global version advances once per merged upload, so an
//! upload that is the k-th to be merged sees staleness `k + 1`.

use super::config::SimConfig;
use super::events::EventKind;
use super::log::{AggregationRecord, RoundRecord, RunLog, UploadCapture};
use super::world::{Fresh, LocalRun, World};
use super::Engine;
use crate::aggregation::{self, check_staleness, StalenessCheck};
use crate::error::{Error, Result};
use crate::params::{weighted_mean, ParamVector};

pub(crate) fn run(cfg: &SimConfig) -> Result<RunLog> {
    let s = &cfg.settings;
    let mut w = World::new(cfg)?;
    let averaging = w.mode.engine == Engine::SyncAverage;

    w.queue.push(0.0, EventKind::Evaluate);
    if let Some(ev) = w.pop() {
        debug_assert_eq!(ev.kind, EventKind::Evaluate);
        w.evaluate()?;
    }

    for round in 0..s.rounds {
        if w.now >= s.max_sim_time {
            break;
        }
        let start = w.now;
        let participants = w.pick_idle(s.m_prime);
        for &d in &participants {
            w.start_device(d)?;
        }
        let mut merged = 0u64;
        let mut processed = 0usize;
        let mut collected: Vec<(usize, LocalRun)> = Vec::new();

        while processed < participants.len() {
            let ev = w
                .pop()
                .ok_or_else(|| Error::InvariantViolation(format!("round {round} ran out of events")))?;
            match ev.kind {
                EventKind::EpochDone(d) => {
                    w.on_epoch_done(d)?;
                }
                EventKind::FreshRequest(d) => {
                    let fresh = (merged > 0).then(|| Fresh {
                        model: w.global.clone(),
                        version: w.version,
                    });
                    w.respond_fresh(d, fresh)?;
                }
                EventKind::FreshArrive(d) => w.on_fresh_arrive(d)?,
                EventKind::UploadArrive(d) => {
                    processed += 1;
                    let run = w.take_upload(d)?;
                    if cfg.capture_models {
                        w.log.uploads.push(UploadCapture {
                            round: Some(round),
                            device: d,
                            base_version: run.base_version,
                            model: run.local.clone(),
                        });
                    }
                    let t = w.version;
                    let o = run.base_version;
                    let mut record = AggregationRecord {
                        sim_time: w.now,
                        device: d,
                        round: Some(round),
                        o,
                        t,
                        staleness: t + 1 - o,
                        accepted: false,
                        applied: false,
                        alpha: None,
                        version_before: t,
                        version_after: t,
                    };
                    if check_staleness(t, o, s.tau) == StalenessCheck::Discard {
                        w.log.discarded += 1;
                        w.log.aggregations.push(record);
                        continue;
                    }
                    record.accepted = true;
                    if averaging {
                        collected.push((d, run));
                        if processed == participants.len() {
                            let models: Vec<&ParamVector> = collected.iter().map(|(_, r)| &r.local).collect();
                            let sizes: Vec<f64> = collected
                                .iter()
                                .map(|(d, _)| w.devices[*d].partition.len() as f64)
                                .collect();
                            w.global = weighted_mean(&models, &sizes)?;
                            w.version += 1;
                            record.applied = true;
                        }
                    } else {
                        let alpha = w.server_alpha(d, t, &run, merged)?;
                        let before = w.global.clone();
                        w.global = aggregation::server_merge(&w.global, &run.local, alpha)?;
                        w.version += 1;
                        w.remember_aggregation(d, t, &run, before);
                        record.applied = true;
                        record.alpha = Some(alpha);
                    }
                    merged += 1;
                    record.version_after = w.version;
                    w.log.aggregations.push(record);
                }
                other => {
                    return Err(Error::InvariantViolation(format!(
                        "unexpected {other:?} inside a synchronous round"
                    )))
                }
            }
        }

        w.log.rounds.push(RoundRecord {
            round,
            start,
            end: w.now,
            participants,
            accepted: merged as usize,
        });
        if cfg.capture_models {
            w.log.round_models.push(w.global.clone());
        }
        w.evaluate()?;
    }
    Ok(w.finish())
}
