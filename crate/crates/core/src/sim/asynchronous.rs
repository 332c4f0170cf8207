//! Event loop for the asynchronous protocols.

use super::config::{SimConfig, SimSettings};
use super::events::EventKind;
use super::log::{AggregationRecord, RunLog, UploadCapture};
use super::world::{Fresh, LocalRun, World};
use super::Engine;
use crate::aggregation::{self, check_staleness, StalenessCheck};
use crate::error::Result;
use crate::params::{weighted_mean, ParamVector};

pub(crate) fn run(cfg: &SimConfig) -> Result<RunLog> {
    let s: &SimSettings = &cfg.settings;
    let mut w = World::new(cfg)?;
    let mut buffer: Vec<LocalRun> = Vec::new();
    let mut accepted = 0u64;

    w.queue.push(0.0, EventKind::Evaluate);
    w.queue.push(0.0, EventKind::TriggerDevices);

    while let Some(ev) = w.pop() {
        if w.now > s.max_sim_time {
            w.now = s.max_sim_time;
            break;
        }
        match ev.kind {
            EventKind::TriggerDevices => {
                if w.busy_count() < s.m_prime {
                    for d in w.pick_idle(s.m_prime) {
                        w.start_device(d)?;
                    }
                }
                w.queue.push(w.now + s.trigger_period, EventKind::TriggerDevices);
            }
            EventKind::EpochDone(d) => {
                w.on_epoch_done(d)?;
            }
            EventKind::FreshRequest(d) => {
                let o = w.base_version(d).expect("requesting device is busy");
                let fresh = (w.version > o).then(|| Fresh {
                    model: w.global.clone(),
                    version: w.version,
                });
                w.respond_fresh(d, fresh)?;
            }
            EventKind::FreshArrive(d) => w.on_fresh_arrive(d)?,
            EventKind::UploadArrive(d) => {
                let run = w.take_upload(d)?;
                if cfg.capture_models {
                    w.log.uploads.push(UploadCapture {
                        round: None,
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
                    round: None,
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
                accepted += 1;
                match w.mode.engine {
                    Engine::Buffered { k } => {
                        buffer.push(run);
                        if buffer.len() >= k {
                            let last = buffer.last().expect("non-empty buffer").clone();
                            let alpha = w.server_alpha(d, t, &last, accepted - 1)?;
                            let models: Vec<&ParamVector> = buffer.iter().map(|r| &r.local).collect();
                            let mean = weighted_mean(&models, &vec![1.0; models.len()])?;
                            w.global = aggregation::server_merge(&w.global, &mean, alpha)?;
                            w.version += 1;
                            buffer.clear();
                            record.applied = true;
                            record.alpha = Some(alpha);
                        }
                    }
                    _ => {
                        let alpha = w.server_alpha(d, t, &run, accepted - 1)?;
                        let before = w.global.clone();
                        w.global = aggregation::server_merge(&w.global, &run.local, alpha)?;
                        w.version += 1;
                        w.remember_aggregation(d, t, &run, before);
                        record.applied = true;
                        record.alpha = Some(alpha);
                    }
                }
                record.version_after = w.version;
                w.log.aggregations.push(record);
                if record_applied_and_due(&w, accepted, s.eval_every) {
                    w.evaluate()?;
                }
                if accepted >= s.rounds {
                    break;
                }
            }
            EventKind::Evaluate => w.evaluate()?,
        }
    }
    if w.log.records.last().map(|r| r.version) != Some(w.version) {
        w.evaluate()?;
    }
    Ok(w.finish())
}

fn record_applied_and_due(w: &World, accepted: u64, every: u64) -> bool {
    w.log.aggregations.last().is_some_and(|a| a.applied) && accepted % every == 0
}
