//! State and device-side behaviour shared by both engines.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AlphaRule, SimConfig, SimSettings, SystemParams};
use super::events::{Event, EventKind, EventQueue};
use super::log::{MetricsRecord, RunLog, TraceEntry};
use super::{transfer_time, Mode};
use crate::aggregation::{
    self, alpha_weight, beta_weight, AggregationContext, DeviceControls, ServerControls,
};
use crate::data::{self, Dataset, Partition};
use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec};
use crate::params::ParamVector;
use crate::policy::{self, Action, MetaPolicy, QTable, SlotSelector};

const STREAM_PROFILES: u64 = 1;
const STREAM_PARTITION: u64 = 2;
const STREAM_TRIGGER: u64 = 3;
const STREAM_POLICY: u64 = 4;
const STREAM_INIT: u64 = 5;
const STREAM_DEVICE_BASE: u64 = 1 << 32;

/// Independent, reproducible random stream `id` derived from `seed`.
pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: usize,
    /// Simulated seconds per local epoch.
    pub epoch_compute_time: f64,
    pub uplink_bw: f64,
    pub downlink_bw: f64,
    pub partition_id: usize,
}

/// Epoch times are drawn uniformly from `[base, ratio * base]`; the fastest and
/// slowest draws are then pinned to the interval ends so the realised
/// heterogeneity ratio is exact.
pub fn device_profiles(system: &SystemParams, m: usize, seed: u64) -> Vec<DeviceProfile> {
    let mut rng = stream(seed, STREAM_PROFILES);
    let lo = system.base_epoch_time;
    let hi = system.base_epoch_time * system.heterogeneity_ratio;
    let mut times: Vec<f64> = (0..m)
        .map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo })
        .collect();
    if m >= 2 {
        let min_i = (0..m).min_by(|&a, &b| times[a].total_cmp(&times[b])).unwrap();
        let max_i = (0..m)
            .filter(|&i| i != min_i)
            .max_by(|&a, &b| times[a].total_cmp(&times[b]))
            .unwrap();
        times[min_i] = lo;
        times[max_i] = hi;
    }
    times
        .into_iter()
        .enumerate()
        .map(|(i, t)| DeviceProfile {
            device_id: i,
            epoch_compute_time: t,
            uplink_bw: system.uplink_bw / system.bandwidth_scale,
            downlink_bw: system.downlink_bw / system.bandwidth_scale,
            partition_id: i,
        })
        .collect()
}

/// Generates the dataset for `settings` and splits off the held-out test set.
pub fn prepare_data(settings: &SimSettings) -> Result<(Dataset, Dataset)> {
    let full = data::make_synthetic(&settings.dataset)?;
    data::split_train_test(&full, settings.test_fraction, settings.dataset.seed)
}

/// The device partitions a run with `seed` uses, over the training split of
/// [`prepare_data`].
pub fn partition_train(settings: &SimSettings, train: &Dataset, seed: u64) -> Result<Vec<Partition>> {
    let partition_seed = stream(seed, STREAM_PARTITION).next_u64();
    data::dirichlet_partition(train, settings.m, settings.dirichlet_concentration, partition_seed)
}

#[derive(Clone, Debug)]
pub(crate) struct Fresh {
    pub model: ParamVector,
    pub version: u64,
}

#[derive(Clone, Copy, Debug)]
enum SlotSource {
    Meta,
    Q { prev_slot: usize, action: Action },
    Fixed,
}

/// One local training session on one device.
#[derive(Clone, Debug)]
pub(crate) struct LocalRun {
    pub base_version: u64,
    pub base_model: ParamVector,
    pub device_round: u64,
    pub local: ParamVector,
    pub epochs_done: usize,
    slot: Option<usize>,
    source: SlotSource,
    pending_fresh: Option<Fresh>,
}

#[derive(Clone, Debug)]
pub(crate) struct PrevAggregation {
    pub t: u64,
    pub o: u64,
    pub upload: ParamVector,
    pub global_before: ParamVector,
}

pub(crate) struct DeviceState {
    pub profile: DeviceProfile,
    pub partition: Partition,
    rng: ChaCha8Rng,
    pub server_controls: ServerControls,
    pub device_controls: DeviceControls,
    pub q: QTable,
    pub rounds_started: u64,
    last_slot: Option<usize>,
    pub prev_agg: Option<PrevAggregation>,
    pub run: Option<LocalRun>,
}

impl DeviceState {
    pub fn is_busy(&self) -> bool {
        self.run.is_some()
    }
}

pub(crate) struct World {
    pub cfg: SimConfig,
    pub mode: Mode,
    pub spec: ModelSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub devices: Vec<DeviceState>,
    pub queue: EventQueue,
    pub now: f64,
    pub meta: MetaPolicy,
    policy_rng: ChaCha8Rng,
    pub trigger_rng: ChaCha8Rng,
    pub global: ParamVector,
    pub version: u64,
    pub log: RunLog,
}

impl World {
    pub fn new(cfg: &SimConfig) -> Result<World> {
        let s = &cfg.settings;
        let (train, test) = prepare_data(s)?;
        let partitions = partition_train(s, &train, cfg.seed)?;
        let profiles = device_profiles(&s.system, s.m, cfg.seed);
        let h = &s.hyperparameters;
        let devices = profiles
            .into_iter()
            .zip(partitions)
            .map(|(profile, partition)| DeviceState {
                rng: stream(cfg.seed, STREAM_DEVICE_BASE + profile.device_id as u64),
                profile,
                partition,
                server_controls: h.server_controls(),
                device_controls: h.device_controls(),
                q: QTable::new(s.local_epochs, h.phi, h.psi, h.epsilon),
                rounds_started: 0,
                last_slot: None,
                prev_agg: None,
                run: None,
            })
            .collect();
        let init_seed = stream(cfg.seed, STREAM_INIT).next_u64();
        let global = s.model.init_params(init_seed);
        Ok(World {
            mode: Mode::of(cfg),
            spec: s.model,
            train,
            test,
            devices,
            queue: EventQueue::new(),
            now: 0.0,
            meta: MetaPolicy::uniform(s.local_epochs, h.rho, h.eta_rl, h.meta_epsilon),
            policy_rng: stream(cfg.seed, STREAM_POLICY),
            trigger_rng: stream(cfg.seed, STREAM_TRIGGER),
            log: RunLog::new(cfg.protocol, cfg.seed, global.clone()),
            global,
            version: 1,
            cfg: cfg.clone(),
        })
    }

    fn settings(&self) -> &SimSettings {
        &self.cfg.settings
    }

    pub fn dim(&self) -> usize {
        self.global.dim()
    }

    pub fn pop(&mut self) -> Option<Event> {
        let ev = self.queue.pop()?;
        self.now = ev.time;
        self.log.trace.push(TraceEntry {
            time: ev.time,
            seq: ev.seq,
            kind: ev.kind,
        });
        Some(ev)
    }

    pub fn idle_devices(&self) -> Vec<usize> {
        (0..self.devices.len()).filter(|&d| !self.devices[d].is_busy()).collect()
    }

    pub fn busy_count(&self) -> usize {
        self.devices.iter().filter(|d| d.is_busy()).count()
    }

    /// Up to `count` idle devices chosen uniformly at random.
    pub fn pick_idle(&mut self, count: usize) -> Vec<usize> {
        let idle = self.idle_devices();
        let k = count.min(idle.len());
        rand::seq::index::sample(&mut self.trigger_rng, idle.len(), k)
            .into_iter()
            .map(|i| idle[i])
            .collect()
    }

    fn epoch_time(&self, d: usize) -> f64 {
        self.devices[d].profile.epoch_compute_time
    }

    /// Sends the current global model to device `d` and starts local training.
    pub fn start_device(&mut self, d: usize) -> Result<()> {
        let slot_and_source = if self.mode.device_merge {
            Some(self.choose_slot(d))
        } else {
            None
        };
        let dev = &mut self.devices[d];
        debug_assert!(dev.run.is_none(), "device {d} already busy");
        dev.rounds_started += 1;
        dev.run = Some(LocalRun {
            base_version: self.version,
            base_model: self.global.clone(),
            device_round: dev.rounds_started,
            local: self.global.clone(),
            epochs_done: 0,
            slot: slot_and_source.map(|s| s.0),
            source: slot_and_source.map_or(SlotSource::Fixed, |s| s.1),
            pending_fresh: None,
        });
        let down = transfer_time(self.global.dim(), dev.profile.downlink_bw)?;
        let at = self.now + down + self.epoch_time(d);
        self.queue.push(at, EventKind::EpochDone(d));
        Ok(())
    }

    fn choose_slot(&mut self, d: usize) -> (usize, SlotSource) {
        let s = &self.cfg.settings;
        if let Some(slot) = s.slot_strategy.fixed_slot(s.local_epochs) {
            return (slot, SlotSource::Fixed);
        }
        let h = &s.hyperparameters;
        let dev = &mut self.devices[d];
        match dev.last_slot {
            None => {
                let slot = self.meta.select(&mut self.policy_rng);
                dev.last_slot = Some(slot);
                (slot, SlotSource::Meta)
            }
            Some(prev_slot) => {
                let eps = h.epsilon * h.epsilon_decay.powi(dev.rounds_started as i32);
                dev.q.epsilon = eps.max(h.epsilon_floor);
                let (slot, action) = policy::select_slot_q(&dev.q, prev_slot, &mut self.policy_rng);
                dev.last_slot = Some(slot);
                (slot, SlotSource::Q { prev_slot, action })
            }
        }
    }

    fn next_batch(&mut self, d: usize) -> Result<Batch> {
        let full = self.cfg.settings.full_batch;
        let bs = self.cfg.settings.batch_size;
        let dev = &mut self.devices[d];
        if full {
            data::full_batch(&dev.partition, &self.train)
        } else {
            data::sample_minibatch(&dev.partition, &self.train, bs, &mut dev.rng)
        }
    }

    fn steps_per_epoch(&self, d: usize) -> usize {
        let s = self.settings();
        if s.full_batch {
            1
        } else if s.steps_per_epoch > 0 {
            s.steps_per_epoch
        } else {
            self.devices[d].partition.len().div_ceil(s.batch_size)
        }
    }

    /// Completes one local epoch on `d` and schedules what follows.
    pub fn on_epoch_done(&mut self, d: usize) -> Result<EpochOutcome> {
        let eta = self.settings().hyperparameters.eta_i;
        let epochs = self.settings().local_epochs;
        let mut local = self.devices[d]
            .run
            .as_ref()
            .ok_or_else(|| Error::InvariantViolation(format!("epoch done on idle device {d}")))?
            .local
            .clone();
        for _ in 0..self.steps_per_epoch(d) {
            let batch = self.next_batch(d)?;
            let g = model::grad(&self.spec, &local, &batch)?;
            local = model::sgd_step(&local, &g, eta)?;
        }
        let dim = self.dim();
        let dev = &mut self.devices[d];
        let uplink_bw = dev.profile.uplink_bw;
        let epoch_time = dev.profile.epoch_compute_time;
        let run = dev.run.as_mut().expect("checked above");
        run.local = local;
        run.epochs_done += 1;
        let done = run.epochs_done;
        if done == epochs {
            let up = transfer_time(dim, uplink_bw)?;
            self.queue.push(self.now + up, EventKind::UploadArrive(d));
            self.log.completed_rounds.push((d, run.device_round, done));
            Ok(EpochOutcome::Uploading)
        } else if run.slot == Some(done) {
            self.log.fresh_requests.push((d, run.device_round));
            self.queue.push(self.now, EventKind::FreshRequest(d));
            Ok(EpochOutcome::Requesting)
        } else {
            self.queue.push(self.now + epoch_time, EventKind::EpochDone(d));
            Ok(EpochOutcome::Continuing)
        }
    }

    pub fn base_version(&self, d: usize) -> Option<u64> {
        self.devices[d].run.as_ref().map(|r| r.base_version)
    }

    /// Server's answer to a fresh-model request: a model to send, or nothing.
    pub fn respond_fresh(&mut self, d: usize, fresh: Option<Fresh>) -> Result<()> {
        match fresh {
            Some(f) => {
                let down = transfer_time(self.dim(), self.devices[d].profile.downlink_bw)?;
                self.devices[d].run.as_mut().expect("busy device").pending_fresh = Some(f);
                self.queue.push(self.now + down, EventKind::FreshArrive(d));
            }
            None => {
                self.queue.push(self.now + self.epoch_time(d), EventKind::EpochDone(d));
            }
        }
        Ok(())
    }

    /// Blends the received fresh model into the local one and learns from the outcome.
    pub fn on_fresh_arrive(&mut self, d: usize) -> Result<()> {
        let batch = self.next_batch(d)?;
        let spec = self.spec;
        let dev = &mut self.devices[d];
        let run = dev.run.as_mut().expect("busy device");
        let fresh = run
            .pending_fresh
            .take()
            .ok_or_else(|| Error::InvariantViolation(format!("device {d} got an unrequested model")))?;
        let o = run.base_version;
        let beta = beta_weight(&dev.device_controls, fresh.version, o);
        let loss_before = model::loss(&spec, &run.local, &batch)?;
        let local_grad = model::grad(&spec, &run.local, &batch)?;
        let merged = aggregation::device_merge(&run.local, &fresh.model, beta)?;
        let loss_after = model::loss(&spec, &merged, &batch)?;
        dev.device_controls = aggregation::update_device_controls(
            &dev.device_controls,
            fresh.version,
            o,
            &fresh.model,
            &run.local,
            &local_grad,
        )?
        .unwrap_or(dev.device_controls);
        run.local = merged;
        let r = policy::reward(loss_before, loss_after);
        let slot = run.slot.expect("merging implies a slot");
        match run.source {
            SlotSource::Meta => self.meta.learn(slot, r),
            SlotSource::Q { prev_slot, action } => {
                dev.q = policy::update_q(&dev.q, prev_slot, action, slot, r);
                self.meta.baseline_b = policy::update_baseline(self.meta.baseline_b, r, self.meta.rho);
            }
            SlotSource::Fixed => {}
        }
        let at = self.now + self.epoch_time(d);
        self.queue.push(at, EventKind::EpochDone(d));
        Ok(())
    }

    /// Takes the finished local run off device `d`, leaving it idle.
    pub fn take_upload(&mut self, d: usize) -> Result<LocalRun> {
        self.devices[d]
            .run
            .take()
            .ok_or_else(|| Error::InvariantViolation(format!("upload from idle device {d}")))
    }

    /// Server weight for an accepted upload; updates the device's server-side
    /// controls first when dynamic aggregation is on.
    ///
    /// `k` is the number of uploads already accepted in the current scope
    /// (round for synchronous protocols, whole run otherwise).
    pub fn server_alpha(&mut self, d: usize, t: u64, run: &LocalRun, k: u64) -> Result<f64> {
        let staleness = (t + 1 - run.base_version) as f64;
        let s = &self.cfg.settings;
        Ok(match self.mode.alpha {
            AlphaRule::Dynamic => {
                let mode = s.hyperparameters.sigma_mode;
                let eta_i = s.hyperparameters.eta_i;
                let epochs = s.local_epochs;
                let dev = &mut self.devices[d];
                if self.mode.dynamic_server {
                    if let Some(prev) = &dev.prev_agg {
                        let ctx = AggregationContext {
                            t,
                            o: run.base_version,
                            o_prime: prev.o,
                            prev_t: prev.t,
                            w_o: &run.base_model,
                            w_o_i: &run.local,
                            w_o_prime_i: &prev.upload,
                            w_o_minus_1: &prev.global_before,
                            eta_i,
                            local_epochs: epochs,
                        };
                        dev.server_controls = aggregation::update_server_controls(&dev.server_controls, &ctx, mode)?
                            .unwrap_or(dev.server_controls);
                    }
                }
                alpha_weight(&dev.server_controls, t, run.base_version)
            }
            AlphaRule::StaticPolynomial { alpha, exponent } => alpha * staleness.powf(-exponent),
            AlphaRule::Constant { alpha } => alpha,
            AlphaRule::Harmonic => 1.0 / (k + 1) as f64,
        })
    }

    pub fn remember_aggregation(&mut self, d: usize, t: u64, run: &LocalRun, global_before: ParamVector) {
        self.devices[d].prev_agg = Some(PrevAggregation {
            t,
            o: run.base_version,
            upload: run.local.clone(),
            global_before,
        });
    }

    pub fn evaluate(&mut self) -> Result<()> {
        if !self.global.is_finite() {
            return Err(Error::InvariantViolation(format!(
                "global model diverged at version {}",
                self.version
            )));
        }
        let (loss, acc) = model::evaluate(&self.spec, &self.global, &self.test)?;
        self.log.records.push(MetricsRecord {
            sim_time: self.now,
            version: self.version,
            eval_loss: loss,
            eval_acc: acc,
            discarded: self.log.discarded,
            protocol: self.cfg.protocol,
            seed: self.cfg.seed,
        });
        Ok(())
    }

    pub fn finish(mut self) -> RunLog {
        self.log.final_model = self.global;
        self.log.final_version = self.version;
        self.log
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum EpochOutcome {
    Continuing,
    Requesting,
    Uploading,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_hit_the_configured_ratio() {
        let system = SystemParams {
            heterogeneity_ratio: 5.0,
            base_epoch_time: 2.0,
            ..SystemParams::default()
        };
        let p = device_profiles(&system, 20, 3);
        let times: Vec<f64> = p.iter().map(|d| d.epoch_compute_time).collect();
        let lo = times.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = times.iter().cloned().fold(0.0, f64::max);
        assert_eq!(lo, 2.0);
        assert_eq!(hi, 10.0);
        assert!(times.iter().all(|&t| (2.0..=10.0).contains(&t)));
        assert_eq!(p, device_profiles(&system, 20, 3));
    }

    #[test]
    fn bandwidth_scale_divides_links() {
        let system = SystemParams {
            bandwidth_scale: 50.0,
            ..SystemParams::default()
        };
        let p = device_profiles(&system, 3, 0);
        assert_eq!(p[0].uplink_bw, SystemParams::default().uplink_bw / 50.0);
    }
}
