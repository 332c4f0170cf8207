//! Deterministic discrete-event simulation of federated training.
//!
//! Asynchronous protocols (FedASMU and its ablations, FedAsync, FedBuff) run
//! on [`asynchronous`]; round-based ones (FedSSMU, FedAvg) on [`synchronous`].
//! Both share the device-side training machinery in [`world`]. All time is
//! simulated; events are applied strictly in `(time, seq)` order.

mod asynchronous;
mod config;
mod events;
mod log;
mod world;
mod synchronous;

pub use config::{
    Ablation, AlphaRule, Hyperparams, Protocol, SimConfig, SimSettings, SystemParams,
};
pub use events::{Event, EventKind, EventQueue};
pub use log::{AggregationRecord, MetricsRecord, RoundRecord, RunLog, TraceEntry, UploadCapture};
pub use world::{device_profiles, partition_train, prepare_data, DeviceProfile};

use crate::error::{Error, Result};

/// Time to move `model_dim` parameters over a link of bandwidth `bw`.
pub fn transfer_time(model_dim: usize, bw: f64) -> Result<f64> {
    if !(bw > 0.0) || !bw.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bw}")));
    }
    Ok(model_dim as f64 / bw)
}

/// Runs one simulation and checks the run's structural invariants.
pub fn run(cfg: &SimConfig) -> Result<RunLog> {
    cfg.settings.validate()?;
    let log = if cfg.protocol.is_synchronous() {
        synchronous::run(cfg)?
    } else {
        asynchronous::run(cfg)?
    };
    log.check_invariants(cfg)?;
    Ok(log)
}

pub fn run_fedasmu(settings: &SimSettings, seed: u64) -> Result<RunLog> {
    run(&SimConfig::new(Protocol::FedAsmu, seed, settings.clone()))
}

pub fn run_fedssmu(settings: &SimSettings, seed: u64) -> Result<RunLog> {
    run(&SimConfig::new(Protocol::FedSsmu, seed, settings.clone()))
}

/// FedAvg, FedAsync or FedBuff.
pub fn run_baseline(settings: &SimSettings, seed: u64, which: Protocol) -> Result<RunLog> {
    if !matches!(which, Protocol::FedAvg | Protocol::FedAsync | Protocol::FedBuff) {
        return Err(Error::invalid(format!("{which} is not a baseline protocol")));
    }
    run(&SimConfig::new(which, seed, settings.clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Engine {
    Async,
    Buffered { k: usize },
    SyncSequential,
    SyncAverage,
}

/// Protocol-independent description of what the engines should do.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Mode {
    pub engine: Engine,
    pub dynamic_server: bool,
    pub device_merge: bool,
    pub alpha: AlphaRule,
}

impl Mode {
    pub fn of(cfg: &SimConfig) -> Mode {
        let s = &cfg.settings;
        let h = &s.hyperparameters;
        let dynamic = !s.ablation.disable_dynamic_aggregation;
        let merge = !s.ablation.disable_device_merge;
        let (engine, dynamic_server, device_merge, alpha) = match cfg.protocol {
            Protocol::FedAsmu => (Engine::Async, dynamic, merge, AlphaRule::Dynamic),
            Protocol::FedAsmuDa => (Engine::Async, false, merge, AlphaRule::Dynamic),
            Protocol::FedAsmuFa => (Engine::Async, dynamic, false, AlphaRule::Dynamic),
            Protocol::FedAsmu0 => (Engine::Async, false, false, AlphaRule::Dynamic),
            Protocol::FedAsync => (
                Engine::Async,
                false,
                false,
                AlphaRule::StaticPolynomial {
                    alpha: h.fedasync_alpha,
                    exponent: h.fedasync_exponent,
                },
            ),
            Protocol::FedBuff => (
                Engine::Buffered { k: h.fedbuff_k },
                false,
                false,
                AlphaRule::Constant {
                    alpha: h.fedbuff_alpha,
                },
            ),
            Protocol::FedSsmu => (Engine::SyncSequential, dynamic, merge, AlphaRule::Dynamic),
            Protocol::FedAvg => (Engine::SyncAverage, false, false, AlphaRule::Harmonic),
        };
        let alpha = match (engine, s.alpha_rule) {
            (Engine::SyncAverage, _) | (_, None) => alpha,
            (_, Some(rule)) => rule,
        };
        Mode {
            engine,
            dynamic_server: dynamic_server && alpha == AlphaRule::Dynamic,
            device_merge,
            alpha,
        }
    }
}
