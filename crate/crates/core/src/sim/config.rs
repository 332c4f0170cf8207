use serde::{Deserialize, Serialize};

use crate::aggregation::{DeviceControls, ServerControls, SigmaMode};
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::policy::SlotStrategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "fedasmu")]
    FedAsmu,
    #[serde(rename = "fedssmu")]
    FedSsmu,
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedasync")]
    FedAsync,
    #[serde(rename = "fedbuff")]
    FedBuff,
    /// FedASMU without dynamic server-side control updates.
    #[serde(rename = "fedasmu-da")]
    FedAsmuDa,
    /// FedASMU without device-side merging of fresh models.
    #[serde(rename = "fedasmu-fa")]
    FedAsmuFa,
    /// FedASMU with both features removed.
    #[serde(rename = "fedasmu-0")]
    FedAsmu0,
}

impl Protocol {
    pub const ALL: [Protocol; 8] = [
        Protocol::FedAsmu,
        Protocol::FedSsmu,
        Protocol::FedAvg,
        Protocol::FedAsync,
        Protocol::FedBuff,
        Protocol::FedAsmuDa,
        Protocol::FedAsmuFa,
        Protocol::FedAsmu0,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::FedAsmu => "fedasmu",
            Protocol::FedSsmu => "fedssmu",
            Protocol::FedAvg => "fedavg",
            Protocol::FedAsync => "fedasync",
            Protocol::FedBuff => "fedbuff",
            Protocol::FedAsmuDa => "fedasmu-da",
            Protocol::FedAsmuFa => "fedasmu-fa",
            Protocol::FedAsmu0 => "fedasmu-0",
        }
    }

    pub fn is_synchronous(self) -> bool {
        matches!(self, Protocol::FedSsmu | Protocol::FedAvg)
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .iter()
            .copied()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown protocol {s:?}")))
    }
}

/// How the server weight for an accepted upload is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum AlphaRule {
    /// Staleness-aware polynomial with per-device adjustable controls.
    Dynamic,
    /// `alpha * staleness^(-exponent)`.
    StaticPolynomial { alpha: f64, exponent: f64 },
    Constant { alpha: f64 },
    /// `1 / (k + 1)` for the k-th accepted upload (per round when synchronous).
    Harmonic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    /// Slowest-to-fastest ratio of per-epoch compute time.
    pub heterogeneity_ratio: f64,
    /// Compute time of one local epoch on the fastest device (simulated seconds).
    pub base_epoch_time: f64,
    /// Parameters per simulated second.
    pub uplink_bw: f64,
    pub downlink_bw: f64,
    /// Divides both bandwidths.
    pub bandwidth_scale: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams {
            heterogeneity_ratio: 5.0,
            base_epoch_time: 1.0,
            uplink_bw: 100.0,
            downlink_bw: 1000.0,
            bandwidth_scale: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub mu_alpha: f64,
    pub mu_beta: f64,
    pub lambda0: f64,
    pub sigma0: f64,
    pub iota0: f64,
    pub gamma0: f64,
    pub upsilon0: f64,
    pub eta_lambda: f64,
    pub eta_sigma: f64,
    pub eta_iota: f64,
    pub eta_gamma: f64,
    pub eta_upsilon: f64,
    /// Device SGD learning rate.
    pub eta_i: f64,
    pub eta_rl: f64,
    pub rho: f64,
    pub phi: f64,
    pub psi: f64,
    /// Initial Q-learning exploration rate, annealed per device round.
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub meta_epsilon: f64,
    pub sigma_mode: SigmaMode,
    pub fedasync_alpha: f64,
    pub fedasync_exponent: f64,
    pub fedbuff_k: usize,
    pub fedbuff_alpha: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            mu_alpha: 1.0,
            mu_beta: 1.0,
            lambda0: 10.0,
            sigma0: 0.5,
            iota0: 0.0,
            gamma0: 10.0,
            upsilon0: 0.5,
            eta_lambda: 1e-4,
            eta_sigma: 1e-4,
            eta_iota: 1e-4,
            eta_gamma: 1e-4,
            eta_upsilon: 1e-4,
            eta_i: 0.004,
            eta_rl: 0.001,
            rho: 0.5,
            phi: 0.5,
            psi: 0.9,
            epsilon: 0.1,
            epsilon_decay: 0.99,
            epsilon_floor: 0.01,
            meta_epsilon: 0.1,
            sigma_mode: SigmaMode::CorrectedLn,
            fedasync_alpha: 0.6,
            fedasync_exponent: 0.5,
            fedbuff_k: 3,
            fedbuff_alpha: 0.6,
        }
    }
}

impl Hyperparams {
    pub fn server_controls(&self) -> ServerControls {
        ServerControls {
            lambda: self.lambda0,
            sigma: self.sigma0,
            iota: self.iota0,
            eta_lambda: self.eta_lambda,
            eta_sigma: self.eta_sigma,
            eta_iota: self.eta_iota,
            mu_alpha: self.mu_alpha,
        }
    }

    pub fn device_controls(&self) -> DeviceControls {
        DeviceControls {
            gamma: self.gamma0,
            upsilon: self.upsilon0,
            eta_gamma: self.eta_gamma,
            eta_upsilon: self.eta_upsilon,
            mu_beta: self.mu_beta,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Freeze the server-side control parameters at their initial values.
    pub disable_dynamic_aggregation: bool,
    /// Devices never request or merge fresh global models.
    pub disable_device_merge: bool,
}

/// Everything a single simulation needs apart from its protocol and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSettings {
    pub m: usize,
    pub m_prime: usize,
    /// Accepted aggregations (asynchronous) or global rounds (synchronous).
    #[serde(rename = "T")]
    pub rounds: u64,
    pub tau: u64,
    pub trigger_period: f64,
    pub max_sim_time: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Use the device's whole partition as the batch for every step.
    pub full_batch: bool,
    /// SGD steps per local epoch; 0 means one pass, `ceil(|D_i| / batch_size)`.
    pub steps_per_epoch: usize,
    /// Evaluate after every n-th accepted aggregation in asynchronous runs.
    pub eval_every: u64,
    pub test_fraction: f64,
    pub model: ModelSpec,
    pub dataset: DatasetSpec,
    pub dirichlet_concentration: f64,
    pub system: SystemParams,
    pub hyperparameters: Hyperparams,
    pub ablation: Ablation,
    pub slot_strategy: SlotStrategy,
    /// Overrides the protocol's usual server weighting rule.
    pub alpha_rule: Option<AlphaRule>,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            m: 20,
            m_prime: 5,
            rounds: 200,
            tau: 99,
            trigger_period: 1.0,
            max_sim_time: 5000.0,
            local_epochs: 5,
            batch_size: 16,
            full_batch: false,
            steps_per_epoch: 0,
            eval_every: 1,
            test_fraction: 0.1,
            model: ModelSpec::logistic(20, 10),
            dataset: DatasetSpec {
                num_samples: 4000,
                input_dim: 20,
                num_classes: 10,
                class_separation: 3.0,
                noise_std: 1.0,
                seed: 2024,
            },
            dirichlet_concentration: 0.5,
            system: SystemParams::default(),
            hyperparameters: Hyperparams::default(),
            ablation: Ablation::default(),
            slot_strategy: SlotStrategy::Rl,
            alpha_rule: None,
        }
    }
}

impl SimSettings {
    /// All violated constraints, each prefixed with its key path.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        need(self.m >= 1, "m: must be at least 1");
        need(self.m_prime >= 1, "m_prime: must be at least 1");
        need(self.m_prime <= self.m, "m_prime: must satisfy m_prime ≤ m");
        need(self.rounds >= 1, "T: must be at least 1");
        need(self.tau >= 1, "tau: must be at least 1");
        need(self.trigger_period > 0.0, "trigger_period: must be positive");
        need(self.max_sim_time > 0.0, "max_sim_time: must be positive");
        need(self.local_epochs >= 2, "local_epochs: must be at least 2");
        need(self.full_batch || self.batch_size >= 1, "batch_size: must be at least 1");
        need(self.eval_every >= 1, "eval_every: must be at least 1");
        need(
            self.test_fraction > 0.0 && self.test_fraction < 1.0,
            "test_fraction: must lie in (0, 1)",
        );
        need(
            self.dirichlet_concentration > 0.0,
            "dirichlet_concentration: must be positive",
        );
        if let Err(e) = self.model.validate() {
            out.push(format!("model: {e}"));
        }
        if let Err(e) = self.dataset.validate() {
            out.push(format!("dataset: {e}"));
        }
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                out.push(msg.to_string());
            }
        };
        need(
            self.model.input_dim == self.dataset.input_dim,
            "model.input_dim: must equal dataset.input_dim",
        );
        need(
            self.model.num_classes == self.dataset.num_classes,
            "model.num_classes: must equal dataset.num_classes",
        );
        let s = &self.system;
        need(s.heterogeneity_ratio >= 1.0, "system.heterogeneity_ratio: must be at least 1");
        need(s.base_epoch_time > 0.0, "system.base_epoch_time: must be positive");
        need(s.uplink_bw > 0.0, "system.uplink_bw: must be positive");
        need(s.downlink_bw > 0.0, "system.downlink_bw: must be positive");
        need(s.bandwidth_scale > 0.0, "system.bandwidth_scale: must be positive");
        let h = &self.hyperparameters;
        for (name, v) in [
            ("eta_lambda", h.eta_lambda),
            ("eta_sigma", h.eta_sigma),
            ("eta_iota", h.eta_iota),
            ("eta_gamma", h.eta_gamma),
            ("eta_upsilon", h.eta_upsilon),
            ("eta_i", h.eta_i),
            ("eta_rl", h.eta_rl),
            ("mu_alpha", h.mu_alpha),
            ("mu_beta", h.mu_beta),
        ] {
            need(v > 0.0, &format!("hyperparameters.{name}: must be positive"));
        }
        need(h.rho > 0.0 && h.rho < 1.0, "hyperparameters.rho: must lie in (0, 1)");
        need(h.phi > 0.0 && h.phi <= 1.0, "hyperparameters.phi: must lie in (0, 1]");
        need(h.psi >= 0.0 && h.psi < 1.0, "hyperparameters.psi: must lie in [0, 1)");
        for (name, v) in [
            ("epsilon", h.epsilon),
            ("epsilon_floor", h.epsilon_floor),
            ("epsilon_decay", h.epsilon_decay),
            ("meta_epsilon", h.meta_epsilon),
        ] {
            need((0.0..=1.0).contains(&v), &format!("hyperparameters.{name}: must lie in [0, 1]"));
        }
        need(h.sigma0 > 0.0, "hyperparameters.sigma0: must be positive");
        need(h.fedbuff_k >= 1, "hyperparameters.fedbuff_k: must be at least 1");
        need(
            (0.0..=1.0).contains(&h.fedbuff_alpha) && (0.0..=1.0).contains(&h.fedasync_alpha),
            "hyperparameters.fedasync_alpha/fedbuff_alpha: must lie in [0, 1]",
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

/// A fully specified single run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub protocol: Protocol,
    pub seed: u64,
    pub settings: SimSettings,
    /// Keep every uploaded model and end-of-round global model in the log.
    pub capture_models: bool,
}

impl SimConfig {
    pub fn new(protocol: Protocol, seed: u64, settings: SimSettings) -> Self {
        SimConfig {
            protocol,
            seed,
            settings,
            capture_models: false,
        }
    }
}
