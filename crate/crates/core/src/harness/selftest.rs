//! Quick end-to-end invariant suite behind `fedasmu self-test`.

use crate::error::{Error, Result};
use crate::params::weighted_mean;
use crate::sim::{self, Ablation, AlphaRule, Protocol, RunLog, SimConfig, SimSettings};

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    /// `Err` carries the reason for failure.
    pub result: std::result::Result<String, String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.result.is_ok()
    }
}

/// Small, fast settings used by every check.
pub fn quick_settings() -> SimSettings {
    SimSettings {
        m: 10,
        m_prime: 3,
        rounds: 30,
        ..SimSettings::default()
    }
}

/// True when two runs went through identical states, ignoring the protocol
/// label they were run under.
pub fn same_trajectory(a: &RunLog, b: &RunLog) -> bool {
    let strip = |l: &RunLog| {
        l.records
            .iter()
            .map(|r| (r.sim_time.to_bits(), r.version, r.eval_loss.to_bits(), r.eval_acc.to_bits(), r.discarded))
            .collect::<Vec<_>>()
    };
    strip(a) == strip(b)
        && a.aggregations == b.aggregations
        && a.trace == b.trace
        && a.final_model == b.final_model
}

type Check = fn() -> Result<String>;

const CHECKS: [(&str, Check); 6] = [
    ("invariants hold for every protocol", every_protocol),
    ("identical seeds give identical logs", determinism),
    ("tau = 1 discards stale uploads", tight_tau),
    ("FedASMU without its additions reduces to FedAsync", asmu_reduces_to_fedasync),
    ("FedBuff with K = 1 reduces to FedAsync", fedbuff_reduces_to_fedasync),
    ("FedSSMU with harmonic weights averages the round", fedssmu_mean),
];

pub fn run_self_test() -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(name, check)| CheckOutcome {
            name,
            result: check().map_err(|e| e.to_string()),
        })
        .collect()
}

fn fail(msg: impl Into<String>) -> Result<String> {
    Err(Error::InvariantViolation(msg.into()))
}

fn every_protocol() -> Result<String> {
    let s = quick_settings();
    for p in Protocol::ALL {
        for seed in 0..2 {
            sim::run(&SimConfig::new(p, seed, s.clone()))?;
        }
    }
    Ok(format!("{} protocols x 2 seeds", Protocol::ALL.len()))
}

fn determinism() -> Result<String> {
    let s = quick_settings();
    for p in [Protocol::FedAsmu, Protocol::FedSsmu, Protocol::FedBuff] {
        let a = sim::run(&SimConfig::new(p, 5, s.clone()))?;
        let b = sim::run(&SimConfig::new(p, 5, s.clone()))?;
        if a != b || a.to_jsonl()? != b.to_jsonl()? {
            return fail(format!("{p} diverged between two identical runs"));
        }
    }
    Ok("fedasmu, fedssmu, fedbuff".into())
}

fn tight_tau() -> Result<String> {
    let s = SimSettings {
        m: 20,
        m_prime: 5,
        tau: 1,
        ..quick_settings()
    };
    let log = sim::run_fedasmu(&s, 0)?;
    if log.discarded == 0 {
        return fail("no upload was discarded");
    }
    Ok(format!("{} discarded", log.discarded))
}

fn asmu_reduces_to_fedasync() -> Result<String> {
    let base = quick_settings();
    let h = base.hyperparameters;
    let reduced = SimSettings {
        ablation: Ablation {
            disable_dynamic_aggregation: true,
            disable_device_merge: true,
        },
        alpha_rule: Some(AlphaRule::StaticPolynomial {
            alpha: h.fedasync_alpha,
            exponent: h.fedasync_exponent,
        }),
        ..base.clone()
    };
    let a = sim::run_fedasmu(&reduced, 3)?;
    let b = sim::run_baseline(&base, 3, Protocol::FedAsync)?;
    if !same_trajectory(&a, &b) {
        return fail("trajectories differ");
    }
    Ok(format!("{} aggregations matched", a.aggregations.len()))
}

fn fedbuff_reduces_to_fedasync() -> Result<String> {
    let mut s = quick_settings();
    s.hyperparameters.fedbuff_k = 1;
    let mut constant = s.clone();
    constant.alpha_rule = Some(AlphaRule::Constant {
        alpha: s.hyperparameters.fedbuff_alpha,
    });
    let a = sim::run_baseline(&s, 4, Protocol::FedBuff)?;
    let b = sim::run_baseline(&constant, 4, Protocol::FedAsync)?;
    if !same_trajectory(&a, &b) {
        return fail("trajectories differ");
    }
    Ok(format!("{} aggregations matched", a.aggregations.len()))
}

fn fedssmu_mean() -> Result<String> {
    let s = SimSettings {
        rounds: 5,
        alpha_rule: Some(AlphaRule::Harmonic),
        ablation: Ablation {
            disable_device_merge: true,
            ..Ablation::default()
        },
        ..quick_settings()
    };
    let mut cfg = SimConfig::new(Protocol::FedSsmu, 1, s);
    cfg.capture_models = true;
    let log = sim::run(&cfg)?;
    let mut worst = 0.0f64;
    for (round, global) in log.round_models.iter().enumerate() {
        let ups: Vec<_> = log
            .uploads
            .iter()
            .filter(|u| u.round == Some(round as u64))
            .map(|u| &u.model)
            .collect();
        let mean = weighted_mean(&ups, &vec![1.0; ups.len()])?;
        for (x, y) in global.as_slice().iter().zip(mean.as_slice()) {
            worst = worst.max((x - y).abs());
        }
    }
    if worst > 1e-12 {
        return fail(format!("max deviation {worst:e}"));
    }
    Ok(format!("max deviation {worst:e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_test_passes() {
        for c in run_self_test() {
            assert!(c.passed(), "{}: {:?}", c.name, c.result);
        }
    }
}
