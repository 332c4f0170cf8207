//! Named configuration presets.
//!
//! `desk` is the small default setup. The `table3-*` presets carry the
//! published per-workload hyperparameters (population, concurrency, rounds,
//! staleness bound, trigger period and the learning rates for every control
//! parameter); everything they do not mention, including the synthetic
//! dataset and model, comes from the defaults.

use serde_json::{json, Value};

use crate::error::{Error, Result};

struct Column {
    name: &'static str,
    eta_lambda: f64,
    eta_sigma: f64,
    eta_iota: f64,
    eta_gamma: f64,
    eta_upsilon: f64,
    eta_i: f64,
}

const fn col(name: &'static str, l: f64, s: f64, i: f64, g: f64, u: f64, eta_i: f64) -> Column {
    Column {
        name,
        eta_lambda: l,
        eta_sigma: s,
        eta_iota: i,
        eta_gamma: g,
        eta_upsilon: u,
        eta_i,
    }
}

const COLUMNS: [Column; 12] = [
    col("lenet-fmnist", 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 0.005),
    col("lenet-cifar10", 1e-3, 1e-3, 0.1, 0.1, 1e-3, 0.03),
    col("lenet-cifar100", 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 0.03),
    col("cnn-cifar10", 1e-3, 1e-3, 1e-4, 0.1, 1e-3, 0.028),
    col("cnn-cifar100", 1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 0.013),
    col("resnet-cifar100", 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 0.03),
    col("resnet-tinyimagenet", 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 0.03),
    col("alexnet-cifar10", 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 0.03),
    col("alexnet-cifar100", 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 0.03),
    col("vgg-cifar10", 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 0.03),
    col("vgg-cifar100", 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 0.03),
    col("textcnn-imdb", 1e-4, 1e-4, 1e-4, 1e-4, 1e-4, 0.001),
];

pub const DESK: &str = "desk";

/// Every preset name, `desk` first.
pub fn preset_names() -> Vec<String> {
    std::iter::once(DESK.to_string())
        .chain(COLUMNS.iter().map(|c| format!("table3-{}", c.name)))
        .collect()
}

/// The preset's keys as a partial configuration object.
pub fn preset(name: &str) -> Result<Value> {
    if name == DESK {
        return Ok(json!({
            "protocols": ["fedasmu", "fedasync", "fedavg"],
            "seeds": [0, 1, 2, 3, 4],
            "ceiling_fractions": [0.9],
        }));
    }
    let column = name
        .strip_prefix("table3-")
        .and_then(|rest| COLUMNS.iter().find(|c| c.name == rest))
        .ok_or_else(|| {
            Error::Config(vec![format!(
                "preset: unknown preset {name:?}; known presets: {}",
                preset_names().join(", ")
            )])
        })?;
    Ok(json!({
        "m": 100,
        "m_prime": 10,
        "T": 500,
        "tau": 99,
        "trigger_period": 10.0,
        "hyperparameters": {
            "eta_lambda": column.eta_lambda,
            "eta_sigma": column.eta_sigma,
            "eta_iota": column.eta_iota,
            "eta_gamma": column.eta_gamma,
            "eta_upsilon": column.eta_upsilon,
            "eta_i": column.eta_i,
            "eta_rl": 0.001,
        },
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_resolve() {
        let names = preset_names();
        assert_eq!(names.len(), 13);
        for n in &names {
            assert!(preset(n).is_ok(), "{n}");
        }
        assert!(preset("table3-lenet-mnist").is_err());
    }
}
