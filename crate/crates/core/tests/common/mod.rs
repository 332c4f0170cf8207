//! Oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use fedasmu_core::model::{self, Batch, ModelSpec};
use fedasmu_core::params::ParamVector;
use fedasmu_core::sim::RunLog;
use rand::Rng;

/// Coordinates whose gradient is this small are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Central finite difference of the model loss in every coordinate.
pub fn fd_grad(spec: &ModelSpec, w: &ParamVector, batch: &Batch, h: f64) -> Vec<f64> {
    (0..w.dim())
        .map(|i| {
            let mut plus = w.clone();
            let mut minus = w.clone();
            plus.as_mut_slice()[i] += h;
            minus.as_mut_slice()[i] -= h;
            let lp = model::loss(spec, &plus, batch).unwrap();
            let lm = model::loss(spec, &minus, batch).unwrap();
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

/// Central finite difference of a scalar function.
pub fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

pub fn random_batch(rng: &mut impl Rng, n: usize, dim: usize, classes: usize) -> Batch {
    let inputs = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(inputs, labels).unwrap()
}

pub fn random_params(rng: &mut impl Rng, dim: usize, scale: f64) -> ParamVector {
    ParamVector::new((0..dim).map(|_| rng.random_range(-scale..scale)).collect())
}

/// Plain arithmetic mean, written independently of the library's averaging.
pub fn mean_oracle(models: &[&ParamVector]) -> Vec<f64> {
    let n = models.len() as f64;
    let mut out = vec![0.0; models[0].dim()];
    for m in models {
        for (o, v) in out.iter_mut().zip(m.as_slice()) {
            *o += v;
        }
    }
    out.iter().map(|s| s / n).collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Everything observable about a run except the protocol label.
pub fn trajectory(log: &RunLog) -> String {
    let records: Vec<_> = log
        .records
        .iter()
        .map(|r| (r.sim_time, r.version, r.eval_loss, r.eval_acc, r.discarded))
        .collect();
    serde_json::to_string(&(records, &log.aggregations, &log.trace, &log.final_model)).unwrap()
}
