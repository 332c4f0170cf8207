use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fedasmu_core::aggregation::{self, alpha_weight};
use fedasmu_core::data::{dirichlet_partition, make_synthetic};
use fedasmu_core::model::{self, Batch, ModelSpec};
use fedasmu_core::sim::{self, Protocol, SimConfig};
use fedasmu_core::{ParamVector, SimSettings};

fn small() -> SimSettings {
    SimSettings {
        m: 10,
        m_prime: 3,
        rounds: 30,
        ..SimSettings::default()
    }
}

fn simulations(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate");
    group.sample_size(10);
    for p in [Protocol::FedAsmu, Protocol::FedAsync, Protocol::FedSsmu, Protocol::FedAvg] {
        let cfg = SimConfig::new(p, 0, small());
        group.bench_function(p.name(), |b| b.iter(|| sim::run(black_box(&cfg)).unwrap()));
    }
    group.finish();
}

fn kernels(c: &mut Criterion) {
    let spec = ModelSpec::logistic(20, 10);
    let w = ParamVector::new((0..spec.param_count()).map(|i| (i as f64 * 0.37).sin() * 0.1).collect());
    let batch = Batch::new(
        (0..16).map(|i| (0..20).map(|j| ((i * 20 + j) as f64).cos()).collect()).collect(),
        (0..16).map(|i| i % 10).collect(),
    )
    .unwrap();
    c.bench_function("logistic_grad_b16", |b| {
        b.iter(|| model::grad(&spec, black_box(&w), black_box(&batch)).unwrap())
    });

    let other = ParamVector::new(w.as_slice().iter().map(|x| x + 0.01).collect());
    let controls = fedasmu_core::sim::Hyperparams::default().server_controls();
    c.bench_function("server_merge", |b| {
        b.iter(|| {
            let a = alpha_weight(&controls, black_box(40), black_box(33));
            aggregation::server_merge(&w, &other, a).unwrap()
        })
    });

    let data = make_synthetic(&small().dataset).unwrap();
    c.bench_function("dirichlet_partition_m100", |b| {
        b.iter(|| dirichlet_partition(&data, 100, 0.5, black_box(1)).unwrap())
    });
}

criterion_group!(benches, simulations, kernels);
criterion_main!(benches);
