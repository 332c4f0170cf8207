use fedasmu_core::data::{self, dirichlet_partition, label_entropy, make_synthetic};
use fedasmu_core::{Dataset, DatasetSpec};
use proptest::prelude::*;

fn dataset(n: usize, classes: usize) -> Dataset {
    make_synthetic(&DatasetSpec {
        num_samples: n,
        input_dim: 3,
        num_classes: classes,
        class_separation: 2.0,
        noise_std: 1.0,
        seed: 9,
    })
    .unwrap()
}

fn mean_entropy(data: &Dataset, m: usize, alpha: f64, seed: u64) -> f64 {
    let parts = dirichlet_partition(data, m, alpha, seed).unwrap();
    parts.iter().map(|p| label_entropy(p, data)).sum::<f64>() / m as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partitions_cover_the_data_exactly_once(n in 20usize..300, classes in 2usize..6,
                                              m in 1usize..20, alpha in 0.01f64..10.0, seed in any::<u64>()) {
        prop_assume!(m <= n);
        let data = dataset(n, classes);
        let parts = dirichlet_partition(&data, m, alpha, seed).unwrap();
        prop_assert_eq!(parts.len(), m);
        let mut seen = vec![false; n];
        for (d, p) in parts.iter().enumerate() {
            prop_assert_eq!(p.device_id, d);
            prop_assert!(!p.is_empty());
            prop_assert!(p.sample_indices.windows(2).all(|w| w[0] < w[1]));
            for &i in &p.sample_indices {
                prop_assert!(!seen[i], "sample {} assigned twice", i);
                seen[i] = true;
            }
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn partitioning_is_a_function_of_the_seed(m in 1usize..10, alpha in 0.05f64..5.0, seed in any::<u64>()) {
        let data = dataset(100, 4);
        prop_assert_eq!(
            dirichlet_partition(&data, m, alpha, seed).unwrap(),
            dirichlet_partition(&data, m, alpha, seed).unwrap()
        );
    }

    #[test]
    fn entropy_is_bounded_by_log_classes(m in 1usize..10, alpha in 0.05f64..5.0, seed in any::<u64>()) {
        let data = dataset(200, 4);
        for p in dirichlet_partition(&data, m, alpha, seed).unwrap() {
            let h = label_entropy(&p, &data);
            prop_assert!(h >= 0.0 && h <= (4.0f64).ln() + 1e-12);
        }
    }
}

#[test]
fn concentration_controls_label_skew() {
    let data = dataset(2000, 10);
    let avg = |alpha| (0..5).map(|s| mean_entropy(&data, 20, alpha, s)).sum::<f64>() / 5.0;
    let (low, mid, high) = (avg(0.1), avg(1.0), avg(100.0));
    assert!(low < mid && mid < high, "{low} {mid} {high}");
}

#[test]
fn invalid_partition_requests_are_rejected() {
    let data = dataset(10, 2);
    assert!(dirichlet_partition(&data, 0, 0.5, 0).is_err());
    assert!(dirichlet_partition(&data, 11, 0.5, 0).is_err());
    assert!(dirichlet_partition(&data, 2, 0.0, 0).is_err());
    assert!(dirichlet_partition(&data, 2, f64::NAN, 0).is_err());
}

#[test]
fn synthetic_data_is_seeded() {
    let a = dataset(50, 3);
    assert_eq!(a, dataset(50, 3));
    let (train, test) = data::split_train_test(&a, 0.2, 1).unwrap();
    assert_eq!((train.len(), test.len()), (40, 10));
}
