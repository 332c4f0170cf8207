//! Seeded synthetic datasets and non-IID Dirichlet partitioning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Batch;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_samples: usize,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Euclidean distance between any two Gaussian class centres.
    pub class_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("dataset num_classes must be at least 2"));
        }
        if self.input_dim == 0 {
            return Err(Error::invalid("dataset input_dim must be positive"));
        }
        if self.num_samples < self.num_classes {
            return Err(Error::invalid(format!(
                "num_samples ({}) must be at least num_classes ({})",
                self.num_samples, self.num_classes
            )));
        }
        if !(self.class_separation > 0.0) || !(self.noise_std > 0.0) {
            return Err(Error::invalid(
                "class_separation and noise_std must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            spec: self.spec,
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn as_batch(&self) -> Result<Batch> {
        Batch::new(self.features.clone(), self.labels.clone())
    }
}

/// Gaussian-mixture classification data. Class `c` is centred on
/// `sep/sqrt(2) * e_c` when `input_dim >= num_classes`, so every pair of
/// centres is exactly `class_separation` apart; otherwise on seeded random
/// directions of the same radius.
pub fn make_synthetic(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let radius = spec.class_separation / std::f64::consts::SQRT_2;
    let centres: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|c| {
            let mut v = vec![0.0; spec.input_dim];
            if spec.input_dim >= spec.num_classes {
                v[c] = radius;
            } else {
                for x in v.iter_mut() {
                    *x = rng.sample(StandardNormal);
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter_mut().for_each(|x| *x *= radius / norm);
            }
            v
        })
        .collect();

    let mut labels: Vec<usize> = (0..spec.num_samples).map(|i| i % spec.num_classes).collect();
    labels.shuffle(&mut rng);
    let features = labels
        .iter()
        .map(|&y| {
            centres[y]
                .iter()
                .map(|&m| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + spec.noise_std * z
                })
                .collect()
        })
        .collect();
    Ok(Dataset {
        spec: *spec,
        features,
        labels,
    })
}

/// Seeded shuffle split into (train, test) with `test_fraction` held out.
pub fn split_train_test(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction must lie in (0, 1)"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((data.len() as f64 * test_fraction).round() as usize).clamp(1, data.len() - 1);
    let (test, train) = idx.split_at(n_test);
    Ok((data.subset(train), data.subset(test)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub device_id: usize,
    pub sample_indices: Vec<usize>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

/// Integer counts summing to `total` from fractional `props` (largest remainder;
/// ties broken towards the lower index).
fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn dirichlet_sample(rng: &mut ChaCha8Rng, m: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("concentration validated positive");
    let mut draws: Vec<f64> = (0..m).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        draws.iter_mut().for_each(|d| *d /= sum);
    } else {
        // every gamma draw underflowed; the limit is a single random vertex
        let k = rng.random_range(0..m);
        draws = vec![0.0; m];
        draws[k] = 1.0;
    }
    draws
}

/// Splits `data` over `m` devices. Each class is divided by proportions drawn
/// from a symmetric Dirichlet(`concentration`); empty devices are repaired by
/// moving one sample from the currently largest partition.
pub fn dirichlet_partition(data: &Dataset, m: usize, concentration: f64, seed: u64) -> Result<Vec<Partition>> {
    if m == 0 {
        return Err(Error::invalid("number of devices must be positive"));
    }
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(Error::invalid("dirichlet concentration must be positive"));
    }
    if m > data.len() {
        return Err(Error::invalid(format!(
            "cannot split {} samples over {m} devices",
            data.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); m];
    for class in 0..data.num_classes() {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let props = if m == 1 {
            vec![1.0]
        } else {
            dirichlet_sample(&mut rng, m, concentration)
        };
        let counts = largest_remainder(&props, members.len());
        let mut rest = members.as_slice();
        for (dev, &n) in counts.iter().enumerate() {
            let (take, tail) = rest.split_at(n);
            parts[dev].extend_from_slice(take);
            rest = tail;
        }
    }
    while let Some(empty) = parts.iter().position(|p| p.is_empty()) {
        let largest = (0..m)
            .max_by(|&a, &b| parts[a].len().cmp(&parts[b].len()).then(b.cmp(&a)))
            .expect("m >= 1");
        let moved = parts[largest].pop().expect("largest partition is nonempty");
        parts[empty].push(moved);
    }
    Ok(parts
        .into_iter()
        .enumerate()
        .map(|(device_id, mut sample_indices)| {
            sample_indices.sort_unstable();
            Partition {
                device_id,
                sample_indices,
            }
        })
        .collect())
}

/// Uniform draw with replacement of `batch_size` samples from a partition.
pub fn sample_minibatch(
    partition: &Partition,
    data: &Dataset,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    if partition.is_empty() {
        return Err(Error::invalid("cannot sample from an empty partition"));
    }
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be at least 1"));
    }
    let idx: Vec<usize> = (0..batch_size)
        .map(|_| partition.sample_indices[rng.random_range(0..partition.len())])
        .collect();
    Batch::new(
        idx.iter().map(|&i| data.features[i].clone()).collect(),
        idx.iter().map(|&i| data.labels[i]).collect(),
    )
}

/// The whole partition as one batch, in index order.
pub fn full_batch(partition: &Partition, data: &Dataset) -> Result<Batch> {
    if partition.is_empty() {
        return Err(Error::invalid("cannot build a batch from an empty partition"));
    }
    Batch::new(
        partition.sample_indices.iter().map(|&i| data.features[i].clone()).collect(),
        partition.sample_indices.iter().map(|&i| data.labels[i]).collect(),
    )
}

/// Shannon entropy (nats) of the label histogram of one partition.
pub fn label_entropy(partition: &Partition, data: &Dataset) -> f64 {
    let mut counts = vec![0usize; data.num_classes()];
    for &i in &partition.sample_indices {
        counts[data.labels[i]] += 1;
    }
    let n = partition.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// On-disk JSON form of a dataset and its partitioning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetArchive {
    pub spec: DatasetSpec,
    pub samples: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub partitions: Vec<Vec<usize>>,
}

impl DatasetArchive {
    pub fn new(data: &Dataset, partitions: &[Partition]) -> Self {
        DatasetArchive {
            spec: data.spec,
            samples: data.features.clone(),
            labels: data.labels.clone(),
            partitions: partitions.iter().map(|p| p.sample_indices.clone()).collect(),
        }
    }

    pub fn into_parts(self) -> (Dataset, Vec<Partition>) {
        let partitions = self
            .partitions
            .into_iter()
            .enumerate()
            .map(|(device_id, sample_indices)| Partition {
                device_id,
                sample_indices,
            })
            .collect();
        (
            Dataset {
                spec: self.spec,
                features: self.samples,
                labels: self.labels,
            },
            partitions,
        )
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
