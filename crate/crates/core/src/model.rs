//! Tiny differentiable classifiers with hand-derived gradients.
//!
//! Two model kinds are supported: multinomial logistic regression and a
//! one-hidden-layer MLP with `tanh` activation. Parameters live in a flat
//! [`ParamVector`] laid out as
//!
//! * logistic regression: `W (C x D)` row-major, then `b (C)`;
//! * MLP: `W1 (H x D)`, `b1 (H)`, `W2 (C x H)`, `b2 (C)`.
//!
//! The loss is the mean cross-entropy over a batch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::params::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LogisticRegression,
    #[serde(rename = "mlp-1hidden")]
    Mlp1Hidden,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::LogisticRegression,
            input_dim,
            hidden_dim: 0,
            num_classes,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp1Hidden,
            input_dim,
            hidden_dim,
            num_classes,
        }
    }

    pub fn param_count(&self) -> usize {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        match self.kind {
            ModelKind::LogisticRegression => c * d + c,
            ModelKind::Mlp1Hidden => h * d + h + c * h + c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("model input_dim must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("model num_classes must be at least 2"));
        }
        match self.kind {
            ModelKind::Mlp1Hidden if self.hidden_dim == 0 => {
                Err(Error::invalid("mlp-1hidden requires hidden_dim > 0"))
            }
            ModelKind::LogisticRegression if self.hidden_dim != 0 => {
                Err(Error::invalid("logistic-regression requires hidden_dim = 0"))
            }
            _ => Ok(()),
        }
    }

    /// Seeded uniform initialisation on `[-0.05, 0.05]`.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ParamVector::new(
            (0..self.param_count())
                .map(|_| rng.random_range(-0.05..=0.05))
                .collect(),
        )
    }
}

/// A mini-batch of labelled feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != labels.len() {
            return Err(Error::invalid(
                "batch inputs and labels must have equal, nonzero length",
            ));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_inputs(spec: &ModelSpec, params: &ParamVector, inputs: &[Vec<f64>], labels: &[usize]) -> Result<()> {
    if params.dim() != spec.param_count() {
        return Err(Error::invalid(format!(
            "parameter dimension {} does not match model ({})",
            params.dim(),
            spec.param_count()
        )));
    }
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::invalid("batch must be nonempty with one label per input"));
    }
    for x in inputs {
        if x.len() != spec.input_dim {
            return Err(Error::invalid(format!(
                "input of length {} does not match input_dim {}",
                x.len(),
                spec.input_dim
            )));
        }
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= spec.num_classes) {
        return Err(Error::invalid(format!("label {y} out of range")));
    }
    Ok(())
}

/// `out = W x + b` where `W` is `rows x x.len()` row-major.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    }
}

/// Replaces logits with softmax probabilities and returns `log p[label]`.
fn softmax_in_place(z: &mut [f64], label: usize) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let log_p = z[label].ln() - sum.ln();
    for v in z.iter_mut() {
        *v /= sum;
    }
    log_p
}

struct Layout {
    d: usize,
    h: usize,
    c: usize,
}

impl Layout {
    fn of(spec: &ModelSpec) -> Self {
        Layout {
            d: spec.input_dim,
            h: spec.hidden_dim,
            c: spec.num_classes,
        }
    }
}

/// Per-sample forward pass. Writes class probabilities into `probs`, the hidden
/// activations into `hidden` (MLP only) and returns the sample loss.
fn forward(spec: &ModelSpec, p: &[f64], x: &[f64], y: usize, hidden: &mut [f64], probs: &mut [f64]) -> f64 {
    let Layout { d, h, c } = Layout::of(spec);
    match spec.kind {
        ModelKind::LogisticRegression => {
            affine(&p[..c * d], &p[c * d..c * d + c], x, probs);
        }
        ModelKind::Mlp1Hidden => {
            let (w1, rest) = p.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            affine(w1, b1, x, hidden);
            hidden.iter_mut().for_each(|v| *v = v.tanh());
            affine(w2, b2, hidden, probs);
        }
    }
    -softmax_in_place(probs, y)
}

fn loss_raw(spec: &ModelSpec, params: &ParamVector, inputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut hidden = vec![0.0; spec.hidden_dim];
    let mut probs = vec![0.0; spec.num_classes];
    let total: f64 = inputs
        .iter()
        .zip(labels)
        .map(|(x, &y)| forward(spec, params.as_slice(), x, y, &mut hidden, &mut probs))
        .sum();
    total / labels.len() as f64
}

/// Mean cross-entropy of `params` on `batch`.
pub fn loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    check_inputs(spec, params, &batch.inputs, &batch.labels)?;
    Ok(loss_raw(spec, params, &batch.inputs, &batch.labels))
}

/// Gradient of [`loss`] with respect to `params`.
pub fn grad(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    check_inputs(spec, params, &batch.inputs, &batch.labels)?;
    let Layout { d, h, c } = Layout::of(spec);
    let p = params.as_slice();
    let mut g = vec![0.0; p.len()];
    let mut hidden = vec![0.0; h];
    let mut probs = vec![0.0; c];
    let mut dhidden = vec![0.0; h];
    for (x, &y) in batch.inputs.iter().zip(&batch.labels) {
        forward(spec, p, x, y, &mut hidden, &mut probs);
        // probs now holds dLoss/dlogits after subtracting the one-hot label
        probs[y] -= 1.0;
        match spec.kind {
            ModelKind::LogisticRegression => {
                let (gw, gb) = g.split_at_mut(c * d);
                for (k, &dz) in probs.iter().enumerate() {
                    gb[k] += dz;
                    for (gwk, &xv) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *gwk += dz * xv;
                    }
                }
            }
            ModelKind::Mlp1Hidden => {
                let w2 = &p[h * d + h..h * d + h + c * h];
                let (gw1, rest) = g.split_at_mut(h * d);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                dhidden.iter_mut().for_each(|v| *v = 0.0);
                for (k, &dz) in probs.iter().enumerate() {
                    gb2[k] += dz;
                    let w2row = &w2[k * h..(k + 1) * h];
                    for j in 0..h {
                        gw2[k * h + j] += dz * hidden[j];
                        dhidden[j] += w2row[j] * dz;
                    }
                }
                for j in 0..h {
                    let da = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
                    gb1[j] += da;
                    for (gw, &xv) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *gw += da * xv;
                    }
                }
            }
        }
    }
    let n = batch.len() as f64;
    g.iter_mut().for_each(|v| *v /= n);
    Ok(ParamVector::new(g))
}

/// One plain SGD step: `params - eta * g`.
pub fn sgd_step(params: &ParamVector, g: &ParamVector, eta: f64) -> Result<ParamVector> {
    params.check_same_dim(g, "sgd_step")?;
    if !(eta > 0.0) {
        return Err(Error::invalid("sgd_step: eta must be positive"));
    }
    Ok(ParamVector::new(
        params
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(w, gi)| w - eta * gi)
            .collect(),
    ))
}

/// Predicted class for one input; ties go to the lowest class index.
pub fn predict(spec: &ModelSpec, params: &ParamVector, x: &[f64]) -> usize {
    let mut hidden = vec![0.0; spec.hidden_dim];
    let mut probs = vec![0.0; spec.num_classes];
    forward(spec, params.as_slice(), x, 0, &mut hidden, &mut probs);
    argmax(&probs)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Mean loss and argmax accuracy on a whole dataset.
pub fn evaluate(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<(f64, f64)> {
    evaluate_samples(spec, params, &data.features, &data.labels)
}

pub fn evaluate_samples(
    spec: &ModelSpec,
    params: &ParamVector,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, f64)> {
    if inputs.is_empty() {
        return Err(Error::invalid("evaluate: empty dataset"));
    }
    check_inputs(spec, params, inputs, labels)?;
    let mut hidden = vec![0.0; spec.hidden_dim];
    let mut probs = vec![0.0; spec.num_classes];
    let mut total = 0.0;
    let mut correct = 0usize;
    for (x, &y) in inputs.iter().zip(labels) {
        total += forward(spec, params.as_slice(), x, y, &mut hidden, &mut probs);
        if argmax(&probs) == y {
            correct += 1;
        }
    }
    let n = labels.len() as f64;
    Ok((total / n, correct as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_instance(spec: &ModelSpec, n: usize, seed: u64) -> (ParamVector, Batch) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ParamVector::new(
            (0..spec.param_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        );
        let inputs = (0..n)
            .map(|_| (0..spec.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let labels = (0..n).map(|_| rng.random_range(0..spec.num_classes)).collect();
        (params, Batch::new(inputs, labels).unwrap())
    }

    #[test]
    fn zero_params_two_classes_gives_ln2() {
        let spec = ModelSpec::logistic(3, 2);
        let batch = Batch::new(vec![vec![1.0, -2.0, 0.5], vec![0.0, 0.0, 3.0]], vec![0, 1]).unwrap();
        let l = loss(&spec, &ParamVector::zeros(spec.param_count()), &batch).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn input_dim_mismatch_is_invalid() {
        let spec = ModelSpec::logistic(2, 2);
        let batch = Batch::new(vec![vec![1.0, 2.0, 3.0]], vec![0]).unwrap();
        let params = ParamVector::zeros(spec.param_count());
        assert!(matches!(loss(&spec, &params, &batch), Err(Error::InvalidArgument(_))));
        assert!(matches!(grad(&spec, &params, &batch), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn param_dim_mismatch_is_invalid() {
        let spec = ModelSpec::mlp(2, 3, 2);
        let batch = Batch::new(vec![vec![1.0, 2.0]], vec![0]).unwrap();
        assert!(loss(&spec, &ParamVector::zeros(4), &batch).is_err());
    }

    /// Straight-line scalar re-evaluation of the logistic cross-entropy.
    fn scalar_logistic_loss(spec: &ModelSpec, p: &[f64], batch: &Batch) -> f64 {
        let (d, c) = (spec.input_dim, spec.num_classes);
        let mut total = 0.0;
        for (x, &y) in batch.inputs.iter().zip(&batch.labels) {
            let mut z = Vec::new();
            for k in 0..c {
                let mut s = p[c * d + k];
                for j in 0..d {
                    s += p[k * d + j] * x[j];
                }
                z.push(s);
            }
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            total += -(z[y].exp() / denom).ln();
        }
        total / batch.len() as f64
    }

    fn scalar_mlp_loss(spec: &ModelSpec, p: &[f64], batch: &Batch) -> f64 {
        let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
        let mut total = 0.0;
        for (x, &y) in batch.inputs.iter().zip(&batch.labels) {
            let mut hid = Vec::new();
            for j in 0..h {
                let mut s = p[h * d + j];
                for i in 0..d {
                    s += p[j * d + i] * x[i];
                }
                hid.push(s.tanh());
            }
            let off = h * d + h;
            let mut z = Vec::new();
            for k in 0..c {
                let mut s = p[off + c * h + k];
                for j in 0..h {
                    s += p[off + k * h + j] * hid[j];
                }
                z.push(s);
            }
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            total += -(z[y].exp() / denom).ln();
        }
        total / batch.len() as f64
    }

    #[test]
    fn loss_matches_scalar_reimplementation() {
        let lr = ModelSpec::logistic(4, 3);
        let (p, b) = random_instance(&lr, 10, 7);
        let ours = loss(&lr, &p, &b).unwrap();
        assert!((ours - scalar_logistic_loss(&lr, p.as_slice(), &b)).abs() < 1e-10);

        let mlp = ModelSpec::mlp(4, 5, 3);
        let (p, b) = random_instance(&mlp, 10, 8);
        let ours = loss(&mlp, &p, &b).unwrap();
        assert!((ours - scalar_mlp_loss(&mlp, p.as_slice(), &b)).abs() < 1e-10);
    }

    #[test]
    fn saturated_predictions_have_tiny_gradient() {
        let spec = ModelSpec::logistic(2, 2);
        // class 0 logit = 40*x0, class 1 logit = 40*x1
        let params = ParamVector::new(vec![40.0, 0.0, 0.0, 40.0, 0.0, 0.0]);
        let batch = Batch::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1]).unwrap();
        assert!(grad(&spec, &params, &batch).unwrap().norm() < 1e-6);
    }

    #[test]
    fn duplicated_batch_same_gradient() {
        let spec = ModelSpec::mlp(3, 4, 3);
        let (p, b) = random_instance(&spec, 6, 11);
        let mut inputs = b.inputs.clone();
        inputs.extend(b.inputs.iter().cloned());
        let mut labels = b.labels.clone();
        labels.extend(b.labels.iter().cloned());
        let doubled = Batch::new(inputs, labels).unwrap();
        let g1 = grad(&spec, &p, &b).unwrap();
        let g2 = grad(&spec, &p, &doubled).unwrap();
        for (a, c) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a - c).abs() < 1e-14);
        }
    }

    #[test]
    fn sgd_step_arithmetic() {
        let p = ParamVector::new(vec![0.0, 0.0]);
        let g = ParamVector::new(vec![1.0, 2.0]);
        let s = sgd_step(&p, &g, 0.1).unwrap();
        assert!((s.as_slice()[0] + 0.1).abs() < 1e-15);
        assert!((s.as_slice()[1] + 0.2).abs() < 1e-15);
        assert_eq!(sgd_step(&p, &ParamVector::zeros(2), 0.3).unwrap(), p);
        let twice = sgd_step(&s, &g, 0.1).unwrap();
        assert!((twice.as_slice()[1] + 0.4).abs() < 1e-15);
        assert!(sgd_step(&p, &ParamVector::zeros(3), 0.1).is_err());
        assert!(sgd_step(&p, &g, 0.0).is_err());
    }

    #[test]
    fn evaluate_tie_break_and_empty() {
        let spec = ModelSpec::logistic(1, 2);
        let zero = ParamVector::zeros(spec.param_count());
        // all-zero params: every prediction is class 0
        let (_, acc) = evaluate_samples(&spec, &zero, &[vec![1.0], vec![-1.0]], &[0, 1]).unwrap();
        assert_eq!(acc, 0.5);
        let (_, acc) = evaluate_samples(&spec, &zero, &[vec![1.0], vec![2.0]], &[0, 0]).unwrap();
        assert_eq!(acc, 1.0);
        assert!(evaluate_samples(&spec, &zero, &[], &[]).is_err());
    }

    #[test]
    fn evaluate_matches_per_sample_loop() {
        let spec = ModelSpec::mlp(3, 4, 4);
        let (p, b) = random_instance(&spec, 50, 3);
        let (_, acc) = evaluate_samples(&spec, &p, &b.inputs, &b.labels).unwrap();
        let brute = b
            .inputs
            .iter()
            .zip(&b.labels)
            .filter(|(x, &y)| predict(&spec, &p, x) == y)
            .count() as f64
            / 50.0;
        assert_eq!(acc, brute);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let spec = ModelSpec::mlp(5, 4, 3);
        let a = spec.init_params(1);
        assert_eq!(a, spec.init_params(1));
        assert_ne!(a, spec.init_params(2));
        assert!(a.as_slice().iter().all(|v| v.abs() <= 0.05));
    }

    #[test]
    fn loss_and_grad_are_pure() {
        let spec = ModelSpec::mlp(3, 3, 3);
        let (p, b) = random_instance(&spec, 8, 21);
        assert_eq!(loss(&spec, &p, &b).unwrap().to_bits(), loss(&spec, &p, &b).unwrap().to_bits());
        assert_eq!(grad(&spec, &p, &b).unwrap(), grad(&spec, &p, &b).unwrap());
    }
}
