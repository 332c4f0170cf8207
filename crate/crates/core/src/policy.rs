//! Choosing the local epoch after which a device asks for a fresh global model.
//!
//! A device's first round draws its slot from the shared [`MetaPolicy`], a
//! categorical softmax trained with REINFORCE against a moving baseline. Later
//! rounds refine the slot per device with a [`QTable`] over the actions
//! add / stay / minus.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::argmax;

/// Anything that can choose a request slot and learn from the merge reward.
pub trait SlotSelector {
    fn select(&self, rng: &mut impl Rng) -> usize;
    fn learn(&mut self, chosen_slot: usize, reward: f64);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaPolicy {
    /// `logits[k]` scores slot `k + 1`.
    pub logits: Vec<f64>,
    pub baseline_b: f64,
    pub rho: f64,
    pub eta_rl: f64,
    pub epsilon: f64,
}

impl MetaPolicy {
    /// Uniform policy over slots `1..=max_epochs - 1`.
    pub fn uniform(max_epochs: usize, rho: f64, eta_rl: f64, epsilon: f64) -> Self {
        assert!(max_epochs >= 2, "need at least two local epochs");
        MetaPolicy {
            logits: vec![0.0; max_epochs - 1],
            baseline_b: 0.0,
            rho,
            eta_rl,
            epsilon,
        }
    }

    pub fn num_slots(&self) -> usize {
        self.logits.len()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let max = self.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }
}

/// epsilon-greedy draw from the meta policy; greedy ties go to the lowest slot.
pub fn select_slot_meta(policy: &MetaPolicy, rng: &mut impl Rng) -> usize {
    let explore: f64 = rng.random();
    if explore < policy.epsilon {
        rng.random_range(1..=policy.num_slots())
    } else {
        argmax(&policy.probabilities()) + 1
    }
}

/// Reward of a device-side merge: the drop in mini-batch loss it produced.
pub fn reward(loss_before: f64, loss_after: f64) -> f64 {
    loss_before - loss_after
}

pub fn update_baseline(b: f64, r: f64, rho: f64) -> f64 {
    (1.0 - rho) * b + rho * r
}

/// REINFORCE step: `logits += eta_rl * (R - b) * grad log p(chosen)`.
pub fn update_meta(policy: &MetaPolicy, chosen_slot: usize, r: f64) -> MetaPolicy {
    let advantage = r - policy.baseline_b;
    let probs = policy.probabilities();
    let mut next = policy.clone();
    for (k, (z, p)) in next.logits.iter_mut().zip(&probs).enumerate() {
        let indicator = if k + 1 == chosen_slot { 1.0 } else { 0.0 };
        *z += policy.eta_rl * advantage * (indicator - p);
    }
    next
}

impl SlotSelector for MetaPolicy {
    fn select(&self, rng: &mut impl Rng) -> usize {
        select_slot_meta(self, rng)
    }

    fn learn(&mut self, chosen_slot: usize, r: f64) {
        *self = update_meta(self, chosen_slot, r);
        self.baseline_b = update_baseline(self.baseline_b, r, self.rho);
    }
}

/// Slot adjustments, in tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Add,
    Stay,
    Minus,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Add, Action::Stay, Action::Minus];

    fn index(self) -> usize {
        self as usize
    }

    pub fn apply(self, slot: usize, max_slot: usize) -> usize {
        let moved = match self {
            Action::Add => slot + 1,
            Action::Stay => slot,
            Action::Minus => slot.saturating_sub(1),
        };
        moved.clamp(1, max_slot)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    /// Action values per slot, indexed by [`Action`] order; unseen slots read as 0.
    pub values: BTreeMap<usize, [f64; 3]>,
    pub phi: f64,
    pub psi: f64,
    pub epsilon: f64,
    /// Largest admissible slot, `L_i - 1`.
    pub max_slot: usize,
}

impl QTable {
    pub fn new(max_epochs: usize, phi: f64, psi: f64, epsilon: f64) -> Self {
        assert!(max_epochs >= 2, "need at least two local epochs");
        QTable {
            values: BTreeMap::new(),
            phi,
            psi,
            epsilon,
            max_slot: max_epochs - 1,
        }
    }

    pub fn get(&self, slot: usize, action: Action) -> f64 {
        self.values.get(&slot).map_or(0.0, |v| v[action.index()])
    }

    pub fn set(&mut self, slot: usize, action: Action, value: f64) {
        self.values.entry(slot).or_insert([0.0; 3])[action.index()] = value;
    }

    fn best_action(&self, slot: usize) -> Action {
        let row = self.values.get(&slot).copied().unwrap_or([0.0; 3]);
        Action::ALL[argmax(&row)]
    }

    fn max_value(&self, slot: usize) -> f64 {
        let row = self.values.get(&slot).copied().unwrap_or([0.0; 3]);
        row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// epsilon-greedy action at `current_slot`, returning the resulting slot.
pub fn select_slot_q(q: &QTable, current_slot: usize, rng: &mut impl Rng) -> (usize, Action) {
    let current = current_slot.clamp(1, q.max_slot);
    let explore: f64 = rng.random();
    let action = if explore < q.epsilon {
        Action::ALL[rng.random_range(0..3)]
    } else {
        q.best_action(current)
    };
    (action.apply(current, q.max_slot), action)
}

/// `H(l, a) += phi * (R + psi * max_a' H(l_new, a') - H(l, a))`.
pub fn update_q(q: &QTable, prev_slot: usize, prev_action: Action, new_slot: usize, r: f64) -> QTable {
    let old = q.get(prev_slot, prev_action);
    let target = r + q.psi * q.max_value(new_slot);
    let mut next = q.clone();
    next.set(prev_slot, prev_action, old + q.phi * (target - old));
    next
}

/// Fixed request slots used as baselines for the learned selector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotStrategy {
    /// Meta policy for the first round, Q-learning afterwards.
    #[default]
    Rl,
    /// Right after the first local epoch.
    H1,
    /// Midway through local training.
    H2,
    /// In the penultimate local epoch.
    H3,
}

impl SlotStrategy {
    pub fn fixed_slot(self, local_epochs: usize) -> Option<usize> {
        let max_slot = local_epochs - 1;
        match self {
            SlotStrategy::Rl => None,
            SlotStrategy::H1 => Some(1),
            SlotStrategy::H2 => Some((local_epochs / 2).clamp(1, max_slot)),
            SlotStrategy::H3 => Some(max_slot),
        }
    }
}
