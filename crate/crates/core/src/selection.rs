//! Self-adaptive, class-balanced sample selection.
//!
//! A global threshold tracks the (EMA-smoothed) mean probability the student
//! assigns to the given labels; per-class expectations of the predicted
//! distribution rescale it into local thresholds. A sample is clean when its
//! given-label probability strictly exceeds the local threshold of its given
//! class.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSet;
use crate::model::{softmax_rows, ModelParams};

const PROBE_CHUNK: usize = 1024;

/// EMA state behind the global threshold and the per-class expectations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub global_t: f64,
    pub class_e: Vec<f64>,
    pub ema_m: f64,
    /// Epoch whose values are currently stored.
    pub epoch_index: usize,
}

impl ThresholdState {
    /// Epoch-0 state: every value equals `1/C`.
    pub fn new(class_count: usize, ema_m: f64) -> Self {
        let init = 1.0 / class_count as f64;
        Self {
            global_t: init,
            class_e: vec![init; class_count],
            ema_m,
            epoch_index: 0,
        }
    }

    pub fn class_count(&self) -> usize {
        self.class_e.len()
    }

    /// Applies both EMA updates for `epoch` from that epoch's probe.
    pub fn advance(&mut self, epoch: usize, probe: &EpochProbe) {
        update_global_threshold(self, epoch, probe);
        update_class_expectations(self, epoch, probe);
    }
}

/// Student probabilities on un-augmented training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochProbe {
    pub probs: Array2<f64>,
    pub given_label_prob: Vec<f64>,
}

impl EpochProbe {
    pub fn len(&self) -> usize {
        self.given_label_prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.given_label_prob.is_empty()
    }

    /// Mean of the given-label probabilities.
    pub fn mean_given_prob(&self) -> f64 {
        mean(&self.given_label_prob)
    }

    /// Mean predicted probability of every class over all samples.
    pub fn mean_class_probs(&self) -> Vec<f64> {
        if self.is_empty() {
            return vec![0.0; self.probs.ncols()];
        }
        self.probs.mean_axis(Axis(0)).expect("non-empty").to_vec()
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Row-wise softmax of `model` on the raw features, evaluated in fixed-size
/// shards.
pub fn predict_probs(model: &ModelParams, train: &TrainingSet<'_>) -> Array2<f64> {
    let n = train.len();
    let mut probs = Array2::zeros((n, model.output_dim()));
    let mut start = 0;
    while start < n {
        let end = (start + PROBE_CHUNK).min(n);
        let logits = model.forward(train.features.slice(s![start..end, ..]));
        probs.slice_mut(s![start..end, ..]).assign(&softmax_rows(logits.view()));
        start = end;
    }
    probs
}

pub fn probe_epoch(student: &ModelParams, train: &TrainingSet<'_>) -> EpochProbe {
    let probs = predict_probs(student, train);
    let given_label_prob = train
        .given_labels
        .iter()
        .enumerate()
        .map(|(i, &y)| probs[[i, y]])
        .collect();
    EpochProbe {
        probs,
        given_label_prob,
    }
}

/// `T_t = m T_{t-1} + (1-m) mean_i p_i[y_i]`; epoch 0 keeps `1/C`.
pub fn update_global_threshold(state: &mut ThresholdState, epoch: usize, probe: &EpochProbe) {
    if epoch > 0 {
        let m = state.ema_m;
        state.global_t = m * state.global_t + (1.0 - m) * probe.mean_given_prob();
    }
    state.epoch_index = epoch;
}

/// `E_t(c) = m E_{t-1}(c) + (1-m) mean_i p_i[c]`, averaged over all samples.
pub fn update_class_expectations(state: &mut ThresholdState, epoch: usize, probe: &EpochProbe) {
    if epoch > 0 {
        let m = state.ema_m;
        for (e, p) in state.class_e.iter_mut().zip(probe.mean_class_probs()) {
            *e = m * *e + (1.0 - m) * p;
        }
    }
    state.epoch_index = epoch;
}

/// How the local thresholds are derived from the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `E(c) / max E * T`.
    #[default]
    GlobalAndLocal,
    /// Every class uses `T`.
    GlobalOnly,
    /// `E(c) / max E * 1/C`: the class profile without the adaptive global bar.
    LocalOnly,
}

/// `T~(c) = E(c) / max_c' E(c') * T`.
pub fn local_thresholds(state: &ThresholdState) -> Vec<f64> {
    thresholds_with_rule(state, ThresholdRule::GlobalAndLocal)
}

pub fn thresholds_with_rule(state: &ThresholdState, rule: ThresholdRule) -> Vec<f64> {
    let max = state.class_e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let base = match rule {
        ThresholdRule::GlobalOnly => return vec![state.global_t; state.class_count()],
        ThresholdRule::GlobalAndLocal => state.global_t,
        ThresholdRule::LocalOnly => 1.0 / state.class_count() as f64,
    };
    assert!(max > 0.0, "class expectations must be positive");
    state.class_e.iter().map(|e| e / max * base).collect()
}

/// Disjoint clean/noisy index sets covering `0..N`, both ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Partition {
    pub clean_indices: Vec<usize>,
    pub noisy_indices: Vec<usize>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.clean_indices.len() + self.noisy_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn selected_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for &i in &self.clean_indices {
            mask[i] = true;
        }
        mask
    }

    /// Clean-set size per given label.
    pub fn clean_counts(&self, given_labels: &[usize], class_count: usize) -> Vec<usize> {
        let mut counts = vec![0; class_count];
        for &i in &self.clean_indices {
            counts[given_labels[i]] += 1;
        }
        counts
    }
}

/// Clean iff `p_i[y_i] > local_t[y_i]` (strict).
pub fn partition(probe: &EpochProbe, given_labels: &[usize], local_t: &[f64]) -> Partition {
    assert_eq!(probe.len(), given_labels.len());
    let mut part = Partition::default();
    for (i, (&p, &y)) in probe.given_label_prob.iter().zip(given_labels).enumerate() {
        if p > local_t[y] {
            part.clean_indices.push(i);
        } else {
            part.noisy_indices.push(i);
        }
    }
    part
}
