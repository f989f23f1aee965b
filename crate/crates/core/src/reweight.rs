//! Label correction with the mean teacher and truncated-normal re-weighting.
//!
//! The teacher's argmax replaces the given label; the student's probability at
//! that corrected label (the correction confidence) is mapped to a weight that
//! plateaus at `lambda_max` above the class mean and decays as a Gaussian tail
//! below it. Per-class means and variances are tracked by EMA over the noisy
//! subset.

use serde::{Deserialize, Serialize};

use crate::dataset::TrainingSet;
use crate::model::{argmax_rows, ModelParams, Teacher};
use crate::selection::{predict_probs, EpochProbe, Partition};

/// Lower bound on the variance used inside the weight function.
pub const SIGMA2_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionState {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub ema_m: f64,
    pub lambda_max: f64,
    pub epoch_index: usize,
}

impl CorrectionState {
    /// Epoch-0 state: `mu = 1/C`, `sigma2 = 1`.
    pub fn new(class_count: usize, ema_m: f64, lambda_max: f64) -> Self {
        Self {
            mu: vec![1.0 / class_count as f64; class_count],
            sigma2: vec![1.0; class_count],
            ema_m,
            lambda_max,
            epoch_index: 0,
        }
    }

    pub fn class_count(&self) -> usize {
        self.mu.len()
    }
}

/// Per-class confidence statistics of one epoch's noisy subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub mu_hat: Vec<f64>,
    pub sigma2_hat: Vec<f64>,
    /// Zero marks a class without evidence this epoch; its stats are unused.
    pub counts: Vec<usize>,
}

/// Whether statistics are fitted per corrected class or pooled over all
/// noisy samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    #[default]
    PerClass,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanOptions {
    pub stats: StatsMode,
    /// Every weight is `lambda_max`.
    pub uniform_weights: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionPlan {
    pub corrected_labels: Vec<usize>,
    pub correction_conf: Vec<f64>,
    pub weights: Vec<f64>,
    pub stats: BatchStats,
}

/// Teacher argmax on un-augmented inputs, for every sample.
pub fn correct_labels(teacher: &Teacher, train: &TrainingSet<'_>) -> Vec<usize> {
    argmax_rows(predict_probs(teacher.params(), train).view())
}

/// Class-conditional mean and population variance of `conf` over the noisy
/// samples, grouped by corrected label.
pub fn batch_stats(conf: &[f64], corrected: &[usize], noisy_indices: &[usize], class_count: usize) -> BatchStats {
    let mut counts = vec![0usize; class_count];
    let mut sums = vec![0.0; class_count];
    for &i in noisy_indices {
        counts[corrected[i]] += 1;
        sums[corrected[i]] += conf[i];
    }
    let mu_hat: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    let mut sq = vec![0.0; class_count];
    for &i in noisy_indices {
        let c = corrected[i];
        let d = conf[i] - mu_hat[c];
        sq[c] += d * d;
    }
    let sigma2_hat = sq
        .iter()
        .zip(&counts)
        .map(|(s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
        .collect();
    BatchStats {
        mu_hat,
        sigma2_hat,
        counts,
    }
}

/// One set of statistics over all noisy samples, copied to every class.
pub fn pooled_stats(conf: &[f64], noisy_indices: &[usize], class_count: usize) -> BatchStats {
    let zeros = vec![0usize; noisy_indices.len()];
    let idx: Vec<usize> = (0..noisy_indices.len()).collect();
    let sub: Vec<f64> = noisy_indices.iter().map(|&i| conf[i]).collect();
    let one = batch_stats(&sub, &zeros, &idx, 1);
    BatchStats {
        mu_hat: vec![one.mu_hat[0]; class_count],
        sigma2_hat: vec![one.sigma2_hat[0]; class_count],
        counts: vec![one.counts[0]; class_count],
    }
}

/// EMA update for classes with evidence; epoch 0 keeps the initial values.
pub fn update_distribution(state: &mut CorrectionState, epoch: usize, stats: &BatchStats) {
    if epoch > 0 {
        let m = state.ema_m;
        for c in 0..state.class_count() {
            if stats.counts[c] > 0 {
                state.mu[c] = m * state.mu[c] + (1.0 - m) * stats.mu_hat[c];
                state.sigma2[c] = m * state.sigma2[c] + (1.0 - m) * stats.sigma2_hat[c];
            }
        }
    }
    state.epoch_index = epoch;
}

/// `lambda_max * exp(-(conf - mu)^2 / (2 sigma^2))` below the class mean,
/// `lambda_max` at or above it.
pub fn sample_weight(conf: f64, class: usize, state: &CorrectionState) -> f64 {
    truncated_normal_weight(conf, state.mu[class], state.sigma2[class], state.lambda_max)
}

pub fn truncated_normal_weight(conf: f64, mu: f64, sigma2: f64, lambda_max: f64) -> f64 {
    if conf < mu {
        let s2 = sigma2.max(SIGMA2_FLOOR);
        let d = conf - mu;
        let w = lambda_max * (d * d / (-2.0 * s2)).exp();
        // Below the mean the weight stays strictly inside (0, lambda_max),
        // even where exp() rounds to 1 or underflows to 0.
        w.clamp(f64::MIN_POSITIVE, lambda_max.next_down())
    } else {
        lambda_max
    }
}

/// Builds the epoch's correction plan and advances `state`.
///
/// `probe` is the student's un-augmented probe of the same epoch; confidences
/// are read from it at the teacher-corrected labels. Statistics come from the
/// noisy subset only; weights are evaluated for every sample after the EMA
/// update.
pub fn build_plan(
    probe: &EpochProbe,
    teacher: &Teacher,
    train: &TrainingSet<'_>,
    partition: &Partition,
    state: &mut CorrectionState,
    epoch: usize,
    options: PlanOptions,
) -> CorrectionPlan {
    let corrected_labels = correct_labels(teacher, train);
    plan_from_labels(probe, corrected_labels, partition, state, epoch, options)
}

pub(crate) fn plan_from_labels(
    probe: &EpochProbe,
    corrected_labels: Vec<usize>,
    partition: &Partition,
    state: &mut CorrectionState,
    epoch: usize,
    options: PlanOptions,
) -> CorrectionPlan {
    let classes = state.class_count();
    let correction_conf: Vec<f64> = corrected_labels
        .iter()
        .enumerate()
        .map(|(i, &c)| probe.probs[[i, c]])
        .collect();
    let stats = match options.stats {
        StatsMode::PerClass => batch_stats(&correction_conf, &corrected_labels, &partition.noisy_indices, classes),
        StatsMode::Pooled => pooled_stats(&correction_conf, &partition.noisy_indices, classes),
    };
    update_distribution(state, epoch, &stats);
    let weights = if options.uniform_weights {
        vec![state.lambda_max; corrected_labels.len()]
    } else {
        correction_conf
            .iter()
            .zip(&corrected_labels)
            .map(|(&p, &c)| sample_weight(p, c, state))
            .collect()
    };
    CorrectionPlan {
        corrected_labels,
        correction_conf,
        weights,
        stats,
    }
}

/// Convenience for callers holding a student rather than a probe.
pub fn build_plan_from_student(
    student: &ModelParams,
    teacher: &Teacher,
    train: &TrainingSet<'_>,
    partition: &Partition,
    state: &mut CorrectionState,
    epoch: usize,
    options: PlanOptions,
) -> CorrectionPlan {
    let probe = crate::selection::probe_epoch(student, train);
    build_plan(&probe, teacher, train, partition, state, epoch, options)
}
