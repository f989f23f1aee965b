//! Epoch orchestration.
//!
//! Every epoch starts with a probe of the student on the raw training inputs,
//! which drives the threshold EMAs, the clean/noisy partition and the
//! correction plan. Warm-up epochs (and the standard baseline) then train on
//! all samples with their given labels; later epochs minimise
//! `L_clean + L_noisy + L_reg` over mini-batches drawn from the whole shuffled
//! training set. The teacher follows the student after every step.
//!
//! Nothing in here can see ground-truth labels: the trainer only receives a
//! [`TrainingSet`].

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{augment_rows, NoiseSource, Strength, TrainingSet};
use crate::error::{Error, Result};
use crate::model::{cosine_lr, sgd_step, ModelParams, OptimizerState, Teacher};
use crate::reweight::{build_plan, CorrectionPlan, CorrectionState, PlanOptions, StatsMode};
use crate::rng::{self, Purpose};
use crate::selection::{partition, probe_epoch, thresholds_with_rule, Partition, ThresholdRule, ThresholdState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Cross-entropy on every sample with its given label, for all epochs.
    Standard,
    /// Selection, correction and re-weighting after the warm-up.
    #[default]
    Selective,
}

/// Components that can be switched off. All `false` is the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Every class uses the global threshold.
    pub no_local_threshold: bool,
    /// Class profile normalised against a fixed `1/C` instead of `T_t`.
    pub no_global_threshold: bool,
    /// Threshold state follows the current epoch only (`m = 0`).
    pub no_threshold_ema: bool,
    /// Every weight equals `lambda_max`.
    pub no_reweight: bool,
    /// Distribution state follows the current epoch only (`m = 0`).
    pub no_distribution_ema: bool,
    /// One pooled mean/variance for all classes.
    pub no_class_balanced_stats: bool,
    /// Drop the noisy-subset loss: noisy samples are discarded.
    pub no_noisy_loss: bool,
    /// Drop the consistency term on clean samples.
    pub no_consistency_reg: bool,
}

impl Ablation {
    pub fn threshold_rule(&self) -> ThresholdRule {
        match (self.no_local_threshold, self.no_global_threshold) {
            (true, _) => ThresholdRule::GlobalOnly,
            (false, true) => ThresholdRule::LocalOnly,
            (false, false) => ThresholdRule::GlobalAndLocal,
        }
    }

    pub fn plan_options(&self) -> PlanOptions {
        PlanOptions {
            stats: if self.no_class_balanced_stats {
                StatsMode::Pooled
            } else {
                StatsMode::PerClass
            },
            uniform_weights: self.no_reweight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub weight_decay: f64,
    pub ema_m: f64,
    pub teacher_alpha: f64,
    pub lambda_max: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub method: Method,
    pub ablation: Ablation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_epochs: 60,
            warmup_epochs: 10,
            batch_size: 128,
            base_lr: 0.05,
            weight_decay: 5e-4,
            ema_m: 0.99,
            teacher_alpha: 0.95,
            lambda_max: 1.0,
            hidden: vec![64, 64],
            seed: 0,
            method: Method::Selective,
            ablation: Ablation::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(Error::config("total_epochs", "must be at least 1"));
        }
        if self.warmup_epochs >= self.total_epochs {
            return Err(Error::config("warmup_epochs", "must be smaller than total_epochs"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::config("base_lr", "must be positive"));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.ema_m) {
            return Err(Error::config("ema_m", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.teacher_alpha) {
            return Err(Error::config("teacher_alpha", "must lie in [0, 1]"));
        }
        if !(self.lambda_max.is_finite() && self.lambda_max > 0.0) {
            return Err(Error::config("lambda_max", "must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn dims(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.hidden);
        dims.push(classes);
        dims
    }
}

/// Per-term losses, averaged over the batches of an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub clean: f64,
    pub noisy: f64,
    pub reg: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.clean + self.noisy + self.reg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Standard,
    Selective,
}

/// What one epoch did, without any ground-truth information.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub global_t: f64,
    pub class_e: Vec<f64>,
    pub local_t: Vec<f64>,
    pub partition: Partition,
    pub correction: CorrectionState,
    pub plan: CorrectionPlan,
    pub losses: LossBreakdown,
}

/// Inputs of one composite-loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchViews {
    /// Weak views of the clean rows, with their given labels.
    pub clean_weak: Array2<f64>,
    pub clean_given: Vec<usize>,
    /// Strong views of the clean rows, with corrected labels and weights.
    pub clean_strong: Array2<f64>,
    pub clean_corrected: Vec<usize>,
    pub clean_weights: Vec<f64>,
    /// Strong views of the noisy rows, with corrected labels and weights.
    pub noisy_strong: Array2<f64>,
    pub noisy_corrected: Vec<usize>,
    pub noisy_weights: Vec<f64>,
}

/// Unweighted cross-entropy of the clean rows' weak views at their given labels.
pub fn loss_clean(student: &ModelParams, views: &BatchViews) -> f64 {
    let ones = vec![1.0; views.clean_given.len()];
    kernel_loss(student, &views.clean_weak, &views.clean_given, &ones)
}

/// Weighted cross-entropy of the noisy rows' strong views at corrected labels.
pub fn loss_noisy(student: &ModelParams, views: &BatchViews) -> f64 {
    kernel_loss(student, &views.noisy_strong, &views.noisy_corrected, &views.noisy_weights)
}

/// Weighted cross-entropy of the clean rows' strong views at corrected labels.
pub fn loss_reg(student: &ModelParams, views: &BatchViews) -> f64 {
    kernel_loss(student, &views.clean_strong, &views.clean_corrected, &views.clean_weights)
}

fn kernel_loss(student: &ModelParams, x: &Array2<f64>, targets: &[usize], weights: &[f64]) -> f64 {
    let mut scratch = student.zeros_like();
    student.accumulate_weighted_ce(x.view(), targets, weights, x.nrows() as f64, &mut scratch)
}

/// `L = L_clean + L_noisy + L_reg` and its gradient (plus weight decay).
/// Each term is a mean over its own rows; an empty term contributes 0.
pub fn composite_loss_and_grads(student: &ModelParams, views: &BatchViews, weight_decay: f64) -> (LossBreakdown, ModelParams) {
    let mut grads = student.zeros_like();
    let ones = vec![1.0; views.clean_given.len()];
    let clean = student.accumulate_weighted_ce(
        views.clean_weak.view(),
        &views.clean_given,
        &ones,
        views.clean_weak.nrows() as f64,
        &mut grads,
    );
    let noisy = student.accumulate_weighted_ce(
        views.noisy_strong.view(),
        &views.noisy_corrected,
        &views.noisy_weights,
        views.noisy_strong.nrows() as f64,
        &mut grads,
    );
    let reg = student.accumulate_weighted_ce(
        views.clean_strong.view(),
        &views.clean_corrected,
        &views.clean_weights,
        views.clean_strong.nrows() as f64,
        &mut grads,
    );
    grads.add_weight_decay(student, weight_decay);
    (LossBreakdown { clean, noisy, reg }, grads)
}

/// Owns the student, teacher, optimizer and both EMA states of one run.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    config: TrainConfig,
    train: TrainingSet<'a>,
    aug_stats: Array1<f64>,
    student: ModelParams,
    teacher: Teacher,
    optimizer: OptimizerState,
    thresholds: ThresholdState,
    correction: CorrectionState,
    next_epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, train: TrainingSet<'a>) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::config("dataset", "training set is empty"));
        }
        let student = ModelParams::init(&config.dims(train.dim(), train.class_count), config.seed);
        let teacher = Teacher::from_student(&student);
        let optimizer = OptimizerState::new(&student, config.base_lr, config.weight_decay);
        let thresholds = ThresholdState::new(train.class_count, threshold_m(&config));
        let correction = CorrectionState::new(train.class_count, distribution_m(&config), config.lambda_max);
        Ok(Self {
            aug_stats: feature_std(&train),
            config,
            train,
            student,
            teacher,
            optimizer,
            thresholds,
            correction,
            next_epoch: 0,
        })
    }

    /// Rebuilds a trainer from saved parts, continuing at `next_epoch`.
    #[allow(clippy::too_many_arguments)]
    pub fn resume(
        config: TrainConfig,
        train: TrainingSet<'a>,
        student: ModelParams,
        teacher: Teacher,
        optimizer: OptimizerState,
        thresholds: ThresholdState,
        correction: CorrectionState,
        next_epoch: usize,
    ) -> Result<Self> {
        let mut t = Self::new(config, train)?;
        if !t.student.same_shape(&student) || !student.same_shape(teacher.params()) || !student.same_shape(&optimizer.velocity) {
            return Err(Error::config("resume", "checkpoint shapes do not match the configured network"));
        }
        if thresholds.class_count() != train.class_count || correction.class_count() != train.class_count {
            return Err(Error::config("resume", "checkpoint class count does not match the dataset"));
        }
        if next_epoch > t.config.total_epochs {
            return Err(Error::config("resume", "checkpoint epoch beyond total_epochs"));
        }
        t.student = student;
        t.teacher = teacher;
        t.optimizer = optimizer;
        t.thresholds = thresholds;
        t.correction = correction;
        t.next_epoch = next_epoch;
        Ok(t)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn student(&self) -> &ModelParams {
        &self.student
    }

    pub fn teacher(&self) -> &Teacher {
        &self.teacher
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn thresholds(&self) -> &ThresholdState {
        &self.thresholds
    }

    pub fn correction(&self) -> &CorrectionState {
        &self.correction
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn is_finished(&self) -> bool {
        self.next_epoch >= self.config.total_epochs
    }

    pub fn run_epoch(&mut self) -> Result<EpochSummary> {
        assert!(!self.is_finished(), "all epochs already ran");
        let epoch = self.next_epoch;
        let lr = cosine_lr(epoch, self.config.total_epochs, self.config.base_lr);
        let train = self.train;

        let probe = probe_epoch(&self.student, &train);
        self.thresholds.advance(epoch, &probe);
        let local_t = thresholds_with_rule(&self.thresholds, self.config.ablation.threshold_rule());
        let part = partition(&probe, train.given_labels, &local_t);
        let plan = build_plan(
            &probe,
            &self.teacher,
            &train,
            &part,
            &mut self.correction,
            epoch,
            self.config.ablation.plan_options(),
        );

        let (phase, losses) = match self.config.method {
            Method::Standard => (Phase::Standard, self.warmup_epoch(epoch, lr)?),
            Method::Selective if epoch < self.config.warmup_epochs => (Phase::Warmup, self.warmup_epoch(epoch, lr)?),
            Method::Selective => (Phase::Selective, self.selective_epoch(epoch, lr, &part, &plan)?),
        };
        self.next_epoch += 1;
        Ok(EpochSummary {
            epoch,
            phase,
            lr,
            global_t: self.thresholds.global_t,
            class_e: self.thresholds.class_e.clone(),
            local_t,
            partition: part,
            correction: self.correction.clone(),
            plan,
            losses,
        })
    }

    fn batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng::stream(self.config.seed, Purpose::Shuffle, epoch as u64));
        order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Cross-entropy on weak views of every sample with its given label.
    fn warmup_epoch(&mut self, epoch: usize, lr: f64) -> Result<LossBreakdown> {
        let mut aug = rng::stream(self.config.seed, Purpose::Augment, epoch as u64);
        let mut total = LossBreakdown::default();
        let batches = self.batches(epoch);
        for (b, rows) in batches.iter().enumerate() {
            let views = BatchViews {
                clean_weak: self.augment(rows, Strength::Weak, &mut aug),
                clean_given: rows.iter().map(|&i| self.train.given_labels[i]).collect(),
                ..BatchViews::empty(self.train.dim())
            };
            let losses = self.step(epoch, b, &views, lr)?;
            total.clean += losses.clean;
        }
        total.clean /= batches.len() as f64;
        Ok(total)
    }

    fn selective_epoch(&mut self, epoch: usize, lr: f64, part: &Partition, plan: &CorrectionPlan) -> Result<LossBreakdown> {
        let mut aug = rng::stream(self.config.seed, Purpose::Augment, epoch as u64);
        let is_clean = part.selected_mask();
        let ablation = self.config.ablation;
        let dim = self.train.dim();
        let mut total = LossBreakdown::default();
        let batches = self.batches(epoch);
        for (b, rows) in batches.iter().enumerate() {
            let (clean, noisy): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| is_clean[i]);
            let mut views = BatchViews::empty(dim);
            views.clean_weak = self.augment(&clean, Strength::Weak, &mut aug);
            views.clean_given = clean.iter().map(|&i| self.train.given_labels[i]).collect();
            if !ablation.no_consistency_reg {
                views.clean_strong = self.augment(&clean, Strength::Strong, &mut aug);
                views.clean_corrected = clean.iter().map(|&i| plan.corrected_labels[i]).collect();
                views.clean_weights = clean.iter().map(|&i| plan.weights[i]).collect();
            }
            if !ablation.no_noisy_loss {
                views.noisy_strong = self.augment(&noisy, Strength::Strong, &mut aug);
                views.noisy_corrected = noisy.iter().map(|&i| plan.corrected_labels[i]).collect();
                views.noisy_weights = noisy.iter().map(|&i| plan.weights[i]).collect();
            }
            let losses = self.step(epoch, b, &views, lr)?;
            total.clean += losses.clean;
            total.noisy += losses.noisy;
            total.reg += losses.reg;
        }
        let n = batches.len() as f64;
        Ok(LossBreakdown {
            clean: total.clean / n,
            noisy: total.noisy / n,
            reg: total.reg / n,
        })
    }

    fn augment<S: NoiseSource>(&self, rows: &[usize], strength: Strength, src: &mut S) -> Array2<f64> {
        augment_rows(self.train.features, rows, strength, self.aug_stats.view(), src)
    }

    fn step(&mut self, epoch: usize, batch: usize, views: &BatchViews, lr: f64) -> Result<LossBreakdown> {
        let (losses, grads) = composite_loss_and_grads(&self.student, views, self.config.weight_decay);
        if !losses.total().is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch,
                clean: losses.clean,
                noisy: losses.noisy,
                reg: losses.reg,
            });
        }
        sgd_step(&mut self.optimizer, &mut self.student, &grads, lr);
        self.teacher.update(&self.student, self.config.teacher_alpha);
        Ok(losses)
    }
}

impl BatchViews {
    pub fn empty(dim: usize) -> Self {
        Self {
            clean_weak: Array2::zeros((0, dim)),
            clean_given: Vec::new(),
            clean_strong: Array2::zeros((0, dim)),
            clean_corrected: Vec::new(),
            clean_weights: Vec::new(),
            noisy_strong: Array2::zeros((0, dim)),
            noisy_corrected: Vec::new(),
            noisy_weights: Vec::new(),
        }
    }
}

fn threshold_m(config: &TrainConfig) -> f64 {
    if config.ablation.no_threshold_ema {
        0.0
    } else {
        config.ema_m
    }
}

fn distribution_m(config: &TrainConfig) -> f64 {
    if config.ablation.no_distribution_ema {
        0.0
    } else {
        config.ema_m
    }
}

fn feature_std(train: &TrainingSet<'_>) -> Array1<f64> {
    train
        .features
        .std_axis(ndarray::Axis(0), 0.0)
        .mapv(|s| if s > 1e-8 { s } else { 1e-8 })
}
