//! Synthetic datasets with controlled label noise.
//!
//! A [`LabeledDataset`] keeps its ground truth (true labels and the
//! out-of-distribution flags) behind [`GroundTruth`]. Training code only ever
//! sees a [`TrainingSet`], which exposes features and given labels and
//! nothing else.

mod augment;
pub mod io;
mod noise;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

pub use augment::{augment, augment_rows, NoiseSource, Strength};
pub use noise::{inject_noise, NoiseKind, NoiseSpec};

/// Ground-truth labels of a dataset. Only the metrics code reads these.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    true_labels: Vec<usize>,
    is_ood: Vec<bool>,
}

impl GroundTruth {
    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn is_ood(&self) -> &[bool] {
        &self.is_ood
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    given_labels: Vec<usize>,
    truth: GroundTruth,
    class_count: usize,
}

/// Read-only view handed to training: features and given labels only.
#[derive(Debug, Clone, Copy)]
pub struct TrainingSet<'a> {
    pub features: ArrayView2<'a, f64>,
    pub given_labels: &'a [usize],
    pub class_count: usize,
}

impl TrainingSet<'_> {
    pub fn len(&self) -> usize {
        self.given_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.given_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

impl LabeledDataset {
    /// Builds a dataset after checking every invariant. OOD rows carry the
    /// sentinel true label `class_count`.
    pub fn new(
        features: Array2<f64>,
        true_labels: Vec<usize>,
        given_labels: Vec<usize>,
        is_ood: Vec<bool>,
        class_count: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if class_count < 2 {
            return Err(Error::config("class_count", "at least two classes are required"));
        }
        if true_labels.len() != n || given_labels.len() != n || is_ood.len() != n {
            return Err(Error::format(
                "dataset",
                format!(
                    "length mismatch: {n} feature rows, {} true labels, {} given labels, {} ood flags",
                    true_labels.len(),
                    given_labels.len(),
                    is_ood.len()
                ),
            ));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("dataset", "features contain non-finite values"));
        }
        for i in 0..n {
            if given_labels[i] >= class_count {
                return Err(Error::format(
                    "dataset",
                    format!("row {i}: given label {} outside [0, {class_count})", given_labels[i]),
                ));
            }
            let expected_ood = true_labels[i] == class_count;
            if is_ood[i] != expected_ood || true_labels[i] > class_count {
                return Err(Error::format(
                    "dataset",
                    format!(
                        "row {i}: true label {} inconsistent with ood flag {}",
                        true_labels[i], is_ood[i]
                    ),
                ));
            }
        }
        Ok(Self {
            features,
            given_labels,
            truth: GroundTruth {
                true_labels,
                is_ood,
            },
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.given_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.given_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn given_labels(&self) -> &[usize] {
        &self.given_labels
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn training_set(&self) -> TrainingSet<'_> {
        TrainingSet {
            features: self.features.view(),
            given_labels: &self.given_labels,
            class_count: self.class_count,
        }
    }

    /// `given == true` and not out-of-distribution.
    pub fn clean_mask(&self) -> Vec<bool> {
        self.given_labels
            .iter()
            .zip(&self.truth.true_labels)
            .zip(&self.truth.is_ood)
            .map(|((g, t), ood)| g == t && !ood)
            .collect()
    }

    /// Per-dimension standard deviation of the features, floored so that it
    /// stays strictly positive.
    pub fn feature_std(&self) -> Array1<f64> {
        if self.is_empty() {
            return Array1::ones(self.dim());
        }
        self.features
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-8 { s } else { 1e-8 })
    }

    /// Fraction of in-distribution rows whose given label differs from the
    /// true label.
    pub fn corruption_rate(&self) -> f64 {
        let (flipped, total) = self
            .given_labels
            .iter()
            .zip(&self.truth.true_labels)
            .zip(&self.truth.is_ood)
            .filter(|(_, ood)| !**ood)
            .fold((0usize, 0usize), |(f, t), ((g, y), _)| (f + usize::from(g != y), t + 1));
        if total == 0 {
            0.0
        } else {
            flipped as f64 / total as f64
        }
    }
}

/// Gaussian blob layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub class_count: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Per-class standard deviation.
    pub spread: Vec<f64>,
    /// Distance of every class mean from the origin.
    pub radius: f64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::config("class_count", "must be at least 2"));
        }
        if self.per_class < 1 {
            return Err(Error::config("per_class", "must be at least 1"));
        }
        if self.dim < 1 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if self.spread.len() != self.class_count {
            return Err(Error::config(
                "spread",
                format!("expected {} values, got {}", self.class_count, self.spread.len()),
            ));
        }
        if let Some(s) = self.spread.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::config("spread", format!("values must be > 0, got {s}")));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(Error::config("radius", "must be > 0"));
        }
        Ok(())
    }

    /// Mean of class `c`: evenly spaced on a circle in the first two
    /// coordinates, or evenly spaced on a segment when `dim == 1`.
    pub fn class_mean(&self, c: usize) -> Array1<f64> {
        let mut mean = Array1::zeros(self.dim);
        if self.dim == 1 {
            mean[0] = self.radius * (2.0 * c as f64 / (self.class_count - 1) as f64 - 1.0);
        } else {
            let angle = std::f64::consts::TAU * c as f64 / self.class_count as f64;
            mean[0] = self.radius * angle.cos();
            mean[1] = self.radius * angle.sin();
        }
        mean
    }
}

/// Samples `per_class` points from each class blob. Rows are class-major and
/// `given_labels == true_labels`.
pub fn generate_blobs(spec: &BlobSpec, seed: u64) -> Result<LabeledDataset> {
    sample_blobs(spec, &mut rng::stream(seed, Purpose::Blobs, 0))
}

/// [`generate_blobs`] drawing from a caller-supplied generator, e.g. an
/// independent stream for a held-out test set with the same class means.
pub fn sample_blobs<R: rand::Rng + ?Sized>(spec: &BlobSpec, rng: &mut R) -> Result<LabeledDataset> {
    spec.validate()?;
    let n = spec.class_count * spec.per_class;
    let mut features = Array2::zeros((n, spec.dim));
    let mut labels = Vec::with_capacity(n);
    for c in 0..spec.class_count {
        let mean = spec.class_mean(c);
        let normal = Normal::new(0.0, spec.spread[c]).expect("spread validated");
        for k in 0..spec.per_class {
            let row = c * spec.per_class + k;
            for j in 0..spec.dim {
                features[[row, j]] = mean[j] + normal.sample(rng);
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(
        features,
        labels.clone(),
        labels,
        vec![false; n],
        spec.class_count,
    )
}
