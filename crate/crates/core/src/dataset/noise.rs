use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
    Openset,
}

/// Label corruption recipe.
///
/// For `symmetric` and `asymmetric`, `rate` is the flip probability of every
/// in-distribution sample. For `openset`, `rate` is the number of
/// out-of-distribution rows relative to the in-distribution row count, split
/// evenly over `ood_class_count` extra blobs; `inner` then corrupts the
/// in-distribution rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    #[serde(default)]
    pub ood_class_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<Box<NoiseSpec>>,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64) -> Self {
        Self {
            kind: NoiseKind::Symmetric,
            rate,
            ood_class_count: 0,
            inner: None,
        }
    }

    pub fn asymmetric(rate: f64) -> Self {
        Self {
            kind: NoiseKind::Asymmetric,
            rate,
            ood_class_count: 0,
            inner: None,
        }
    }

    pub fn openset(rate: f64, ood_class_count: usize, inner: NoiseSpec) -> Self {
        Self {
            kind: NoiseKind::Openset,
            rate,
            ood_class_count,
            inner: Some(Box::new(inner)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate < 1.0) {
            return Err(Error::config(
                "noise_rate",
                format!("must lie strictly inside (0, 1), got {}", self.rate),
            ));
        }
        match self.kind {
            NoiseKind::Openset => {
                if self.ood_class_count == 0 {
                    return Err(Error::config("ood_class_count", "openset noise needs at least one OOD class"));
                }
                match &self.inner {
                    None => Err(Error::config(
                        "inner_noise",
                        "openset noise requires a nested in-distribution spec",
                    )),
                    Some(inner) if inner.kind == NoiseKind::Openset => Err(Error::config(
                        "inner_noise",
                        "nested spec must be symmetric or asymmetric",
                    )),
                    Some(inner) => inner.validate(),
                }
            }
            _ => {
                if self.ood_class_count != 0 {
                    return Err(Error::config("ood_class_count", "only valid for openset noise"));
                }
                if self.inner.is_some() {
                    return Err(Error::config("inner_noise", "only valid for openset noise"));
                }
                Ok(())
            }
        }
    }
}

/// Corrupts the given labels of a freshly generated dataset. Features of
/// existing rows are never touched; openset noise appends OOD rows.
pub fn inject_noise(ds: &LabeledDataset, spec: &NoiseSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    if ds.given_labels != ds.truth.true_labels {
        return Err(Error::config("noise", "dataset already carries corrupted labels"));
    }
    match spec.kind {
        NoiseKind::Symmetric | NoiseKind::Asymmetric => {
            let mut rng = rng::stream(seed, Purpose::Noise, 0);
            let mut given = ds.given_labels.clone();
            flip_labels(&mut given, &ds.truth.is_ood, spec, ds.class_count, &mut rng);
            LabeledDataset::new(
                ds.features.clone(),
                ds.truth.true_labels.clone(),
                given,
                ds.truth.is_ood.clone(),
                ds.class_count,
            )
        }
        NoiseKind::Openset => {
            let inner = spec.inner.as_deref().expect("validated");
            let mut rng = rng::stream(seed, Purpose::Noise, 0);
            let mut given = ds.given_labels.clone();
            flip_labels(&mut given, &ds.truth.is_ood, inner, ds.class_count, &mut rng);
            let mut ood_rng = rng::stream(seed, Purpose::Noise, 1);
            append_ood(ds, given, spec, &mut ood_rng)
        }
    }
}

fn flip_labels<R: Rng>(given: &mut [usize], is_ood: &[bool], spec: &NoiseSpec, classes: usize, rng: &mut R) {
    for (label, &ood) in given.iter_mut().zip(is_ood) {
        // Draw for every row so the flip set only depends on the seed.
        let u: f64 = rng.random();
        let other = rng.random_range(0..classes - 1);
        if ood || u >= spec.rate {
            continue;
        }
        *label = match spec.kind {
            NoiseKind::Symmetric => {
                if other >= *label {
                    other + 1
                } else {
                    other
                }
            }
            NoiseKind::Asymmetric => (*label + 1) % classes,
            NoiseKind::Openset => unreachable!("nested spec validated"),
        };
    }
}

fn append_ood<R: Rng>(ds: &LabeledDataset, given: Vec<usize>, spec: &NoiseSpec, rng: &mut R) -> Result<LabeledDataset> {
    let classes = ds.class_count;
    let d = ds.dim();
    let n_in = ds.len();
    let k = spec.ood_class_count;

    // Empirical geometry of the in-distribution classes.
    let mut means = Array2::<f64>::zeros((classes, d));
    let mut counts = vec![0usize; classes];
    for (row, &y) in ds.features.outer_iter().zip(&ds.truth.true_labels) {
        if y < classes {
            let mut m = means.row_mut(y);
            m += &row;
            counts[y] += 1;
        }
    }
    for (mut m, &n) in means.outer_iter_mut().zip(&counts) {
        if n > 0 {
            m /= n as f64;
        }
    }
    let present: Vec<usize> = (0..classes).filter(|&c| counts[c] > 0).collect();
    let mut centroid = Array1::<f64>::zeros(d);
    for &c in &present {
        centroid += &means.row(c);
    }
    centroid /= present.len().max(1) as f64;
    let hull = present
        .iter()
        .map(|&c| (&means.row(c) - &centroid).mapv(|v| v * v).sum().sqrt())
        .fold(0.0_f64, f64::max);
    let mut sq = 0.0;
    for (row, &y) in ds.features.outer_iter().zip(&ds.truth.true_labels) {
        if y < classes {
            sq += (&row - &means.row(y)).mapv(|v| v * v).sum();
        }
    }
    let spread = if n_in > 0 { (sq / (n_in * d) as f64).sqrt().max(1e-3) } else { 1.0 };
    let distance = hull + 4.0 * spread;

    let total_ood = ((spec.rate * n_in as f64).round() as usize).max(k);
    let normal = Normal::new(0.0, spread).expect("finite positive spread");

    let mut features = Array2::<f64>::zeros((n_in + total_ood, d));
    features.slice_mut(ndarray::s![..n_in, ..]).assign(&ds.features);
    let mut true_labels = ds.truth.true_labels.clone();
    let mut is_ood = ds.truth.is_ood.clone();
    let mut given = given;
    let mut row = n_in;
    for j in 0..k {
        let count = total_ood / k + usize::from(j < total_ood % k);
        let mut mean = centroid.clone();
        if d == 1 {
            let side = if j % 2 == 0 { 1.0 } else { -1.0 };
            mean[0] += side * (distance + 2.0 * spread * (j / 2) as f64);
        } else {
            let angle = std::f64::consts::TAU * (j as f64 + 0.5) / k as f64 + std::f64::consts::PI / classes as f64;
            mean[0] += distance * angle.cos();
            mean[1] += distance * angle.sin();
        }
        for _ in 0..count {
            for c in 0..d {
                features[[row, c]] = mean[c] + normal.sample(rng);
            }
            true_labels.push(classes);
            is_ood.push(true);
            given.push(rng.random_range(0..classes));
            row += 1;
        }
    }
    LabeledDataset::new(features, true_labels, given, is_ood, classes)
}
