//! Metrics against ground truth. This is the only place outside the dataset
//! module that reads true labels or the clean mask.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::model::{argmax_rows, ModelParams};
use crate::selection::{predict_probs, Partition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub precision: f64,
    pub recall: f64,
    /// Precision restricted to selected samples with given label `c`.
    pub per_class_precision: Vec<f64>,
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

/// Precision and recall of the selected set against the true clean mask.
/// An empty selection has precision 1 and recall 0 by convention; so does an
/// empty class.
pub fn selection_metrics(partition: &Partition, ds: &LabeledDataset) -> SelectionMetrics {
    let clean = ds.clean_mask();
    let c = ds.class_count();
    let given = ds.given_labels();
    let mut hits = vec![0usize; c];
    let mut picked = vec![0usize; c];
    for &i in &partition.clean_indices {
        picked[given[i]] += 1;
        hits[given[i]] += usize::from(clean[i]);
    }
    let tp: usize = hits.iter().sum();
    let truly_clean = clean.iter().filter(|&&m| m).count();
    SelectionMetrics {
        precision: ratio(tp, partition.clean_indices.len(), 1.0),
        recall: ratio(tp, truly_clean, 0.0),
        per_class_precision: hits.iter().zip(&picked).map(|(&h, &p)| ratio(h, p, 1.0)).collect(),
    }
}

/// Fraction of rows whose predicted class equals the true label.
pub fn accuracy(model: &ModelParams, ds: &LabeledDataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let pred = argmax_rows(predict_probs(model, &ds.training_set()).view());
    let right = pred.iter().zip(ds.truth().true_labels()).filter(|(p, t)| p == t).count();
    right as f64 / ds.len() as f64
}
