//! Per-epoch records, the run report and the CSV/JSON files written from
//! them.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::SelectionMetrics;
use crate::error::{Error, Result};
use crate::trainer::{LossBreakdown, Phase};

/// Bumped whenever a column or JSON field changes meaning.
pub const SCHEMA_VERSION: u32 = 1;

pub const EPOCHS_HEADER: &str = "epoch,lr,T_global,clean_count,precision,recall,test_acc,loss_clean,loss_noisy,loss_reg";
pub const THRESHOLDS_HEADER: &str = "epoch,class,T_global,T_local,class_expectation,clean_count,precision";
pub const DISTRIBUTIONS_HEADER: &str = "epoch,class,mu,sigma2,noisy_count,mean_weight,min_weight,max_weight";

/// Per-class slice of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecord {
    pub local_t: f64,
    pub class_expectation: f64,
    pub clean_count: usize,
    pub precision: f64,
    pub mu: f64,
    pub sigma2: f64,
    pub noisy_count: usize,
    /// Weight statistics over the noisy samples whose corrected label is
    /// this class; `None` when there are none.
    pub weights: Option<WeightSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl WeightSummary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut n = 0usize;
        let mut sum = 0.0;
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            n += 1;
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        (n > 0).then(|| Self {
            mean: sum / n as f64,
            min,
            max,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub lr: f64,
    pub global_t: f64,
    pub clean_count: usize,
    pub selection: SelectionMetrics,
    pub test_acc: f64,
    pub losses: LossBreakdown,
    pub classes: Vec<ClassRecord>,
}

impl EpochRecord {
    pub fn clean_counts(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.clean_count).collect()
    }

    fn is_finite(&self) -> bool {
        let scalars = [
            self.lr,
            self.global_t,
            self.selection.precision,
            self.selection.recall,
            self.test_acc,
            self.losses.clean,
            self.losses.noisy,
            self.losses.reg,
        ];
        scalars.iter().all(|v| v.is_finite())
            && self.classes.iter().all(|c| {
                [c.local_t, c.class_expectation, c.precision, c.mu, c.sigma2]
                    .iter()
                    .all(|v| v.is_finite())
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub test_acc: f64,
    pub selection: SelectionMetrics,
    /// Largest over smallest per-class clean count in the last epoch;
    /// `None` if some class has no selected sample.
    pub clean_count_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub records: Vec<EpochRecord>,
    pub finals: FinalMetrics,
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn validate(&self) -> Result<()> {
        if self.records.len() != self.config.train.total_epochs {
            return Err(Error::format(
                "report",
                format!("{} records for {} epochs", self.records.len(), self.config.train.total_epochs),
            ));
        }
        if let Some(r) = self.records.iter().find(|r| !r.is_finite()) {
            return Err(Error::format("report", format!("non-finite metric in epoch {}", r.epoch)));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format("report", format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Max over min of the counts; `None` when the smallest is zero.
pub fn count_ratio(counts: &[usize]) -> Option<f64> {
    let max = counts.iter().copied().max()?;
    let min = counts.iter().copied().min()?;
    (min > 0).then(|| max as f64 / min as f64)
}

fn csv_writer(buf: &mut Vec<u8>) -> csv::Writer<&mut Vec<u8>> {
    csv::WriterBuilder::new().has_headers(false).from_writer(buf)
}

fn render<F>(header: &str, fill: F) -> String
where
    F: FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>,
{
    let mut buf = Vec::new();
    writeln!(buf, "{header}").expect("write to Vec");
    {
        let mut w = csv_writer(&mut buf);
        fill(&mut w).expect("write to Vec");
        w.flush().expect("flush to Vec");
    }
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Floats use the shortest round-trip representation, so equal runs give
/// equal bytes.
pub fn epochs_csv(records: &[EpochRecord]) -> String {
    render(EPOCHS_HEADER, |w| {
        for r in records {
            w.write_record(&[
                r.epoch.to_string(),
                r.lr.to_string(),
                r.global_t.to_string(),
                r.clean_count.to_string(),
                r.selection.precision.to_string(),
                r.selection.recall.to_string(),
                r.test_acc.to_string(),
                r.losses.clean.to_string(),
                r.losses.noisy.to_string(),
                r.losses.reg.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn thresholds_csv(records: &[EpochRecord]) -> String {
    render(THRESHOLDS_HEADER, |w| {
        for r in records {
            for (c, k) in r.classes.iter().enumerate() {
                w.write_record(&[
                    r.epoch.to_string(),
                    c.to_string(),
                    r.global_t.to_string(),
                    k.local_t.to_string(),
                    k.class_expectation.to_string(),
                    k.clean_count.to_string(),
                    k.precision.to_string(),
                ])?;
            }
        }
        Ok(())
    })
}

/// Empty weight cells mean no noisy sample was corrected to that class.
pub fn distributions_csv(records: &[EpochRecord]) -> String {
    render(DISTRIBUTIONS_HEADER, |w| {
        for r in records {
            for (c, k) in r.classes.iter().enumerate() {
                let (mean, min, max) = match k.weights {
                    Some(s) => (s.mean.to_string(), s.min.to_string(), s.max.to_string()),
                    None => Default::default(),
                };
                w.write_record(&[
                    r.epoch.to_string(),
                    c.to_string(),
                    k.mu.to_string(),
                    k.sigma2.to_string(),
                    k.noisy_count.to_string(),
                    mean,
                    min,
                    max,
                ])?;
            }
        }
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDelta {
    pub name_a: String,
    pub name_b: String,
    /// Every delta is `a - b`.
    pub test_acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub per_class_precision: Vec<f64>,
    pub clean_count_ratio: Option<f64>,
    pub wall_clock_seconds: f64,
}

/// Differences `a - b` of the final metrics. Refuses reports built on
/// different data.
pub fn compare_runs(a: &RunReport, b: &RunReport) -> Result<RunDelta> {
    if a.config.data_key() != b.config.data_key() {
        return Err(Error::Mismatch(format!(
            "runs `{}` and `{}` differ in dataset spec or seed",
            a.config.name, b.config.name
        )));
    }
    let (fa, fb) = (&a.finals, &b.finals);
    Ok(RunDelta {
        name_a: a.config.name.clone(),
        name_b: b.config.name.clone(),
        test_acc: fa.test_acc - fb.test_acc,
        precision: fa.selection.precision - fb.selection.precision,
        recall: fa.selection.recall - fb.selection.recall,
        per_class_precision: fa
            .selection
            .per_class_precision
            .iter()
            .zip(&fb.selection.per_class_precision)
            .map(|(x, y)| x - y)
            .collect(),
        clean_count_ratio: fa.clean_count_ratio.zip(fb.clean_count_ratio).map(|(x, y)| x - y),
        wall_clock_seconds: a.wall_clock_seconds - b.wall_clock_seconds,
    })
}
