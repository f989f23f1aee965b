//! Orchestration of one run: data, training loop, per-epoch records, and the
//! on-disk artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::metrics::{accuracy, selection_metrics};
use super::report::{
    count_ratio, distributions_csv, epochs_csv, thresholds_csv, ClassRecord, EpochRecord, FinalMetrics, RunReport,
    WeightSummary, SCHEMA_VERSION,
};
use crate::dataset::{generate_blobs, inject_noise, sample_blobs, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::reweight::CorrectionState;
use crate::rng::{self, Purpose};
use crate::selection::ThresholdState;
use crate::trainer::{EpochSummary, Trainer};

/// Environment variable that overrides the default output root `runs/`.
pub const OUTPUT_ROOT_ENV: &str = "SELCORR_OUTPUT_ROOT";

pub const EPOCHS_FILE: &str = "epochs.csv";
pub const THRESHOLDS_FILE: &str = "thresholds.csv";
pub const DISTRIBUTIONS_FILE: &str = "distributions.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const ERROR_FILE: &str = "error.txt";

/// Noisy training set and clean held-out test set of a config.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn build_datasets(cfg: &RunConfig) -> Result<Datasets> {
    let seed = cfg.seed();
    let clean = generate_blobs(&cfg.blobs, seed)?;
    let train = inject_noise(&clean, &cfg.noise, seed)?;
    let mut test_spec = cfg.blobs.clone();
    test_spec.per_class = cfg.test_per_class;
    let test = sample_blobs(&test_spec, &mut rng::stream(seed, Purpose::TestSet, 0))?;
    Ok(Datasets { train, test })
}

/// Everything besides network weights needed to continue a run. Stored as
/// JSON inside the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SavedState {
    schema_version: u32,
    config: RunConfig,
    thresholds: ThresholdState,
    correction: CorrectionState,
    records: Vec<EpochRecord>,
    elapsed_seconds: f64,
}

/// A run in progress over borrowed data.
pub struct Session<'a> {
    config: RunConfig,
    data: &'a Datasets,
    trainer: Trainer<'a>,
    records: Vec<EpochRecord>,
    elapsed_before: f64,
    started: Instant,
}

impl<'a> Session<'a> {
    pub fn new(config: RunConfig, data: &'a Datasets) -> Result<Self> {
        config.validate()?;
        let trainer = Trainer::new(config.train.clone(), data.train.training_set())?;
        Ok(Self {
            config,
            data,
            trainer,
            records: Vec::new(),
            elapsed_before: 0.0,
            started: Instant::now(),
        })
    }

    /// Continues from a checkpoint written by [`Session::checkpoint`]. The
    /// config must equal the one the checkpoint was made with.
    pub fn resume(config: RunConfig, data: &'a Datasets, ckpt: Checkpoint) -> Result<Self> {
        let saved: SavedState = serde_json::from_slice(&ckpt.extra)
            .map_err(|e| Error::format("checkpoint", format!("bad state section: {e}")))?;
        if saved.schema_version != SCHEMA_VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("state schema {} is not {SCHEMA_VERSION}", saved.schema_version),
            ));
        }
        if saved.config != config {
            return Err(Error::config("resume", "checkpoint was written with a different config"));
        }
        if saved.records.len() != ckpt.next_epoch {
            return Err(Error::format("checkpoint", "record count does not match the saved epoch"));
        }
        let trainer = Trainer::resume(
            config.train.clone(),
            data.train.training_set(),
            ckpt.student,
            ckpt.teacher,
            ckpt.optimizer,
            saved.thresholds,
            saved.correction,
            ckpt.next_epoch,
        )?;
        Ok(Self {
            config,
            data,
            trainer,
            records: saved.records,
            elapsed_before: saved.elapsed_seconds,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn trainer(&self) -> &Trainer<'a> {
        &self.trainer
    }

    pub fn records(&self) -> &[EpochRecord] {
        &self.records
    }

    pub fn is_finished(&self) -> bool {
        self.trainer.is_finished()
    }

    pub fn elapsed_seconds(&self) -> f64 {
        self.elapsed_before + self.started.elapsed().as_secs_f64()
    }

    /// Trains one epoch and records its metrics.
    pub fn step(&mut self) -> Result<&EpochRecord> {
        let summary = self.trainer.run_epoch()?;
        let record = self.record(&summary);
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    fn record(&self, s: &EpochSummary) -> EpochRecord {
        let train = &self.data.train;
        let selection = selection_metrics(&s.partition, train);
        let classes = train.class_count();
        let counts = s.partition.clean_counts(train.given_labels(), classes);
        let mut weights = vec![Vec::new(); classes];
        for &i in &s.partition.noisy_indices {
            weights[s.plan.corrected_labels[i]].push(s.plan.weights[i]);
        }
        let class_records = (0..classes)
            .map(|c| ClassRecord {
                local_t: s.local_t[c],
                class_expectation: s.class_e[c],
                clean_count: counts[c],
                precision: selection.per_class_precision[c],
                mu: s.correction.mu[c],
                sigma2: s.correction.sigma2[c],
                noisy_count: s.plan.stats.counts[c],
                weights: WeightSummary::of(weights[c].iter().copied()),
            })
            .collect();
        EpochRecord {
            epoch: s.epoch,
            phase: s.phase,
            lr: s.lr,
            global_t: s.global_t,
            clean_count: s.partition.clean_indices.len(),
            test_acc: accuracy(self.trainer.student(), &self.data.test),
            selection,
            losses: s.losses,
            classes: class_records,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let saved = SavedState {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            thresholds: self.trainer.thresholds().clone(),
            correction: self.trainer.correction().clone(),
            records: self.records.clone(),
            elapsed_seconds: self.elapsed_seconds(),
        };
        Checkpoint {
            next_epoch: self.trainer.next_epoch(),
            student: self.trainer.student().clone(),
            teacher: self.trainer.teacher().clone(),
            optimizer: self.trainer.optimizer().clone(),
            extra: serde_json::to_vec(&saved).expect("state serializes"),
        }
    }

    /// Report over the epochs run so far.
    pub fn report(&self) -> RunReport {
        let finals = match self.records.last() {
            Some(last) => FinalMetrics {
                test_acc: last.test_acc,
                selection: last.selection.clone(),
                clean_count_ratio: count_ratio(&last.clean_counts()),
            },
            None => FinalMetrics {
                test_acc: accuracy(self.trainer.student(), &self.data.test),
                selection: selection_metrics(&Default::default(), &self.data.train),
                clean_count_ratio: None,
            },
        };
        RunReport {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            records: self.records.clone(),
            finals,
            wall_clock_seconds: self.elapsed_seconds(),
        }
    }
}

/// Runs a config to completion in memory.
pub fn execute(config: &RunConfig) -> Result<RunReport> {
    let data = build_datasets(config)?;
    execute_on(config, &data)
}

/// [`execute`] on prebuilt data, e.g. to share one dataset across ablations.
pub fn execute_on(config: &RunConfig, data: &Datasets) -> Result<RunReport> {
    let mut session = Session::new(config.clone(), data)?;
    while !session.is_finished() {
        session.step()?;
    }
    Ok(session.report())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Root under which the timestamped run directory is created. Falls back
    /// to `$SELCORR_OUTPUT_ROOT`, then `runs`.
    pub out_root: Option<PathBuf>,
    /// Write `checkpoint.bin` every this many epochs (the final one is
    /// always written).
    pub save_every: Option<usize>,
    /// Checkpoint file, or run directory holding one, to continue from.
    /// Output then goes to the checkpoint's directory.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub report: RunReport,
}

pub fn output_root(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from),
    }
}

/// Creates `<root>/<name>-seed<seed>-<UTC timestamp>`, adding a numeric
/// suffix if that already exists.
pub fn create_run_dir(root: &Path, config: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{}-seed{}-{stamp}", config.name, config.seed());
    for k in 0..1000 {
        let name = if k == 0 { base.clone() } else { format!("{base}-{k}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    Err(Error::format("run directory", format!("could not create a fresh directory under {}", root.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_tables(dir: &Path, records: &[EpochRecord]) -> Result<()> {
    write_file(&dir.join(EPOCHS_FILE), epochs_csv(records).as_bytes())?;
    write_file(&dir.join(THRESHOLDS_FILE), thresholds_csv(records).as_bytes())?;
    write_file(&dir.join(DISTRIBUTIONS_FILE), distributions_csv(records).as_bytes())
}

fn save_checkpoint(dir: &Path, session: &Session<'_>) -> Result<()> {
    // Write then rename, so an interrupted save never leaves a torn file.
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    session.checkpoint().write(std::io::BufWriter::new(file))?;
    let dest = dir.join(CHECKPOINT_FILE);
    fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))
}

fn load_checkpoint(path: &Path) -> Result<(PathBuf, Checkpoint)> {
    let file_path = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    let file = fs::File::open(&file_path).map_err(|e| Error::io(&file_path, e))?;
    let ckpt = Checkpoint::read(std::io::BufReader::new(file))?;
    let dir = file_path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok((dir, ckpt))
}

/// Runs a config and writes every artifact into its run directory. On a
/// training failure the tables so far and `error.txt` are still written.
pub fn run_to_dir(config: &RunConfig, options: &RunOptions) -> Result<RunArtifacts> {
    config.validate()?;
    if options.save_every == Some(0) {
        return Err(Error::config("save_every", "must be at least 1"));
    }
    let data = build_datasets(config)?;
    let (dir, mut session) = match &options.resume {
        Some(path) => {
            let (dir, ckpt) = load_checkpoint(path)?;
            (dir, Session::resume(config.clone(), &data, ckpt)?)
        }
        None => {
            let dir = create_run_dir(&output_root(options.out_root.as_deref()), config)?;
            (dir, Session::new(config.clone(), &data)?)
        }
    };

    while !session.is_finished() {
        if let Err(e) = session.step() {
            write_tables(&dir, session.records())?;
            write_file(&dir.join(ERROR_FILE), format!("{e}\n").as_bytes())?;
            return Err(e);
        }
        let done = session.records().len();
        if options.save_every.is_some_and(|k| done % k == 0) && !session.is_finished() {
            save_checkpoint(&dir, &session)?;
        }
    }

    let report = session.report();
    report.validate()?;
    write_tables(&dir, &report.records)?;
    write_file(&dir.join(REPORT_FILE), report.to_json().as_bytes())?;
    save_checkpoint(&dir, &session)?;
    Ok(RunArtifacts { dir, report })
}

/// Loads `report.json` from a run directory or a direct path.
pub fn load_report(path: &Path) -> Result<RunReport> {
    let file = if path.is_dir() { path.join(REPORT_FILE) } else { path.to_path_buf() };
    RunReport::load(&file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::parse_config;

    fn tiny() -> RunConfig {
        parse_config(
            r#"
            name = "tiny"
            class_count = 2
            per_class = 100
            test_per_class = 50
            noise_rate = 0.2
            total_epochs = 5
            warmup_epochs = 2
            batch_size = 32
            hidden = [16]
            seed = 5
            "#,
        )
        .unwrap()
    }

    #[test]
    fn datasets_are_deterministic_and_test_is_clean() {
        let cfg = tiny();
        let a = build_datasets(&cfg).unwrap();
        let b = build_datasets(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.test.len(), 100);
        assert_eq!(a.test.corruption_rate(), 0.0);
        assert_ne!(a.train.features(), a.test.features());
    }

    #[test]
    fn report_has_one_record_per_epoch() {
        let report = execute(&tiny()).unwrap();
        report.validate().unwrap();
        assert_eq!(report.records.len(), 5);
        assert_eq!(report.records.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(report.finals.test_acc, report.records[4].test_acc);
    }

    #[test]
    fn state_round_trips_through_checkpoint_bytes() {
        let cfg = tiny();
        let data = build_datasets(&cfg).unwrap();
        let mut s = Session::new(cfg.clone(), &data).unwrap();
        s.step().unwrap();
        s.step().unwrap();
        s.step().unwrap();
        let mut bytes = Vec::new();
        s.checkpoint().write(&mut bytes).unwrap();
        let back = Checkpoint::read(bytes.as_slice()).unwrap();
        let r = Session::resume(cfg, &data, back).unwrap();
        assert_eq!(r.records(), s.records());
        assert_eq!(r.trainer().thresholds(), s.trainer().thresholds());
        assert_eq!(r.trainer().correction(), s.trainer().correction());
        assert_eq!(r.trainer().student(), s.trainer().student());
    }

    #[test]
    fn resume_rejects_other_config() {
        let cfg = tiny();
        let data = build_datasets(&cfg).unwrap();
        let mut s = Session::new(cfg.clone(), &data).unwrap();
        s.step().unwrap();
        let mut other = cfg;
        other.train.lambda_max = 0.5;
        let err = Session::resume(other, &data, s.checkpoint()).err().unwrap();
        assert!(err.is_config());
    }
}
