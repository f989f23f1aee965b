//! `selcorr`: run, sweep and compare noisy-label experiments on synthetic
//! blobs.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use selcorr::dataset::io;
use selcorr::harness::{self, compare_runs, load_config, load_report, RunConfig, RunOptions};
use selcorr::Error;

#[derive(Parser)]
#[command(name = "selcorr", version, about = "Sample selection and label correction under label noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one config and write its run directory.
    Run {
        config: PathBuf,
        /// Continue from a checkpoint file or a run directory.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Save a checkpoint every N epochs.
        #[arg(long, value_name = "N")]
        save_every: Option<usize>,
        /// Output root (default: $SELCORR_OUTPUT_ROOT or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every *.toml config in a directory.
    Sweep {
        config_dir: PathBuf,
        /// Parallel runs (default: number of CPUs).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print final-metric differences (A minus B) as JSON.
    Compare { run_a: PathBuf, run_b: PathBuf },
    /// Write the noisy training set of a config (.csv or binary by extension).
    ExportDataset {
        config: PathBuf,
        /// Destination; defaults to <name>-seed<seed>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Export the clean held-out test set instead.
        #[arg(long)]
        test: bool,
    },
    /// Read a dataset file, print a JSON summary, optionally convert it.
    ImportDataset {
        file: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: if e.is_config() { 1 } else { 2 },
            message: e.to_string(),
        }
    }
}

fn config_failure(e: Error) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    load_config(path).map_err(config_failure)
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("json value serializes"));
}

fn summary(dir: &Path, report: &harness::RunReport) -> serde_json::Value {
    serde_json::json!({
        "run_dir": dir,
        "name": report.config.name,
        "seed": report.config.seed(),
        "test_acc": report.finals.test_acc,
        "precision": report.finals.selection.precision,
        "recall": report.finals.selection.recall,
        "clean_count_ratio": report.finals.clean_count_ratio,
        "wall_clock_seconds": report.wall_clock_seconds,
    })
}

fn run(config: &Path, resume: Option<PathBuf>, save_every: Option<usize>, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load(config)?;
    let options = RunOptions {
        out_root: out,
        save_every,
        resume,
    };
    let artifacts = harness::run_to_dir(&cfg, &options)?;
    print_json(&summary(&artifacts.dir, &artifacts.report));
    Ok(())
}

fn sweep(dir: &Path, jobs: Option<usize>, out: Option<PathBuf>) -> Result<(), Failure> {
    let entries = std::fs::read_dir(dir).map_err(|e| Failure::from(Error::io(dir, e)))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure {
            code: 1,
            message: format!("no *.toml configs in {}", dir.display()),
        });
    }
    // Validate everything before training anything.
    let configs = paths
        .iter()
        .map(|p| {
            load(p).map_err(|f| Failure {
                message: format!("{}: {}", p.display(), f.message),
                ..f
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure {
            code: 2,
            message: format!("thread pool: {e}"),
        })?;
    let options = RunOptions {
        out_root: out,
        ..RunOptions::default()
    };
    let results: Vec<_> = pool.install(|| configs.par_iter().map(|cfg| harness::run_to_dir(cfg, &options)).collect());

    let mut rows = Vec::new();
    let mut failed = 0;
    for (path, result) in paths.iter().zip(results) {
        match result {
            Ok(a) => rows.push(summary(&a.dir, &a.report)),
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", path.display());
                rows.push(serde_json::json!({ "config": path, "error": e.to_string() }));
            }
        }
    }
    print_json(&serde_json::Value::Array(rows));
    if failed > 0 {
        return Err(Failure {
            code: 2,
            message: format!("{failed} of {} runs failed", paths.len()),
        });
    }
    Ok(())
}

fn compare(a: &Path, b: &Path) -> Result<(), Failure> {
    let delta = compare_runs(&load_report(a)?, &load_report(b)?)?;
    print_json(&serde_json::to_value(delta).expect("delta serializes"));
    Ok(())
}

fn export_dataset(config: &Path, out: Option<PathBuf>, test: bool) -> Result<(), Failure> {
    let cfg = load(config)?;
    let data = harness::build_datasets(&cfg)?;
    let ds = if test { &data.test } else { &data.train };
    let out = out.unwrap_or_else(|| {
        let suffix = if test { "-test" } else { "" };
        PathBuf::from(format!("{}-seed{}{suffix}.csv", cfg.name, cfg.seed()))
    });
    io::save(ds, &out)?;
    print_json(&serde_json::json!({ "written": out, "rows": ds.len() }));
    Ok(())
}

fn import_dataset(file: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let ds = io::load(file)?;
    if let Some(out) = &out {
        io::save(&ds, out)?;
    }
    let ood = ds.truth().is_ood().iter().filter(|&&o| o).count();
    print_json(&serde_json::json!({
        "file": file,
        "rows": ds.len(),
        "dim": ds.dim(),
        "class_count": ds.class_count(),
        "ood_rows": ood,
        "corruption_rate": ds.corruption_rate(),
        "written": out,
    }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run {
            config,
            resume,
            save_every,
            out,
        } => run(&config, resume, save_every, out),
        Command::Sweep { config_dir, jobs, out } => sweep(&config_dir, jobs, out),
        Command::Compare { run_a, run_b } => compare(&run_a, &run_b),
        Command::ExportDataset { config, out, test } => export_dataset(&config, out, test),
        Command::ImportDataset { file, out } => import_dataset(&file, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
