//! Run directories: CSV schemas, determinism, resume and failure dumps.

use std::fs;
use std::path::Path;

use selcorr::harness::report::{DISTRIBUTIONS_HEADER, EPOCHS_HEADER, THRESHOLDS_HEADER};
use selcorr::harness::run::{CHECKPOINT_FILE, DISTRIBUTIONS_FILE, EPOCHS_FILE, ERROR_FILE, REPORT_FILE, THRESHOLDS_FILE};
use selcorr::harness::{build_datasets, load_report, parse_config, run_to_dir, RunConfig, RunOptions, Session};
use selcorr::Error;

fn small(extra: &str) -> RunConfig {
    parse_config(&format!(
        r#"
        name = "small"
        per_class = 60
        test_per_class = 40
        total_epochs = 6
        warmup_epochs = 2
        batch_size = 32
        hidden = [12, 12]
        seed = 21
        {extra}
        "#
    ))
    .unwrap()
}

fn opts(root: &Path) -> RunOptions {
    RunOptions {
        out_root: Some(root.to_path_buf()),
        ..RunOptions::default()
    }
}

fn read(dir: &Path, file: &str) -> String {
    fs::read_to_string(dir.join(file)).unwrap()
}

/// Parses a CSV, checks the header and that every cell is numeric (or an
/// allowed empty cell), and returns the rows.
fn parse_table(text: &str, header: &str, empty_ok: &[usize]) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let got: Vec<String> = reader.headers().unwrap().iter().map(str::to_string).collect();
    assert_eq!(got.join(","), header);
    reader
        .records()
        .map(|r| {
            let r = r.unwrap();
            assert_eq!(r.len(), got.len());
            for (k, cell) in r.iter().enumerate() {
                if cell.is_empty() && empty_ok.contains(&k) {
                    continue;
                }
                let v: f64 = cell.parse().unwrap_or_else(|_| panic!("column {k}: `{cell}` is not numeric"));
                assert!(v.is_finite());
            }
            r.iter().map(str::to_string).collect()
        })
        .collect()
}

#[test]
fn every_emitted_file_follows_its_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("");
    let art = run_to_dir(&cfg, &opts(tmp.path())).unwrap();
    let c = cfg.blobs.class_count;
    let epochs = cfg.train.total_epochs;

    let rows = parse_table(&read(&art.dir, EPOCHS_FILE), EPOCHS_HEADER, &[]);
    assert_eq!(rows.len(), epochs);
    for (e, row) in rows.iter().enumerate() {
        assert_eq!(row[0], e.to_string());
        for k in [4, 5, 6] {
            let v: f64 = row[k].parse().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
    let rows = parse_table(&read(&art.dir, THRESHOLDS_FILE), THRESHOLDS_HEADER, &[]);
    assert_eq!(rows.len(), epochs * c);
    for row in &rows {
        let (t, local): (f64, f64) = (row[2].parse().unwrap(), row[3].parse().unwrap());
        assert!(local > 0.0 && local <= t);
    }
    let rows = parse_table(&read(&art.dir, DISTRIBUTIONS_FILE), DISTRIBUTIONS_HEADER, &[5, 6, 7]);
    assert_eq!(rows.len(), epochs * c);

    let report = load_report(&art.dir).unwrap();
    report.validate().unwrap();
    assert_eq!(report, art.report);
    assert_eq!(report.schema_version, selcorr::harness::SCHEMA_VERSION);
    assert_eq!(report.config, cfg);
    assert!(art.dir.join(CHECKPOINT_FILE).is_file());
    assert!(art.dir.join(REPORT_FILE).is_file());
    let name = art.dir.file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("small-seed21-"), "{name}");
}

#[test]
fn same_config_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("");
    let a = run_to_dir(&cfg, &opts(tmp.path())).unwrap();
    let b = run_to_dir(&cfg, &opts(tmp.path())).unwrap();
    assert_ne!(a.dir, b.dir);
    for f in [EPOCHS_FILE, THRESHOLDS_FILE, DISTRIBUTIONS_FILE] {
        assert_eq!(fs::read(a.dir.join(f)).unwrap(), fs::read(b.dir.join(f)).unwrap(), "{f}");
    }
    let c = run_to_dir(&cfg.clone().with_seed(22), &opts(tmp.path())).unwrap();
    assert_ne!(read(&a.dir, EPOCHS_FILE), read(&c.dir, EPOCHS_FILE));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("");
    let whole = run_to_dir(&cfg, &opts(tmp.path())).unwrap();

    // Interrupt after 3 epochs: write the checkpoint a save-every run would.
    let data = build_datasets(&cfg).unwrap();
    let mut session = Session::new(cfg.clone(), &data).unwrap();
    for _ in 0..3 {
        session.step().unwrap();
    }
    let dir = tmp.path().join("interrupted");
    fs::create_dir(&dir).unwrap();
    let mut bytes = Vec::new();
    session.checkpoint().write(&mut bytes).unwrap();
    fs::write(dir.join(CHECKPOINT_FILE), bytes).unwrap();

    let resumed = run_to_dir(
        &cfg,
        &RunOptions {
            resume: Some(dir.clone()),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(resumed.dir, dir);
    for f in [EPOCHS_FILE, THRESHOLDS_FILE, DISTRIBUTIONS_FILE] {
        assert_eq!(read(&whole.dir, f), read(&dir, f), "{f}");
    }
    assert_eq!(resumed.report.records, whole.report.records);
}

#[test]
fn save_every_leaves_a_resumable_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("");
    let art = run_to_dir(
        &cfg,
        &RunOptions {
            out_root: Some(tmp.path().to_path_buf()),
            save_every: Some(2),
            resume: None,
        },
    )
    .unwrap();
    // Resuming a finished run is a no-op that rewrites identical tables.
    let before = read(&art.dir, EPOCHS_FILE);
    run_to_dir(
        &cfg,
        &RunOptions {
            resume: Some(art.dir.join(CHECKPOINT_FILE)),
            ..RunOptions::default()
        },
    )
    .unwrap();
    assert_eq!(before, read(&art.dir, EPOCHS_FILE));
    assert!(!art.dir.join(format!("{CHECKPOINT_FILE}.tmp")).exists());

    let err = run_to_dir(
        &cfg,
        &RunOptions {
            out_root: Some(tmp.path().to_path_buf()),
            save_every: Some(0),
            resume: None,
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config { field, .. } if field == "save_every"));
}

#[test]
fn resume_with_other_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let art = run_to_dir(&small(""), &opts(tmp.path())).unwrap();
    let err = run_to_dir(
        &small("lambda_max = 0.5"),
        &RunOptions {
            resume: Some(art.dir),
            ..RunOptions::default()
        },
    )
    .unwrap_err();
    assert!(err.is_config(), "{err}");
}

#[test]
fn no_reweight_reports_every_weight_at_lambda_max() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("no_reweight = true\nlambda_max = 0.75");
    let art = run_to_dir(&cfg, &opts(tmp.path())).unwrap();
    let rows = parse_table(&read(&art.dir, DISTRIBUTIONS_FILE), DISTRIBUTIONS_HEADER, &[5, 6, 7]);
    let mut seen = 0;
    for row in rows {
        for cell in &row[5..8] {
            if !cell.is_empty() {
                assert_eq!(cell.parse::<f64>().unwrap(), 0.75);
                seen += 1;
            }
        }
    }
    assert!(seen > 0);
}

#[test]
fn non_finite_loss_aborts_with_batch_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small("base_lr = 1e200");
    let err = run_to_dir(&cfg, &opts(tmp.path())).unwrap_err();
    let Error::NonFiniteLoss { epoch, batch, .. } = err else {
        panic!("expected a non-finite loss, got {err}");
    };
    let dir = fs::read_dir(tmp.path()).unwrap().next().unwrap().unwrap().path();
    let dump = read(&dir, ERROR_FILE);
    assert!(dump.contains(&format!("batch {batch}")), "{dump}");
    let rows = parse_table(&read(&dir, EPOCHS_FILE), EPOCHS_HEADER, &[]);
    assert_eq!(rows.len(), epoch);
}
