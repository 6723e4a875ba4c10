//! Parallel trial execution, CSV and manifest output, and single-row replay.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use tiltlab_core::seed::Seed;

use crate::config::{parse_config, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::experiments::Experiment;

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const DEFAULT_OUT: &str = "tiltlab-out";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    /// Data rows written, including a trailing error row.
    pub rows: usize,
    pub failed_rows: usize,
    pub error: Option<String>,
}

impl RunSummary {
    pub fn success(&self) -> bool {
        self.error.is_none() && self.failed_rows == 0
    }
}

/// CSV cells, the ok flag, and the module error if the trial failed.
pub type TrialOutput = (Vec<String>, bool, Option<String>);

/// A complete CSV row for one trial; module errors become error rows.
pub fn trial_row(
    exp: &Experiment,
    trial: usize,
    seed: Seed,
) -> TrialOutput {
    let mut cells = vec![trial.to_string(), seed.0.to_string()];
    match exp.run_trial(seed) {
        Ok(row) => {
            cells.extend(row.cells);
            cells.push(row.ok.to_string());
            cells.push(String::new());
            (cells, row.ok, None)
        }
        Err(e) => {
            let message = e.to_string();
            cells.resize(exp.header().len() - 2, String::new());
            cells.push("false".into());
            cells.push(message.clone());
            (cells, false, Some(message))
        }
    }
}

/// Runs every trial on `workers` threads; results come back in trial order.
pub fn compute_rows(
    exp: &Experiment,
    workers: Option<usize>,
) -> Result<Vec<TrialOutput>> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| CliError::Pool(e.to_string()))?;
    Ok(pool.install(|| {
        (0..exp.trials)
            .into_par_iter()
            .map(|t| trial_row(exp, t, exp.trial_seed(t)))
            .collect()
    }))
}

fn manifest_text(cfg: &ExperimentConfig, summary: &RunSummary, elapsed_ms: u128) -> String {
    let mut echo = cfg.clone();
    echo.out = None;
    echo.workers = None;
    format!(
        "# tiltlab manifest\n# version = {}\n# csv = {}\n# rows = {}\n# failed_rows = {}\n# elapsed_ms = {}\n{}",
        env!("CARGO_PKG_VERSION"),
        summary.csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        summary.rows,
        summary.failed_rows,
        elapsed_ms,
        echo.to_text()
    )
}

/// Runs a configuration and writes `<kind>.csv` and the manifest.
///
/// Option values override the config file. Rows after the first module
/// error are not written.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    let start = Instant::now();
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        cfg.seed = Some(seed);
    }
    cfg.seed = Some(cfg.seed.unwrap_or(0));
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let workers = opts.workers.or(cfg.workers);
    let exp = Experiment::resolve(&cfg)?;
    fs::create_dir_all(&out)?;
    let csv_path = out.join(format!("{}.csv", exp.kind));
    let mut writer = csv::Writer::from_path(&csv_path)?;
    writer.write_record(exp.header())?;
    let mut summary = RunSummary {
        csv: csv_path,
        manifest: out.join(MANIFEST_NAME),
        rows: 0,
        failed_rows: 0,
        error: None,
    };
    for (cells, ok, error) in compute_rows(&exp, workers)? {
        writer.write_record(&cells)?;
        summary.rows += 1;
        if !ok {
            summary.failed_rows += 1;
        }
        if let Some(message) = error {
            summary.error = Some(message);
            break;
        }
    }
    writer.flush()?;
    fs::write(
        &summary.manifest,
        manifest_text(&cfg, &summary, start.elapsed().as_millis()),
    )?;
    Ok(summary)
}

pub fn run_config_file(path: &Path, opts: &RunOptions) -> Result<RunSummary> {
    let text = fs::read_to_string(path)?;
    run(&parse_config(&text)?, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub header: Vec<String>,
    pub recorded: Vec<String>,
    pub replayed: Vec<String>,
}

impl ReplayOutcome {
    pub fn identical(&self) -> bool {
        self.recorded == self.replayed
    }
}

/// Recomputes data row `row` (zero-based) of a CSV from the manifest next
/// to it and the trial seed stored in the row.
pub fn replay(csv_path: &Path, row: usize) -> Result<ReplayOutcome> {
    let dir = csv_path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let exp = Experiment::resolve(&parse_config(&manifest)?)?;
    let mut reader = csv::Reader::from_path(csv_path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != exp.header() {
        return Err(CliError::Replay(
            "CSV header does not match the manifest's experiment kind".into(),
        ));
    }
    let record = reader
        .records()
        .nth(row)
        .ok_or_else(|| CliError::Replay(format!("CSV has no data row {row}")))??;
    let recorded: Vec<String> = record.iter().map(str::to_owned).collect();
    let parse = |i: usize| -> Result<u64> {
        recorded[i].parse().map_err(|_| {
            CliError::Replay(format!(
                "column {} is not an integer: {:?}",
                header[i], recorded[i]
            ))
        })
    };
    let trial = parse(0)? as usize;
    let seed = Seed(parse(1)?);
    let (replayed, _, _) = trial_row(&exp, trial, seed);
    Ok(ReplayOutcome {
        header,
        recorded,
        replayed,
    })
}
