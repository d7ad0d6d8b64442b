//! Executes grid points, one isolated directory per (run, seed).
//!
//! Layout under the output root:
//!
//! ```text
//! <out>/<run id>/seed<k>/resolved.toml
//!                        metrics.jsonl
//!                        g.ckpt, d.ckpt
//!                        divergence.json   (only if the run diverged)
//!                        row.json          (written last; marks completion)
//! ```

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crgan::checkpoint;
use crgan::data::Dataset;
use crgan::nn::Model;
use crgan::trainer::{train, MetricsRecord, Observer, RunResult};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::grid::GridPoint;
use crate::report::emit_report;

pub const ROW_FILE: &str = "row.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const RESOLVED_FILE: &str = "resolved.toml";
pub const DIVERGENCE_FILE: &str = "divergence.json";
pub const G_CKPT: &str = "g.ckpt";
pub const D_CKPT: &str = "d.ckpt";

/// One line of `summary.csv`: a single (run, seed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run_id: String,
    pub seed: u64,
    pub dataset: String,
    pub loss: String,
    pub reg: String,
    pub lambda: f64,
    pub preset: String,
    pub augment: String,
    pub family: String,
    pub sn: bool,
    pub cr_mode: String,
    pub layer_rule: String,
    pub augment_only: bool,
    pub residual: bool,
    pub steps: usize,
    pub final_fd: Option<f64>,
    pub best_fd: Option<f64>,
    pub coverage: Option<usize>,
    pub hq_frac: Option<f64>,
    pub acc_train: Option<f64>,
    pub acc_test: Option<f64>,
    pub median_step_seconds: Option<f64>,
    pub diverged: bool,
    pub diverged_step: Option<usize>,
}

impl ReportRow {
    /// Value of a named axis (any of [`crate::grid::AXES`] or `dataset`).
    pub fn axis_value(&self, axis: &str) -> Option<String> {
        Some(match axis {
            "dataset" => self.dataset.clone(),
            "loss" => self.loss.clone(),
            "reg" => self.reg.clone(),
            "lambda" => format!("{}", self.lambda),
            "preset" => self.preset.clone(),
            "augment" => self.augment.clone(),
            "family" => self.family.clone(),
            "sn" => self.sn.to_string(),
            "cr_mode" => self.cr_mode.clone(),
            "layer_rule" => self.layer_rule.clone(),
            "augment_only" => self.augment_only.to_string(),
            "residual" => self.residual.to_string(),
            _ => return None,
        })
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

pub fn build_row(cfg: &ExperimentConfig, seed: u64, result: &RunResult) -> ReportRow {
    let last = result.last();
    let mut secs: Vec<f64> = result.records.iter().map(|r| r.disc_step_seconds).collect();
    ReportRow {
        run_id: cfg.run.id.clone(),
        seed,
        dataset: cfg.dataset.kind_name().into(),
        loss: cfg.loss.kind.to_string(),
        reg: cfg.reg.kind.to_string(),
        lambda: cfg.reg.lambda,
        preset: cfg.optimizer.preset.to_string(),
        augment: cfg.augment.spec.to_string(),
        family: serde_json::to_value(cfg.model.family)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        sn: cfg.model.sn,
        cr_mode: cfg.reg.cr_mode.to_string(),
        layer_rule: cfg.reg.layer_rule.to_string(),
        augment_only: cfg.run.augment_only,
        residual: cfg.model.residual,
        steps: cfg.run.steps,
        final_fd: last.map(|r| r.fd),
        best_fd: result.best_fd,
        coverage: last.and_then(|r| r.coverage),
        hq_frac: last.and_then(|r| r.hq_frac),
        acc_train: last.and_then(|r| r.acc_train),
        acc_test: last.and_then(|r| r.acc_test),
        median_step_seconds: median(&mut secs),
        diverged: result.diverged.is_some(),
        diverged_step: result.diverged.as_ref().map(|d| d.step),
    }
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| HarnessError::io(path, e))
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    io(&tmp, fs::write(&tmp, bytes))?;
    io(path, fs::rename(&tmp, path))
}

/// Streams metrics lines and keeps the latest checkpoints on disk.
struct RunWriter {
    dir: PathBuf,
    metrics: BufWriter<File>,
}

impl Observer for RunWriter {
    fn on_record(&mut self, record: &MetricsRecord, g: &Model, d: &Model) -> crgan::Result<()> {
        let line = serde_json::to_string(record).map_err(|e| crgan::Error::Checkpoint(e.to_string()))?;
        writeln!(self.metrics, "{line}")?;
        self.metrics.flush()?;
        checkpoint::save(g, &self.dir.join(G_CKPT))?;
        checkpoint::save(d, &self.dir.join(D_CKPT))?;
        Ok(())
    }
}

/// Runs one seed of `cfg` into `dir`, or reads back its row if it already
/// completed. Returns the row and whether the run executed.
pub fn run_single(cfg: &ExperimentConfig, seed: u64, data: &Dataset, dir: &Path) -> Result<(ReportRow, bool)> {
    let row_path = dir.join(ROW_FILE);
    if row_path.exists() {
        let text = io(&row_path, fs::read_to_string(&row_path))?;
        return Ok((serde_json::from_str(&text)?, false));
    }
    io(dir, fs::create_dir_all(dir))?;
    let resolved = cfg.with_concrete_augment(data)?;
    let mut resolved_seeded = resolved.clone();
    resolved_seeded.run.seed = seed;
    resolved_seeded.run.repeat = 1;
    write_atomic(&dir.join(RESOLVED_FILE), resolved_seeded.to_toml().as_bytes())?;
    let tc = resolved.train_config(data, seed)?;
    let metrics_path = dir.join(METRICS_FILE);
    let mut writer = RunWriter {
        dir: dir.to_path_buf(),
        metrics: BufWriter::new(io(&metrics_path, File::create(&metrics_path))?),
    };
    let result = train(&tc, data, &mut writer)?;
    if result.records.is_empty() {
        // Diverged before the first evaluation: still leave loadable weights.
        checkpoint::save(&result.g, &dir.join(G_CKPT))?;
        checkpoint::save(&result.d, &dir.join(D_CKPT))?;
    }
    if let Some(d) = &result.diverged {
        write_atomic(
            &dir.join(DIVERGENCE_FILE),
            serde_json::to_string_pretty(&serde_json::json!({
                "step": d.step,
                "l_d": d.l_d,
                "l_g": d.l_g,
                "l_reg": d.l_reg,
                "reason": d.reason,
            }))?
            .as_bytes(),
        )?;
    }
    let row = build_row(&resolved, seed, &result);
    write_atomic(&row_path, serde_json::to_string_pretty(&row)?.as_bytes())?;
    Ok((row, true))
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub parallel: usize,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    /// Write summary and per-axis reports after the runs.
    pub report: bool,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions {
            out: out.into(),
            parallel: default_parallelism(),
            steps: None,
            seed: None,
            report: true,
        }
    }
}

pub fn default_parallelism() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    /// Sorted by run id, then seed.
    pub rows: Vec<ReportRow>,
    pub executed: usize,
    pub skipped: usize,
}

pub fn run_dir(out: &Path, run_id: &str, seed: u64) -> PathBuf {
    out.join(run_id).join(format!("seed{seed}"))
}

fn apply_overrides(cfg: &ExperimentConfig, opts: &RunOptions) -> ExperimentConfig {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.steps {
        cfg.run.steps = s;
    }
    if let Some(s) = opts.seed {
        cfg.run.seed = s;
    }
    cfg
}

type DataCache = Mutex<HashMap<String, Arc<Dataset>>>;

fn dataset_for(cache: &DataCache, spec: &DatasetSpec) -> Result<Arc<Dataset>> {
    let key = serde_json::to_string(spec)?;
    let mut guard = cache.lock().expect("dataset cache poisoned");
    if let Some(d) = guard.get(&key) {
        return Ok(d.clone());
    }
    let d = Arc::new(spec.load()?);
    guard.insert(key, d.clone());
    Ok(d)
}

/// Runs every (point, seed) pair that has no `row.json` yet. Diverged runs
/// are recorded, not fatal; other failures are collected and reported after
/// the remaining runs finish.
pub fn run_grid(points: &[GridPoint], opts: &RunOptions) -> Result<GridOutcome> {
    if points.is_empty() {
        return Err(HarnessError::Report("grid has no runs".into()));
    }
    let jobs: Vec<(ExperimentConfig, u64)> = points
        .iter()
        .flat_map(|p| {
            let cfg = apply_overrides(&p.config, opts);
            cfg.seeds().into_iter().map(move |s| (cfg.clone(), s))
        })
        .collect();
    let cache: DataCache = Mutex::new(HashMap::new());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel.max(1))
        .build()
        .map_err(|e| HarnessError::Report(format!("thread pool: {e}")))?;
    let results: Vec<Result<(ReportRow, bool)>> = pool.install(|| {
        jobs.par_iter()
            .map(|(cfg, seed)| {
                let data = dataset_for(&cache, &cfg.dataset)?;
                run_single(cfg, *seed, &data, &run_dir(&opts.out, &cfg.run.id, *seed))
            })
            .collect()
    });
    let total = results.len();
    let mut rows = Vec::with_capacity(total);
    let mut errors = Vec::new();
    let mut executed = 0;
    for (r, (cfg, seed)) in results.into_iter().zip(&jobs) {
        match r {
            Ok((row, ran)) => {
                executed += ran as usize;
                rows.push(row);
            }
            Err(e) => errors.push(format!("{} seed {seed}: {e}", cfg.run.id)),
        }
    }
    if !errors.is_empty() {
        return Err(HarnessError::Runs {
            failed: errors.len(),
            total,
            first: errors.swap_remove(0),
        });
    }
    rows.sort_by(|a, b| (&a.run_id, a.seed).cmp(&(&b.run_id, b.seed)));
    if opts.report {
        emit_report(&rows, &opts.out)?;
    }
    Ok(GridOutcome {
        skipped: total - executed,
        executed,
        rows,
    })
}

/// Reads every completed `row.json` under `out`, sorted by run id and seed.
pub fn collect_rows(out: &Path) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for run in io(out, fs::read_dir(out))? {
        let run = io(out, run)?.path();
        if !run.is_dir() {
            continue;
        }
        for seed in io(&run, fs::read_dir(&run))? {
            let path = io(&run, seed)?.path().join(ROW_FILE);
            if path.is_file() {
                let text = io(&path, fs::read_to_string(&path))?;
                rows.push(serde_json::from_str::<ReportRow>(&text)?);
            }
        }
    }
    rows.sort_by(|a, b| (&a.run_id, a.seed).cmp(&(&b.run_id, b.seed)));
    Ok(rows)
}
