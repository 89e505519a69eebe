use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, GridConfig};
use super::evaluate::{evaluate, EvalReport, MetricRow};
use super::preprocess::{load_split, preprocess, write_json, PreprocessManifest, ProcessedLayout};
use crate::dataset::SplitName;
use crate::error::{Error, Result};
use crate::model::{train, Checkpoint, ParameterStore};

/// Reuses the processed dataset when it matches the configuration, builds
/// it from the raw data otherwise.
pub fn ensure_dataset(exp: &ExperimentConfig) -> Result<PreprocessManifest> {
    let layout = ProcessedLayout::new(&exp.data);
    let existing = PreprocessManifest::load(&layout.manifest()).ok();
    let manifest = match (&exp.raw, &exp.preprocess) {
        (Some(raw), Some(p)) => match existing {
            Some(m) if &m.config == p => m,
            _ => preprocess(raw, p, &exp.data)?,
        },
        _ => existing.ok_or_else(|| Error::data(format!("{} holds no processed dataset", exp.data.display())))?,
    };
    exp.check_dataset(&manifest.config)?;
    Ok(manifest)
}

/// Output files of one trained seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub best_epoch: Vec<usize>,
    pub best_fs: Vec<f64>,
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Trains one model per seed and writes `seed_<s>/model.skck` and
/// `seed_<s>/train_log.csv` under `out`.
pub fn train_experiment(exp: &ExperimentConfig, out: &Path) -> Result<Vec<SeedRun>> {
    exp.validate()?;
    let manifest = ensure_dataset(exp)?;
    let train_set = load_split(&exp.data, SplitName::Train)?;
    let val_set = load_split(&exp.data, SplitName::Val)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::data(format!(
            "{} has {} training and {} validation samples; both must be non-empty",
            exp.data.display(),
            train_set.len(),
            val_set.len()
        )));
    }
    let a = &manifest.config.assembly;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut runs = Vec::new();
    for &seed in &exp.seeds {
        let (model, tc) = exp.for_seed(seed);
        log::info!("training seed {seed} ({}) on {} samples", model.inputs.label(), train_set.len());
        let outcome = train(ParameterStore::<f32>::init(&model)?, &train_set, &val_set, &model, &tc, a.bin_range)?;
        let dir = seed_dir(out, seed);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let ck = Checkpoint {
            config: model,
            bin_range: a.bin_range,
            horizons_s: a.horizons.clone(),
            snapshots: outcome.snapshots,
            horizon_snapshot: outcome.horizon_snapshot,
        };
        let run = SeedRun {
            seed,
            checkpoint: dir.join("model.skck"),
            log: dir.join("train_log.csv"),
            best_epoch: outcome.best_epoch,
            best_fs: outcome.best_fs,
        };
        ck.save(&run.checkpoint)?;
        outcome.log.save(&run.log)?;
        runs.push(run);
    }
    write_json(&out.join("runs.json"), &runs)?;
    Ok(runs)
}

/// Trains and evaluates one experiment; evaluation files go to `out/eval`.
pub fn run_experiment(exp: &ExperimentConfig, split: SplitName, out: &Path) -> Result<EvalReport> {
    let runs = train_experiment(exp, out)?;
    let cks: Vec<PathBuf> = runs.into_iter().map(|r| r.checkpoint).collect();
    evaluate(&cks, &exp.data, split, &out.join("eval"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub horizon_s: i64,
    pub rmse: f64,
    pub fs_rmse_pct: Option<f64>,
    pub crps: f64,
    pub fs_crps_pct: Option<f64>,
}

fn model_rows(report: &EvalReport) -> impl Iterator<Item = &MetricRow> {
    report.metrics.iter().filter(|r| r.forecaster == "model")
}

fn write_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains one experiment per image-loss weight and scores it on the
/// validation split; writes `alpha_sweep.csv`.
pub fn sweep_alpha(exp: &ExperimentConfig, alphas: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    if alphas.is_empty() {
        return Err(Error::config("alpha list is empty"));
    }
    let cells: Vec<(f64, ExperimentConfig)> = alphas
        .iter()
        .map(|&a| {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::config(format!("alpha {a} must be finite and non-negative")));
            }
            let mut e = exp.clone();
            e.model.alpha = a;
            e.model.heads.cloud_map |= a > 0.0;
            e.validate()?;
            Ok((a, e))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (a, e) in &cells {
        let report = run_experiment(e, SplitName::Val, &out.join(format!("alpha_{a}")))?;
        rows.extend(model_rows(&report).map(|r| SweepRow {
            alpha: *a,
            horizon_s: r.horizon_s,
            rmse: r.rmse,
            fs_rmse_pct: r.fs_rmse_pct,
            crps: r.crps,
            fs_crps_pct: r.fs_crps_pct,
        }));
    }
    write_rows(&out.join("alpha_sweep.csv"), &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cell: String,
    pub inputs: String,
    pub mode: String,
    pub alpha: f64,
    pub sky_variant: String,
    pub sat_variant: String,
    pub horizon_s: i64,
    pub n: usize,
    pub rmse: f64,
    pub rmse_spm: f64,
    pub fs_rmse_pct: Option<f64>,
    pub crps: f64,
    pub fs_crps_pct: Option<f64>,
}

/// Runs every cell of a grid (up to `jobs` at a time) and writes the
/// combined `report.csv`.
pub fn run_grid(grid: &GridConfig, out: &Path, jobs: usize) -> Result<Vec<ReportRow>> {
    grid.validate()?;
    let cells: Vec<ExperimentConfig> = grid.cells.iter().map(|c| grid.cell(c)).collect();
    // Datasets first, one at a time, so that cells sharing one never race.
    let mut seen = std::collections::BTreeSet::new();
    for e in &cells {
        if seen.insert(e.data.clone()) {
            ensure_dataset(e)?;
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let reports: Vec<EvalReport> = pool.install(|| {
        grid.cells
            .par_iter()
            .zip(&cells)
            .map(|(c, e)| run_experiment(e, grid.split, &out.join(&c.name)))
            .collect::<Result<_>>()
    })?;
    let mut rows = Vec::new();
    for ((c, e), report) in grid.cells.iter().zip(&cells).zip(&reports) {
        let variants = e.preprocess.as_ref().map_or(("raw".into(), "raw".into()), |p| (p.sky_variant.to_string(), p.sat_variant.to_string()));
        for r in model_rows(report) {
            let spm = report
                .metrics
                .iter()
                .find(|b| b.forecaster == "spm" && b.horizon_s == r.horizon_s)
                .map_or(f64::NAN, |b| b.rmse);
            rows.push(ReportRow {
                cell: c.name.clone(),
                inputs: e.model.inputs.label(),
                mode: format!("{:?}", e.model.mode).to_lowercase(),
                alpha: e.model.alpha,
                sky_variant: variants.0.clone(),
                sat_variant: variants.1.clone(),
                horizon_s: r.horizon_s,
                n: r.n,
                rmse: r.rmse,
                rmse_spm: spm,
                fs_rmse_pct: r.fs_rmse_pct,
                crps: r.crps,
                fs_crps_pct: r.fs_crps_pct,
            });
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_rows(&out.join("report.csv"), &rows)?;
    Ok(rows)
}

pub(crate) fn write_csv_rows<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    write_rows(path, rows)
}
