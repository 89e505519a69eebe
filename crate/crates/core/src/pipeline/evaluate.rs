use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Variant;
use super::experiment::write_csv_rows;
use super::preprocess::{load_split, PreprocessManifest, ProcessedLayout};
use crate::baselines::{cmv_advect, persistence, smart_persistence, CmvParams};
use crate::dataset::{format_utc, Sample, SplitHistograms, SplitName};
use crate::error::{Error, Result};
use crate::geometry::sun_at;
use crate::metrics::{crps, forecast_skill, quantile95};
use crate::model::{Checkpoint, Mode, ModelInput};

/// Per-horizon scores of one forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub forecaster: String,
    pub horizon_s: i64,
    pub n: usize,
    pub rmse: f64,
    /// RMSE skill against smart persistence, percent.
    pub fs_rmse_pct: Option<f64>,
    pub mae: f64,
    pub q95: Option<f64>,
    /// Equal to the MAE for point forecasts.
    pub crps: f64,
    /// CRPS skill against smart persistence, percent.
    pub fs_crps_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherRow {
    pub weather: String,
    pub forecaster: String,
    pub horizon_s: i64,
    pub n: usize,
    pub rmse: f64,
    pub fs_rmse_pct: Option<f64>,
    pub mae: f64,
    pub q95: Option<f64>,
    pub crps: f64,
    pub fs_crps_pct: Option<f64>,
}

impl WeatherRow {
    fn new(weather: &str, r: MetricRow) -> Self {
        Self {
            weather: weather.to_string(),
            forecaster: r.forecaster,
            horizon_s: r.horizon_s,
            n: r.n,
            rmse: r.rmse,
            fs_rmse_pct: r.fs_rmse_pct,
            mae: r.mae,
            q95: r.q95,
            crps: r.crps,
            fs_crps_pct: r.fs_crps_pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub timestamp_utc: String,
    pub horizon_s: i64,
    pub target_utc: String,
    pub weather: String,
    pub ghi: f64,
    pub clear: f64,
    pub persistence: f64,
    pub spm: f64,
    pub cmv: Option<f64>,
    pub model: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metrics: Vec<MetricRow>,
    pub weather: Vec<WeatherRow>,
    /// Days written to `curves/`.
    pub curve_days: Vec<String>,
}

/// Point forecasts (and CRPS where available) of one forecaster,
/// indexed `[sample][horizon]`.
struct Forecasts {
    point: Vec<Vec<f64>>,
    crps: Option<Vec<Vec<f64>>>,
}

fn score(name: &str, f: &Forecasts, spm: &Forecasts, samples: &[usize], all: &[Sample], horizons: &[i64]) -> Vec<MetricRow> {
    let n = samples.len();
    horizons
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let err: Vec<f64> = samples.iter().map(|&i| f.point[i][k] - all[i].targets[k].ghi).collect();
            let abs: Vec<f64> = err.iter().map(|e| e.abs()).collect();
            let rmse = (err.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
            let mae = abs.iter().sum::<f64>() / n as f64;
            let crps_of = |g: &Forecasts| match &g.crps {
                Some(c) => samples.iter().map(|&i| c[i][k]).sum::<f64>() / n as f64,
                None => samples.iter().map(|&i| (g.point[i][k] - all[i].targets[k].ghi).abs()).sum::<f64>() / n as f64,
            };
            let rmse_spm = (samples.iter().map(|&i| (spm.point[i][k] - all[i].targets[k].ghi).powi(2)).sum::<f64>() / n as f64).sqrt();
            let c = crps_of(f);
            MetricRow {
                forecaster: name.to_string(),
                horizon_s: h,
                n,
                rmse,
                fs_rmse_pct: forecast_skill(rmse, rmse_spm).ok(),
                mae,
                q95: quantile95(&abs).ok(),
                crps: c,
                fs_crps_pct: forecast_skill(c, crps_of(spm)).ok(),
            }
        })
        .collect()
}

/// Mean of rows scored on the same samples (one per checkpoint).
fn average(rows: &[Vec<MetricRow>]) -> Vec<MetricRow> {
    let k = rows.len() as f64;
    let mean = |f: &dyn Fn(&MetricRow) -> f64, j: usize| rows.iter().map(|r| f(&r[j])).sum::<f64>() / k;
    let mean_opt = |f: &dyn Fn(&MetricRow) -> Option<f64>, j: usize| {
        rows.iter().map(|r| f(&r[j])).collect::<Option<Vec<f64>>>().map(|v| v.iter().sum::<f64>() / k)
    };
    (0..rows[0].len())
        .map(|j| MetricRow {
            forecaster: rows[0][j].forecaster.clone(),
            horizon_s: rows[0][j].horizon_s,
            n: rows[0][j].n,
            rmse: mean(&|r| r.rmse, j),
            fs_rmse_pct: mean_opt(&|r| r.fs_rmse_pct, j),
            mae: mean(&|r| r.mae, j),
            q95: mean_opt(&|r| r.q95, j),
            crps: mean(&|r| r.crps, j),
            fs_crps_pct: mean_opt(&|r| r.fs_crps_pct, j),
        })
        .collect()
}

fn baselines(samples: &[Sample], horizons: &[i64], manifest: &PreprocessManifest) -> Result<(Forecasts, Forecasts, Option<Forecasts>)> {
    let rows: Vec<(Vec<f64>, Vec<f64>)> = samples
        .iter()
        .map(|s| {
            let mut p = Vec::with_capacity(horizons.len());
            let mut sp = Vec::with_capacity(horizons.len());
            for (k, &h) in horizons.iter().enumerate() {
                p.push(persistence::<f32>(s.ghi_t, h)?.ghi_hat);
                sp.push(smart_persistence::<f32>(s.ghi_t, s.clear_t, s.targets[k].clear, h)?.ghi_hat);
            }
            Ok((p, sp))
        })
        .collect::<Result<_>>()?;
    let (p, sp): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let cmv = if manifest.config.sat_variant == Variant::Raw && samples.iter().all(|s| s.sat.len() >= 2) {
        Some(Forecasts {
            point: samples.par_iter().map(|s| cmv_forecast(s, horizons, manifest)).collect::<Result<_>>()?,
            crps: None,
        })
    } else {
        None
    };
    Ok((Forecasts { point: p, crps: None }, Forecasts { point: sp, crps: None }, cmv))
}

/// Cloud-motion forecast from the first and last input maps, read where
/// the sun ray meets the cloud layer at the target time.
pub fn cmv_forecast(s: &Sample, horizons: &[i64], manifest: &PreprocessManifest) -> Result<Vec<f64>> {
    let (first, last) = (0, s.sat.len() - 1);
    let dt = s.sat_times[last] - s.sat_times[first];
    let view = manifest.satellite_view;
    let params = CmvParams {
        attenuation: manifest.attenuation,
        ..CmvParams::default()
    };
    let size = view.pixels;
    let params = CmvParams {
        block: params.block.min(size / 2),
        search: params.search.min(size / 4),
        ..params
    };
    if s.targets.len() != horizons.len() {
        return Err(Error::data("sample horizons do not match the dataset"));
    }
    s.targets
        .iter()
        .map(|target| {
            let sun = sun_at(s.site, target.time as f64)?;
            let d = manifest.cloud_height * sun.zenith.min(89.0).to_radians().tan();
            let a = sun.azimuth.to_radians();
            let px = view.to_pixel(d * a.sin(), d * a.cos());
            let lead = target.time - s.sat_times[last];
            Ok(cmv_advect(&s.sat[first], &s.sat[last], dt, lead, &params, px, target.clear)?.ghi_hat)
        })
        .collect()
}

fn model_forecasts(ck: &Checkpoint, samples: &[Sample]) -> Result<Forecasts> {
    let cfg = &ck.config;
    let per: Vec<(Vec<f64>, Option<Vec<f64>>)> = samples
        .par_iter()
        .map(|s| {
            let input = ModelInput::<f32>::from_sample(s, cfg, ck.bin_range.1)?;
            let fc = ck.predict(&input)?;
            let mut point = Vec::with_capacity(cfg.horizons);
            let mut c = Vec::with_capacity(cfg.horizons);
            for (k, h) in fc.horizons.iter().enumerate() {
                match cfg.mode {
                    Mode::Deterministic => point.push(h.ghi_hat.ok_or_else(|| Error::Internal("scalar head missing".into()))?),
                    Mode::Probabilistic => {
                        let d = h.dist.as_ref().ok_or_else(|| Error::Internal("distribution head missing".into()))?;
                        point.push(d.mean());
                        c.push(crps(d, s.targets[k].ghi)?);
                    }
                }
            }
            Ok((point, (cfg.mode == Mode::Probabilistic).then_some(c)))
        })
        .collect::<Result<_>>()?;
    let crps = if cfg.mode == Mode::Probabilistic {
        Some(per.iter().map(|p| p.1.clone().unwrap_or_default()).collect())
    } else {
        None
    };
    Ok(Forecasts {
        point: per.into_iter().map(|p| p.0).collect(),
        crps,
    })
}

fn scored_rows(
    model: &[Forecasts],
    base: &(Forecasts, Forecasts, Option<Forecasts>),
    idx: &[usize],
    samples: &[Sample],
    horizons: &[i64],
) -> Vec<MetricRow> {
    let (p, spm, cmv) = base;
    let per_ck: Vec<Vec<MetricRow>> = model.iter().map(|m| score("model", m, spm, idx, samples, horizons)).collect();
    let mut rows = average(&per_ck);
    rows.extend(score("persistence", p, spm, idx, samples, horizons));
    rows.extend(score("spm", spm, spm, idx, samples, horizons));
    if let Some(c) = cmv {
        rows.extend(score("cmv", c, spm, idx, samples, horizons));
    }
    rows
}

/// Scores checkpoints on one split and writes under `out`:
/// `metrics.csv`, `weather_metrics.csv`, `curves/<day>.csv` and
/// `histograms.csv`. Metrics of several checkpoints are averaged; the model
/// column of the curves is their mean forecast.
pub fn evaluate(checkpoints: &[PathBuf], data: &Path, split: SplitName, out: &Path) -> Result<EvalReport> {
    if checkpoints.is_empty() {
        return Err(Error::config("no checkpoint to evaluate"));
    }
    let manifest = PreprocessManifest::load(&ProcessedLayout::new(data).manifest())?;
    let cks = checkpoints.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    let horizons = manifest.config.assembly.horizons.clone();
    for (ck, path) in cks.iter().zip(checkpoints) {
        if ck.horizons_s != horizons || ck.config.input_resolution != manifest.config.resolution {
            return Err(Error::config(format!("checkpoint {} does not match the dataset", path.display())));
        }
    }
    let samples = load_split(data, split)?;
    if samples.is_empty() {
        return Err(Error::data(format!("split {split} of {} is empty", data.display())));
    }
    let base = baselines(&samples, &horizons, &manifest)?;
    let model = cks.iter().map(|ck| model_forecasts(ck, &samples)).collect::<Result<Vec<_>>>()?;

    let all: Vec<usize> = (0..samples.len()).collect();
    let metrics = scored_rows(&model, &base, &all, &samples, &horizons);
    let mut by_weather: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        if let Some(w) = s.weather {
            by_weather.entry(w.to_string()).or_default().push(i);
        }
    }
    let weather: Vec<WeatherRow> = by_weather
        .iter()
        .flat_map(|(w, idx)| {
            scored_rows(&model, &base, idx, &samples, &horizons)
                .into_iter()
                .map(move |row| WeatherRow::new(w, row))
        })
        .collect();

    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_csv_rows(&out.join("metrics.csv"), &metrics)?;
    write_csv_rows(&out.join("weather_metrics.csv"), &weather)?;
    SplitHistograms::new(&samples, manifest.config.assembly.bin_range, manifest.config.assembly.bins)
        .save(&out.join("histograms.csv"), manifest.config.assembly.bin_range)?;

    let curves_dir = out.join("curves");
    if curves_dir.exists() {
        fs::remove_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    }
    fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    let mut days: BTreeMap<String, Vec<CurveRow>> = BTreeMap::new();
    let k = model.len() as f64;
    for (i, s) in samples.iter().enumerate() {
        for (j, t) in s.targets.iter().enumerate() {
            days.entry(s.day().to_string()).or_default().push(CurveRow {
                timestamp_utc: format_utc(s.t),
                horizon_s: t.horizon,
                target_utc: format_utc(t.time),
                weather: s.weather.map_or_else(String::new, |w| w.to_string()),
                ghi: t.ghi,
                clear: t.clear,
                persistence: base.0.point[i][j],
                spm: base.1.point[i][j],
                cmv: base.2.as_ref().map(|c| c.point[i][j]),
                model: model.iter().map(|m| m.point[i][j]).sum::<f64>() / k,
            });
        }
    }
    for (day, rows) in &days {
        write_csv_rows(&curves_dir.join(format!("{day}.csv")), rows)?;
    }
    Ok(EvalReport {
        metrics,
        weather,
        curve_days: days.into_keys().collect(),
    })
}
