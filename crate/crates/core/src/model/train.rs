use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Mode, ModelConfig};
use super::network::{LossBreakdown, ModelInput, ModelTargets};
use super::params::{Adam, AdamConfig, ParamGrads, ParameterStore};
use crate::baselines::smart_persistence;
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::metrics::{crps, forecast_skill};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Seed of the mini-batch shuffling.
    pub seed: u64,
    /// Training aborts once a batch loss exceeds this value.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            seed: 0,
            divergence_threshold: 1e6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) || o.clip_norm < 0.0 {
            return Err(Error::config("invalid optimizer settings"));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::config("divergence threshold must be positive"));
        }
        Ok(())
    }
}

/// Network input and supervision of one sample plus the baseline ingredients.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub t: i64,
    pub input: ModelInput<T>,
    pub targets: ModelTargets<T>,
    pub ghi_t: f64,
    pub clear_t: f64,
    pub clear_h: Vec<f64>,
}

pub fn prepare<T: Scalar>(sample: &Sample, cfg: &ModelConfig, ghi_scale: f64) -> Result<Prepared<T>> {
    Ok(Prepared {
        t: sample.t,
        input: ModelInput::from_sample(sample, cfg, ghi_scale)?,
        targets: ModelTargets::from_sample(sample, cfg, ghi_scale)?,
        ghi_t: sample.ghi_t,
        clear_t: sample.clear_t,
        clear_h: sample.targets.iter().map(|t| t.clear).collect(),
    })
}

/// Validation scores of one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonScore {
    pub horizon_s: i64,
    pub n: usize,
    pub rmse: f64,
    pub rmse_spm: f64,
    pub mae_spm: f64,
    /// Mean CRPS in probabilistic mode.
    pub crps: Option<f64>,
    /// Skill (percent) used for snapshot selection: RMSE skill, or CRPS skill
    /// against the smart-persistence MAE in probabilistic mode.
    pub fs: f64,
}

/// Mean loss and per-horizon scores of `params` on `samples`.
pub fn evaluate_split<T: Scalar>(
    params: &ParameterStore<T>,
    samples: &[Sample],
    cfg: &ModelConfig,
    bin_range: (f64, f64),
    horizons_s: &[i64],
) -> Result<(LossBreakdown, Vec<HorizonScore>)> {
    if samples.is_empty() {
        return Err(Error::data("cannot evaluate an empty split"));
    }
    let per: Vec<(LossBreakdown, Vec<(f64, f64, f64, Option<f64>)>)> = samples
        .par_iter()
        .map(|s| {
            let p = prepare::<T>(s, cfg, bin_range.1)?;
            let lb = super::loss_value(params, &p.input, &p.targets, cfg)?;
            let fc = super::predict(params, &p.input, cfg, bin_range)?;
            let mut rows = Vec::with_capacity(cfg.horizons);
            for (k, h) in fc.horizons.iter().enumerate() {
                let target = p.targets.ghi[k];
                let spm = smart_persistence::<T>(p.ghi_t, p.clear_t, p.clear_h[k], horizons_s[k])?.ghi_hat;
                let (point, c) = match cfg.mode {
                    Mode::Deterministic => (h.ghi_hat.unwrap_or(0.0), None),
                    Mode::Probabilistic => {
                        let d = h.dist.as_ref().ok_or_else(|| Error::Internal("distribution head missing".into()))?;
                        (d.mean(), Some(crps(d, target)?))
                    }
                };
                rows.push((point - target, spm - target, (spm - target).abs(), c));
            }
            Ok((lb, rows))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let hcount = cfg.horizons;
    let mut mean = LossBreakdown {
        total: 0.0,
        irradiance: 0.0,
        image: 0.0,
        irradiance_per_horizon: vec![0.0; hcount],
        image_per_horizon: vec![0.0; if cfg.alpha > 0.0 { hcount } else { 0 }],
    };
    let mut acc = vec![(0.0, 0.0, 0.0, 0.0); hcount];
    for (lb, rows) in &per {
        mean.total += lb.total / n;
        mean.irradiance += lb.irradiance / n;
        mean.image += lb.image / n;
        for (m, v) in mean.irradiance_per_horizon.iter_mut().zip(&lb.irradiance_per_horizon) {
            *m += v / n;
        }
        for (m, v) in mean.image_per_horizon.iter_mut().zip(&lb.image_per_horizon) {
            *m += v / n;
        }
        for (a, r) in acc.iter_mut().zip(rows) {
            a.0 += r.0 * r.0;
            a.1 += r.1 * r.1;
            a.2 += r.2;
            a.3 += r.3.unwrap_or(0.0);
        }
    }
    let scores = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let rmse = (a.0 / n).sqrt();
            let rmse_spm = (a.1 / n).sqrt();
            let mae_spm = a.2 / n;
            let crps_mean = (cfg.mode == Mode::Probabilistic).then_some(a.3 / n);
            let fs = match crps_mean {
                Some(c) => forecast_skill(c, mae_spm),
                None => forecast_skill(rmse, rmse_spm),
            }
            .unwrap_or(f64::NEG_INFINITY);
            HorizonScore {
                horizon_s: horizons_s[k],
                n: per.len(),
                rmse,
                rmse_spm,
                mae_spm,
                crps: crps_mean,
                fs,
            }
        })
        .collect();
    Ok((mean, scores))
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: String,
    /// 0 for rows aggregated over horizons.
    pub horizon_s: i64,
    pub loss_total: f64,
    pub loss_irradiance: f64,
    pub loss_image: f64,
    pub rmse: Option<f64>,
    pub fs: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::data(format!("training log: {e}"));
        w.write_record(["epoch", "split", "horizon_s", "loss_total", "loss_irradiance", "loss_image", "rmse", "fs"])
            .map_err(err)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.split.clone(),
                r.horizon_s.to_string(),
                r.loss_total.to_string(),
                r.loss_irradiance.to_string(),
                r.loss_image.to_string(),
                opt(r.rmse),
                opt(r.fs),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::data(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Mean training loss of each epoch, in order.
    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.split == "train").map(|r| r.loss_total).collect()
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Distinct parameter snapshots referenced by `horizon_snapshot`.
    pub snapshots: Vec<ParameterStore<T>>,
    /// Snapshot used for each horizon.
    pub horizon_snapshot: Vec<usize>,
    /// Epoch of the best validation skill per horizon (0 = initial weights).
    pub best_epoch: Vec<usize>,
    pub best_fs: Vec<f64>,
    pub final_params: ParameterStore<T>,
    pub log: TrainLog,
}

fn batch_gradients<T: Scalar>(params: &ParameterStore<T>, batch: &[&Sample], cfg: &ModelConfig, ghi_scale: f64) -> Result<(f64, LossBreakdown, ParamGrads<T>)> {
    let scale = T::one() / T::from_usize_lossy(batch.len());
    let parts: Vec<(LossBreakdown, ParamGrads<T>)> = batch
        .par_iter()
        .map(|s| {
            let p = prepare::<T>(s, cfg, ghi_scale)?;
            super::gradients(params, &p.input, &p.targets, cfg, scale)
        })
        .collect::<Result<_>>()?;
    // Reduce in batch order so the sum does not depend on scheduling.
    let mut iter = parts.into_iter();
    let (first_lb, mut sum) = iter.next().ok_or_else(|| Error::Internal("empty batch".into()))?;
    let n = batch.len() as f64;
    let mut lb = LossBreakdown {
        total: first_lb.total / n,
        irradiance: first_lb.irradiance / n,
        image: first_lb.image / n,
        irradiance_per_horizon: Vec::new(),
        image_per_horizon: Vec::new(),
    };
    for (b, g) in iter {
        lb.total += b.total / n;
        lb.irradiance += b.irradiance / n;
        lb.image += b.image / n;
        for (acc, gi) in sum.iter_mut().zip(&g) {
            for (a, &v) in acc.iter_mut().zip(gi) {
                *a += v;
            }
        }
    }
    Ok((lb.total, lb, sum))
}

/// Mini-batch Adam training with per-horizon selection of the snapshot with
/// the best validation skill.
pub fn train<T: Scalar>(
    mut params: ParameterStore<T>,
    train_set: &[Sample],
    val_set: &[Sample],
    cfg: &ModelConfig,
    tc: &TrainConfig,
    bin_range: (f64, f64),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    tc.validate()?;
    params.check(cfg)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::data("training and validation sets must be non-empty"));
    }
    let horizons_s: Vec<i64> = train_set[0].targets.iter().map(|t| t.horizon).collect();
    if horizons_s.len() != cfg.horizons {
        return Err(Error::domain("sample horizons do not match the model"));
    }
    let ghi_scale = bin_range.1;
    let mut log = TrainLog::default();
    let mut opt = Adam::new(tc.optimizer, &params);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut snapshots = vec![params.clone()];
    let (val_loss, scores) = evaluate_split(&params, val_set, cfg, bin_range, &horizons_s)?;
    push_val(&mut log, 0, cfg.alpha, &val_loss, &scores);
    let mut horizon_snapshot = vec![0; cfg.horizons];
    let mut best_epoch = vec![0; cfg.horizons];
    let mut best_fs: Vec<f64> = scores.iter().map(|s| s.fs).collect();

    for epoch in 1..=tc.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown {
            total: 0.0,
            irradiance: 0.0,
            image: 0.0,
            irradiance_per_horizon: Vec::new(),
            image_per_horizon: Vec::new(),
        };
        let mut batches = 0usize;
        for chunk in order.chunks(tc.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (total, lb, grads) = batch_gradients(&params, &batch, cfg, ghi_scale)?;
            if !total.is_finite() || total > tc.divergence_threshold {
                return Err(Error::TrainingFault(format!(
                    "loss diverged to {total} at epoch {epoch}, step {}; lower the learning rate",
                    opt.steps() + 1
                )));
            }
            opt.update(&mut params, &grads);
            sum.total += lb.total;
            sum.irradiance += lb.irradiance;
            sum.image += lb.image;
            batches += 1;
        }
        let nb = batches as f64;
        log.records.push(EpochRecord {
            epoch,
            split: "train".into(),
            horizon_s: 0,
            loss_total: sum.total / nb,
            loss_irradiance: sum.irradiance / nb,
            loss_image: sum.image / nb,
            rmse: None,
            fs: None,
        });
        let (val_loss, scores) = evaluate_split(&params, val_set, cfg, bin_range, &horizons_s)?;
        push_val(&mut log, epoch, cfg.alpha, &val_loss, &scores);
        let mut taken = None;
        for (k, s) in scores.iter().enumerate() {
            if s.fs > best_fs[k] {
                let idx = *taken.get_or_insert_with(|| {
                    snapshots.push(params.clone());
                    snapshots.len() - 1
                });
                best_fs[k] = s.fs;
                best_epoch[k] = epoch;
                horizon_snapshot[k] = idx;
            }
        }
        log::info!(
            "epoch {epoch}: train loss {:.5}, val loss {:.5}, val fs {:?} ({:.1} s)",
            sum.total / nb,
            val_loss.total,
            scores.iter().map(|s| (s.fs * 10.0).round() / 10.0).collect::<Vec<_>>(),
            start.elapsed().as_secs_f64()
        );
    }

    // Keep only referenced snapshots.
    let mut used: Vec<usize> = horizon_snapshot.clone();
    used.sort_unstable();
    used.dedup();
    let kept: Vec<ParameterStore<T>> = used.iter().map(|&i| snapshots[i].clone()).collect();
    let horizon_snapshot = horizon_snapshot.iter().map(|i| used.binary_search(i).unwrap_or(0)).collect();
    Ok(TrainOutcome {
        snapshots: kept,
        horizon_snapshot,
        best_epoch,
        best_fs,
        final_params: params,
        log,
    })
}

fn push_val(log: &mut TrainLog, epoch: usize, alpha: f64, loss: &LossBreakdown, scores: &[HorizonScore]) {
    for (k, s) in scores.iter().enumerate() {
        log.records.push(EpochRecord {
            epoch,
            split: "val".into(),
            horizon_s: s.horizon_s,
            loss_total: loss.irradiance_per_horizon[k] + alpha * loss.image_per_horizon.get(k).copied().unwrap_or(0.0),
            loss_irradiance: loss.irradiance_per_horizon[k],
            loss_image: loss.image_per_horizon.get(k).copied().unwrap_or(0.0),
            rmse: Some(s.rmse),
            fs: Some(s.fs),
        });
    }
}
