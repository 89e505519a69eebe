//! Deterministic and probabilistic verification scores.
//!
//! All reductions run sequentially in input order so summaries are
//! bit-reproducible.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of irradiance classes predicted by the distribution head.
pub const BIN_COUNT: usize = 100;
/// Minimum series length for a stable 95 % quantile.
pub const MIN_QUANTILE_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorSummary {
    pub rmse: f64,
    pub mae: f64,
    pub q95: f64,
    pub n: usize,
}

fn check_pair<T: Scalar>(pred: &[T], target: &[T]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::domain(format!(
            "prediction length {} differs from target length {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::domain("empty series"));
    }
    Ok(())
}

pub fn rmse<T: Scalar>(pred: &[T], target: &[T]) -> Result<f64> {
    check_pair(pred, target)?;
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p.f64() - t.f64()).powi(2)).sum();
    Ok((sse / pred.len() as f64).sqrt())
}

pub fn mae<T: Scalar>(pred: &[T], target: &[T]) -> Result<f64> {
    check_pair(pred, target)?;
    let sae: f64 = pred.iter().zip(target).map(|(p, t)| (p.f64() - t.f64()).abs()).sum();
    Ok(sae / pred.len() as f64)
}

/// `(1 - err_model / err_baseline) * 100`.
pub fn forecast_skill(err_model: f64, err_baseline: f64) -> Result<f64> {
    if !(err_baseline > 0.0) || !err_baseline.is_finite() {
        return Err(Error::domain(format!("baseline error must be positive, got {err_baseline}")));
    }
    Ok((1.0 - err_model / err_baseline) * 100.0)
}

/// Nearest-rank 95th percentile of the absolute errors (rank `ceil(0.95 n)`).
pub fn quantile95<T: Scalar>(abs_errors: &[T]) -> Result<f64> {
    let n = abs_errors.len();
    if n < MIN_QUANTILE_SAMPLES {
        return Err(Error::domain(format!(
            "95% quantile needs at least {MIN_QUANTILE_SAMPLES} errors, got {n}"
        )));
    }
    let mut sorted: Vec<f64> = abs_errors.iter().map(|e| e.f64().abs()).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    // ceil(0.95 n) computed in integers to avoid 0.95 rounding.
    let rank = (95 * n).div_ceil(100);
    Ok(sorted[rank - 1])
}

pub fn summarize<T: Scalar>(pred: &[T], target: &[T]) -> Result<ErrorSummary> {
    let abs: Vec<f64> = pred.iter().zip(target).map(|(p, t)| (p.f64() - t.f64()).abs()).collect();
    Ok(ErrorSummary {
        rmse: rmse(pred, target)?,
        mae: mae(pred, target)?,
        q95: quantile95(&abs)?,
        n: pred.len(),
    })
}

/// Probability mass over equal-width irradiance bins on `[lo, hi]`.
///
/// The CDF is a step function with each bin's mass placed at its centre.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedDistribution {
    lo: f64,
    hi: f64,
    probs: Vec<f64>,
}

impl BinnedDistribution {
    pub fn new(lo: f64, hi: f64, probs: Vec<f64>) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::domain(format!("invalid bin range [{lo}, {hi}]")));
        }
        if probs.is_empty() {
            return Err(Error::domain("distribution needs at least one bin"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("bin probabilities must be finite and non-negative"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::domain(format!("bin probabilities sum to {s}, not 1")));
        }
        Ok(Self { lo, hi, probs })
    }

    /// All mass in the bin containing `value` (clamped into range).
    pub fn one_hot(lo: f64, hi: f64, bins: usize, value: f64) -> Result<Self> {
        let mut probs = vec![0.0; bins.max(1)];
        let idx = bin_index(value, lo, hi, bins.max(1));
        probs[idx] = 1.0;
        Self::new(lo, hi, probs)
    }

    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        Self::new(lo, hi, vec![1.0 / bins as f64; bins])
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn bin_count(&self) -> usize {
        self.probs.len()
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.probs.len() as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.bin_width()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(i, p)| p * self.center(i)).sum()
    }

    /// Step CDF evaluated at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .filter(|(i, _)| self.center(*i) <= x)
            .map(|(_, p)| p)
            .sum::<f64>()
            .min(1.0)
    }
}

/// Bin of `value` on `[lo, hi]` split into `bins`, clamped to `[0, bins - 1]`.
pub fn bin_index(value: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let width = (hi - lo) / bins as f64;
    let raw = ((value - lo) / width).floor();
    if raw.is_nan() || raw < 0.0 {
        0
    } else {
        (raw as usize).min(bins - 1)
    }
}

/// Exact `integral (F_model - F_target)^2 dx` for one forecast.
///
/// The observation is clamped into `[lo, hi]` before building its step CDF,
/// so targets outside the binned range are scored against the nearest edge.
pub fn crps(dist: &BinnedDistribution, target: f64) -> Result<f64> {
    if !target.is_finite() {
        return Err(Error::domain("CRPS target must be finite"));
    }
    let y = target.clamp(dist.lo, dist.hi);
    let mut total = 0.0;
    let mut f_model = 0.0f64;
    let mut x_prev = f64::NEG_INFINITY;
    let mut target_passed = false;
    let mut i = 0;
    // Sweep the merged breakpoints (bin centres and the observation).
    loop {
        let next_center = (i < dist.probs.len()).then(|| dist.center(i));
        let take_target = !target_passed && next_center.is_none_or(|c| y < c);
        let x = if take_target {
            y
        } else if let Some(c) = next_center {
            c
        } else {
            break;
        };
        if x_prev.is_finite() {
            let f_target = if target_passed { 1.0 } else { 0.0 };
            total += (f_model - f_target).powi(2) * (x - x_prev);
        }
        x_prev = x;
        if take_target {
            target_passed = true;
        } else {
            f_model += dist.probs[i];
            i += 1;
        }
    }
    Ok(total)
}

/// Mean CRPS over a set of forecasts.
pub fn crps_mean(dists: &[BinnedDistribution], targets: &[f64]) -> Result<f64> {
    if dists.len() != targets.len() || dists.is_empty() {
        return Err(Error::domain("CRPS needs equally many non-zero forecasts and targets"));
    }
    let mut acc = 0.0;
    for (d, &t) in dists.iter().zip(targets) {
        acc += crps(d, t)?;
    }
    Ok(acc / dists.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Midpoint-rule quadrature of the CDF difference, independent of the sweep.
    fn crps_quadrature(d: &BinnedDistribution, y: f64, steps: usize) -> f64 {
        let y = y.clamp(d.lo(), d.hi());
        let (a, b) = (d.lo() - 1.0, d.hi() + 1.0);
        let dx = (b - a) / steps as f64;
        (0..steps)
            .map(|k| {
                let x = a + (k as f64 + 0.5) * dx;
                let ft = if x >= y { 1.0 } else { 0.0 };
                (d.cdf(x) - ft).powi(2) * dx
            })
            .sum()
    }

    #[test]
    fn rmse_and_mae() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(rmse(&t, &t).unwrap(), 0.0);
        let p: Vec<f64> = t.iter().map(|v| v + 10.0).collect();
        assert!((rmse(&p, &t).unwrap() - 10.0).abs() < 1e-12);
        assert!((mae(&p, &t).unwrap() - 10.0).abs() < 1e-12);
        let (p, t) = ([3.0, 4.0], [0.0, 0.0]);
        assert!((rmse(&p, &t).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(mae(&p, &t).unwrap(), 3.5);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn skill() {
        assert!((forecast_skill(120.4, 144.6).unwrap() - 16.7).abs() < 0.05);
        assert_eq!(forecast_skill(37.5, 37.5).unwrap(), 0.0);
        assert_eq!(forecast_skill(0.0, 12.0).unwrap(), 100.0);
        assert!(forecast_skill(1.0, 0.0).is_err());
    }

    #[test]
    fn quantile_nearest_rank() {
        let e: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile95(&e).unwrap(), 95.0);
        assert_eq!(quantile95(&[4.5; 30]).unwrap(), 4.5);
        let mut e = vec![0.0; 99];
        e.push(1000.0);
        assert_eq!(quantile95(&e).unwrap(), 0.0);
        assert!(quantile95(&[1.0; 19]).is_err());
    }

    #[test]
    fn crps_of_one_hot_is_quantised_absolute_error() {
        let d = BinnedDistribution::one_hot(0.0, 1000.0, 100, 437.0).unwrap();
        assert_eq!(d.center(43), 435.0);
        assert!((crps(&d, 435.0).unwrap()).abs() < 1e-12);
        assert!((crps(&d, 437.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((crps(&d, 700.0).unwrap() - 265.0).abs() < 1e-9);
    }

    #[test]
    fn crps_uniform_against_quadrature() {
        let d = BinnedDistribution::uniform(0.0, 1.0, 100).unwrap();
        let v = crps(&d, 0.0).unwrap();
        let oracle = crps_quadrature(&d, 0.0, 200_000);
        assert!((v - oracle).abs() < 1e-4);
        assert!((v - 1.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn crps_of_concentrated_mass_is_within_a_bin() {
        let d = BinnedDistribution::one_hot(0.0, 1200.0, 100, 611.0).unwrap();
        assert!(crps(&d, 611.0).unwrap() <= d.bin_width());
    }

    #[test]
    fn malformed_distributions() {
        assert!(BinnedDistribution::new(0.0, 1.0, vec![0.5, 0.4]).is_err());
        assert!(BinnedDistribution::new(1.0, 1.0, vec![1.0]).is_err());
        assert!(BinnedDistribution::new(0.0, 1.0, vec![1.5, -0.5]).is_err());
        let d = BinnedDistribution::uniform(0.0, 1.0, 4).unwrap();
        assert!(crps(&d, f64::NAN).is_err());
    }

    #[test]
    fn concentration_minimises_crps_over_a_small_family() {
        // Enumerate all distributions on 5 bins with masses in multiples of 1/4.
        // Observation at the centre of bin 2 of 5 on [0, 1].
        let y = 0.5;
        let mut best = (f64::INFINITY, vec![]);
        for a in 0..=4 {
            for b in 0..=4 - a {
                for c in 0..=4 - a - b {
                    for d in 0..=4 - a - b - c {
                        let e = 4 - a - b - c - d;
                        let probs: Vec<f64> = [a, b, c, d, e].iter().map(|&k| k as f64 / 4.0).collect();
                        let dist = BinnedDistribution::new(0.0, 1.0, probs.clone()).unwrap();
                        let s = crps(&dist, y).unwrap();
                        assert!(s >= 0.0);
                        if s < best.0 {
                            best = (s, probs);
                        }
                    }
                }
            }
        }
        assert_eq!(best.1, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert!(best.0.abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn sweep_matches_quadrature(raw in proptest::collection::vec(0.0f64..1.0, 8), y in -50.0f64..1100.0) {
            let s: f64 = raw.iter().sum::<f64>() + 1e-9;
            let probs: Vec<f64> = raw.iter().map(|v| (v + 1e-9 / 8.0) / s).collect();
            let d = BinnedDistribution::new(0.0, 1000.0, probs).unwrap();
            let exact = crps(&d, y).unwrap();
            prop_assert!(exact >= 0.0);
            prop_assert!((exact - crps_quadrature(&d, y, 240_000)).abs() < 0.05);
        }

        #[test]
        fn quantile_is_permutation_invariant(mut e in proptest::collection::vec(0.0f64..500.0, 20..60), k in 0usize..1000) {
            let q = quantile95(&e).unwrap();
            let n = e.len();
            e.rotate_left(k % n);
            e.reverse();
            prop_assert_eq!(quantile95(&e).unwrap(), q);
        }

        #[test]
        fn skill_decreases_with_error(a in 0.0f64..500.0, b in 0.0f64..500.0, base in 1.0f64..500.0) {
            if a < b {
                prop_assert!(forecast_skill(a, base).unwrap() > forecast_skill(b, base).unwrap());
            }
            prop_assert_eq!(forecast_skill(base, base).unwrap(), 0.0);
        }
    }
}
