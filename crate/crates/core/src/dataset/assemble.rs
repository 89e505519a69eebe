use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::irradiance::{utc_day, IrradianceSeries};
use super::store::FrameStore;
use super::weather::{classify_day, WeatherClass, WeatherThresholds};
use crate::error::{Error, Result};
use crate::geometry::{sun_at, Site};
use crate::grid::Grid2D;
use crate::metrics::bin_index;
use crate::scalar::Scalar;
use crate::Grid;

pub const DEFAULT_HORIZONS: [i64; 6] = [600, 1200, 1800, 2400, 3000, 3600];
pub const IC_MAX: f64 = 1.5;

/// Sampling grid and filters of the sample assembler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssemblyConfig {
    pub site: Site,
    /// Forecast horizons in seconds.
    pub horizons: Vec<i64>,
    pub sky_frames: usize,
    pub sky_step: i64,
    pub sat_frames: usize,
    pub sat_step: i64,
    /// Exclusive upper bound of `t - last satellite timestamp`.
    pub max_sat_lag: i64,
    pub snap_tolerance: i64,
    pub max_zenith: f64,
    /// Sample times are the multiples of this step (seconds since the epoch).
    pub sample_stride: i64,
    pub bin_range: (f64, f64),
    pub bins: usize,
    pub thresholds: WeatherThresholds,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self {
            site: Site::SIRTA,
            horizons: DEFAULT_HORIZONS.to_vec(),
            sky_frames: 5,
            sky_step: 120,
            sat_frames: 5,
            sat_step: 300,
            max_sat_lag: 300,
            snap_tolerance: 30,
            max_zenith: 80.0,
            sample_stride: 120,
            bin_range: (0.0, 1200.0),
            bins: crate::metrics::BIN_COUNT,
            thresholds: WeatherThresholds::default(),
        }
    }
}

impl AssemblyConfig {
    pub fn validate(&self) -> Result<()> {
        self.site.validate().map_err(|e| Error::config(e.to_string()))?;
        if self.horizons.is_empty() || self.horizons.iter().any(|&h| h <= 0) || self.horizons.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("horizons must be positive and strictly increasing"));
        }
        if self.sky_frames == 0 || self.sat_frames == 0 || self.sky_step <= 0 || self.sat_step <= 0 {
            return Err(Error::config("frame counts and steps must be positive"));
        }
        if self.sample_stride <= 0 || self.max_sat_lag <= 0 || self.snap_tolerance < 0 {
            return Err(Error::config("stride and lag must be positive, snap tolerance non-negative"));
        }
        if 2 * self.snap_tolerance >= self.sky_step.min(self.sat_step) {
            return Err(Error::config("snap tolerance must be below half the frame spacing"));
        }
        if !(self.bin_range.1 > self.bin_range.0) || self.bins == 0 {
            return Err(Error::config("bin range must be increasing with at least one bin"));
        }
        Ok(())
    }

    pub fn bin_width(&self) -> f64 {
        (self.bin_range.1 - self.bin_range.0) / self.bins as f64
    }
}

/// Future state at one horizon.
#[derive(Debug, Clone)]
pub struct Target {
    pub horizon: i64,
    /// `t + horizon`: time of the GHI target.
    pub time: i64,
    /// `last satellite timestamp + horizon`: time of the cloud-index map.
    pub map_time: i64,
    pub ci_map: Arc<Grid>,
    pub ghi: f64,
    pub clear: f64,
    pub bin: usize,
}

/// One training / evaluation instance.
#[derive(Debug, Clone)]
pub struct Sample {
    pub t: i64,
    pub site: Site,
    pub sza: f64,
    pub weather: Option<WeatherClass>,
    pub sky_times: Vec<i64>,
    pub sky: Vec<Arc<Grid>>,
    pub sat_times: Vec<i64>,
    pub sat: Vec<Arc<Grid>>,
    /// GHI and clear-sky values at the nominal sky-frame times.
    pub past_ghi: Vec<f64>,
    pub past_clear: Vec<f64>,
    pub ghi_t: f64,
    pub clear_t: f64,
    pub targets: Vec<Target>,
}

impl Sample {
    pub fn day(&self) -> NaiveDate {
        utc_day(self.t)
    }

    pub fn sat_lag(&self) -> i64 {
        self.t - self.sat_times.last().copied().unwrap_or(i64::MIN / 2)
    }

    /// Normalised past irradiance, one value per sky frame.
    pub fn ic_values(&self) -> Result<Vec<f64>> {
        ic_ratios(&self.past_ghi, &self.past_clear)
    }

    /// Checks the structural guarantees of an assembled sample.
    pub fn check(&self, cfg: &AssemblyConfig) -> Result<()> {
        let fail = |m: String| Err(Error::data(format!("sample at {}: {m}", self.t)));
        if self.sky.len() != cfg.sky_frames || self.sky_times.len() != cfg.sky_frames {
            return fail("wrong number of sky frames".into());
        }
        if self.sat.len() != cfg.sat_frames || self.sat_times.len() != cfg.sat_frames {
            return fail("wrong number of satellite frames".into());
        }
        if self.sky_times.windows(2).any(|w| w[1] <= w[0]) || self.sat_times.windows(2).any(|w| w[1] <= w[0]) {
            return fail("frame timestamps not strictly increasing".into());
        }
        if (self.sky_times.last().unwrap() - self.t).abs() > cfg.snap_tolerance {
            return fail("last sky frame does not end at t".into());
        }
        let lag = self.sat_lag();
        if !(0..cfg.max_sat_lag).contains(&lag) {
            return fail(format!("satellite lag {lag} s"));
        }
        if self.sza > cfg.max_zenith {
            return fail(format!("zenith {} at t", self.sza));
        }
        if self.targets.len() != cfg.horizons.len() {
            return fail("wrong number of targets".into());
        }
        for (tg, &h) in self.targets.iter().zip(&cfg.horizons) {
            if tg.horizon != h || tg.time != self.t + h {
                return fail(format!("target {h} misaligned"));
            }
            let z = sun_at(self.site, tg.time as f64)?.zenith;
            if z > cfg.max_zenith {
                return fail(format!("zenith {z} at t + {h}"));
            }
            if tg.bin >= cfg.bins {
                return fail("bin index out of range".into());
            }
        }
        Ok(())
    }
}

/// Counts of candidate times and the first reason each was skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapReport {
    pub candidates: usize,
    pub emitted: usize,
    pub zenith: usize,
    pub missing_sky: usize,
    pub satellite_lag: usize,
    pub missing_satellite: usize,
    pub missing_irradiance: usize,
    pub missing_target_map: usize,
}

impl GapReport {
    pub fn skipped(&self) -> usize {
        self.candidates - self.emitted
    }
}

fn ic_ratios(ghi: &[f64], clear: &[f64]) -> Result<Vec<f64>> {
    if ghi.len() != clear.len() {
        return Err(Error::domain("irradiance and clear-sky lengths differ"));
    }
    ghi.iter()
        .zip(clear)
        .map(|(&g, &c)| {
            if c > 0.0 {
                Ok((g / c).clamp(0.0, IC_MAX))
            } else {
                Err(Error::domain("clear-sky irradiance must be positive for the irradiance channel"))
            }
        })
        .collect()
}

/// Constant planes `ghi / clear` (clamped to `[0, 1.5]`), one per past value.
pub fn encode_ic<T: Scalar>(past_ghi: &[f64], past_clear: &[f64], width: usize, height: usize) -> Result<Vec<Grid2D<T>>> {
    let r = ic_ratios(past_ghi, past_clear)?;
    r.into_iter()
        .map(|v| Grid2D::filled(width, height, 1, T::c(v)).with_value_range(T::zero(), T::c(IC_MAX)))
        .collect()
}

/// Weather label of every day with enough daytime measurements.
pub fn classify_days(irr: &IrradianceSeries, th: &WeatherThresholds) -> BTreeMap<NaiveDate, WeatherClass> {
    irr.by_day()
        .into_iter()
        .filter_map(|(day, pts)| {
            let (g, c): (Vec<f64>, Vec<f64>) = pts.iter().map(|(_, p)| (p.ghi, p.clear)).unzip();
            classify_day(&g, &c, th).ok().map(|w| (day, w))
        })
        .collect()
}

enum Skip {
    Zenith,
    Sky,
    Lag,
    Satellite,
    Irradiance,
    TargetMap,
}

/// Builds every sample whose inputs and targets are available.
///
/// Candidate times are the multiples of `sample_stride` between the first
/// and last sky frames. The cloud-index map targets come from `sat_store`
/// at the last input satellite time plus each horizon.
pub fn assemble(
    sky_store: &FrameStore,
    sat_store: &FrameStore,
    irr: &IrradianceSeries,
    cfg: &AssemblyConfig,
) -> Result<(Vec<Sample>, GapReport)> {
    cfg.validate()?;
    let mut report = GapReport::default();
    let mut samples = Vec::new();
    let (Some(first), Some(last)) = (sky_store.first_time(), sky_store.last_time()) else {
        return Ok((samples, report));
    };
    let days = classify_days(irr, &cfg.thresholds);
    let stride = cfg.sample_stride;
    let mut t = first.div_euclid(stride) * stride;
    if t < first - cfg.snap_tolerance {
        t += stride;
    }
    while t <= last + cfg.snap_tolerance {
        report.candidates += 1;
        match build(sky_store, sat_store, irr, cfg, t) {
            Ok(mut s) => {
                s.weather = days.get(&s.day()).copied();
                samples.push(s);
                report.emitted += 1;
            }
            Err(Skip::Zenith) => report.zenith += 1,
            Err(Skip::Sky) => report.missing_sky += 1,
            Err(Skip::Lag) => report.satellite_lag += 1,
            Err(Skip::Satellite) => report.missing_satellite += 1,
            Err(Skip::Irradiance) => report.missing_irradiance += 1,
            Err(Skip::TargetMap) => report.missing_target_map += 1,
        }
        t += stride;
    }
    Ok((samples, report))
}

fn build(sky_store: &FrameStore, sat_store: &FrameStore, irr: &IrradianceSeries, cfg: &AssemblyConfig, t: i64) -> std::result::Result<Sample, Skip> {
    let zenith = |ts: i64| sun_at(cfg.site, ts as f64).map(|s| s.zenith).unwrap_or(f64::INFINITY);
    let sza = zenith(t);
    if sza > cfg.max_zenith || cfg.horizons.iter().any(|&h| zenith(t + h) > cfg.max_zenith) {
        return Err(Skip::Zenith);
    }
    let nominal_sky: Vec<i64> = (0..cfg.sky_frames).rev().map(|k| t - k as i64 * cfg.sky_step).collect();
    let mut sky_times = Vec::with_capacity(cfg.sky_frames);
    let mut sky = Vec::with_capacity(cfg.sky_frames);
    for &n in &nominal_sky {
        let (ts, g) = sky_store.nearest(n, cfg.snap_tolerance).ok_or(Skip::Sky)?;
        sky_times.push(ts);
        sky.push(g.clone());
    }
    let (last_sat, _) = sat_store.latest_at_or_before(t).ok_or(Skip::Lag)?;
    if t - last_sat >= cfg.max_sat_lag {
        return Err(Skip::Lag);
    }
    let mut sat_times = Vec::with_capacity(cfg.sat_frames);
    let mut sat = Vec::with_capacity(cfg.sat_frames);
    for k in (0..cfg.sat_frames).rev() {
        let n = last_sat - k as i64 * cfg.sat_step;
        let (ts, g) = sat_store.nearest(n, cfg.snap_tolerance).ok_or(Skip::Satellite)?;
        sat_times.push(ts);
        sat.push(g.clone());
    }
    let usable = |ts: i64| irr.get(ts).filter(|p| p.clear > 0.0).ok_or(Skip::Irradiance);
    let now = usable(t)?;
    let mut past_ghi = Vec::with_capacity(cfg.sky_frames);
    let mut past_clear = Vec::with_capacity(cfg.sky_frames);
    for &n in &nominal_sky {
        let p = usable(n)?;
        past_ghi.push(p.ghi);
        past_clear.push(p.clear);
    }
    let mut targets = Vec::with_capacity(cfg.horizons.len());
    for &h in &cfg.horizons {
        let p = usable(t + h)?;
        let (map_time, map) = sat_store.nearest(last_sat + h, cfg.snap_tolerance).ok_or(Skip::TargetMap)?;
        targets.push(Target {
            horizon: h,
            time: t + h,
            map_time,
            ci_map: map.clone(),
            ghi: p.ghi,
            clear: p.clear,
            bin: bin_index(p.ghi, cfg.bin_range.0, cfg.bin_range.1, cfg.bins),
        });
    }
    Ok(Sample {
        t,
        site: cfg.site,
        sza,
        weather: None,
        sky_times,
        sky,
        sat_times,
        sat,
        past_ghi,
        past_clear,
        ghi_t: now.ghi,
        clear_t: now.clear,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::clear_sky_at;

    const DAY: i64 = 1_561_075_200; // 2019-06-21 00:00 UTC

    fn populated_day(site: Site, sat_delay: i64) -> (FrameStore, FrameStore, IrradianceSeries) {
        let mut sky = FrameStore::new("sky");
        let mut sat = FrameStore::new("sat");
        let mut irr = IrradianceSeries::new();
        let frame = Arc::new(Grid2D::filled(4, 4, 1, 0.5f32));
        for k in 0..720 {
            sky.insert_shared(DAY + 120 * k, frame.clone());
        }
        for k in 0..288 {
            sat.insert_shared(DAY + 300 * k + sat_delay, frame.clone());
        }
        for k in 0..1440 {
            let t = DAY + 60 * k;
            let c = clear_sky_at(site, t as f64).unwrap();
            irr.insert(t, 0.8 * c, c);
        }
        (sky, sat, irr)
    }

    #[test]
    fn full_day_matches_exhaustive_scan() {
        let cfg = AssemblyConfig::default();
        let (sky, sat, irr) = populated_day(cfg.site, 0);
        let (samples, report) = assemble(&sky, &sat, &irr, &cfg).unwrap();

        // Oracle: scan every 2-min time of the day and test each condition directly.
        let sky_set: std::collections::HashSet<i64> = sky.timestamps().collect();
        let sat_set: std::collections::HashSet<i64> = sat.timestamps().collect();
        let mut expect = Vec::new();
        for k in 0..720 {
            let t = DAY + 120 * k;
            let z = |s: i64| sun_at(cfg.site, s as f64).unwrap().zenith;
            let ok_sza = z(t) <= 80.0 && (1..=6).all(|i| z(t + 600 * i) <= 80.0);
            let ok_sky = (0..5).all(|i| sky_set.contains(&(t - 120 * i)));
            let last_sat = t - t.rem_euclid(300);
            let ok_sat = (0..5).all(|i| sat_set.contains(&(last_sat - 300 * i)));
            let ok_irr = (0..5).all(|i| irr.get(t - 120 * i).is_some_and(|p| p.clear > 0.0))
                && (1..=6).all(|i| irr.get(t + 600 * i).is_some());
            let ok_map = (1..=6).all(|i| sat_set.contains(&(last_sat + 600 * i)));
            if ok_sza && ok_sky && ok_sat && ok_irr && ok_map {
                expect.push(t);
            }
        }
        assert!(expect.len() > 300);
        assert_eq!(samples.iter().map(|s| s.t).collect::<Vec<_>>(), expect);
        assert_eq!(report.emitted, expect.len());
        assert_eq!(report.candidates, 720);
        for s in &samples {
            s.check(&cfg).unwrap();
            assert_eq!(s.targets[0].bin, bin_index(s.targets[0].ghi, 0.0, 1200.0, 100));
        }
    }

    #[test]
    fn polar_night_yields_nothing() {
        let cfg = AssemblyConfig {
            site: Site { latitude: 85.0, longitude: 0.0 },
            ..AssemblyConfig::default()
        };
        let (sky, sat, irr) = populated_day(Site::SIRTA, 0);
        let winter = |s: &FrameStore| {
            let mut o = FrameStore::new(s.stream());
            for (t, g) in s.iter() {
                o.insert_shared(t - 182 * 86_400, g.clone());
            }
            o
        };
        let (samples, report) = assemble(&winter(&sky), &winter(&sat), &irr, &cfg).unwrap();
        assert!(samples.is_empty());
        assert_eq!(report.zenith, report.candidates);
    }

    #[test]
    fn stale_satellite_yields_nothing() {
        // The newest satellite frame is always at least 6 minutes older than the sky frame.
        let cfg = AssemblyConfig::default();
        let (sky, sat, irr) = populated_day(cfg.site, 0);
        let window = |s: &FrameStore, lo: i64, hi: i64| {
            let mut o = FrameStore::new(s.stream());
            for (t, g) in s.iter().filter(|(t, _)| (lo..hi).contains(t)) {
                o.insert_shared(t, g.clone());
            }
            o
        };
        let noon = DAY + 12 * 3600;
        let sky = window(&sky, noon, noon + 3600);
        let stale = window(&sat, noon - 6 * 3600, noon - 360 + 1);
        let (samples, report) = assemble(&sky, &stale, &irr, &cfg).unwrap();
        assert!(samples.is_empty());
        assert_eq!(report.satellite_lag, report.candidates - report.missing_sky);
        let fresh = window(&sat, noon - 6 * 3600, noon + 6 * 3600);
        assert!(!assemble(&sky, &fresh, &irr, &cfg).unwrap().0.is_empty());
    }

    #[test]
    fn ic_planes() {
        let planes = encode_ic::<f64>(&[400.0, 0.0, 900.0, 800.0, 2000.0], &[800.0; 5], 3, 2).unwrap();
        let v: Vec<f64> = planes.iter().map(|p| p.get(0, 2, 1)).collect();
        assert_eq!(v, vec![0.5, 0.0, 1.125, 1.0, 1.5]);
        assert!(planes.iter().all(|p| p.values().iter().all(|&x| x == p.values()[0])));
        assert!(matches!(encode_ic::<f64>(&[1.0], &[0.0], 2, 2), Err(Error::Domain(_))));
    }
}
