//! Synthetic ground truth: an advecting single cloud layer rendered into
//! satellite and all-sky camera frames plus a consistent pyranometer trace.

mod field;
mod render;
mod scene;

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use field::{PointSet, SpectralField};
pub use render::{render_satellite, render_sky, SceneRenderer};
pub use scene::{
    AlbedoParams, CloudLayer, SatelliteView, SceneParams, SceneSpec, CLOUD_ALBEDO, CLOUD_BRIGHTNESS,
    IRRADIANCE_CADENCE, SATELLITE_CADENCE, SKY_BRIGHTNESS, SKY_CADENCE,
};

use crate::dataset::{classify_day, IrradianceSeries, WeatherClass, WeatherThresholds};
use crate::error::{Error, Result};
use crate::fgrid;
use crate::geometry::{sun_at, Site};
use crate::Grid;

pub const SKY_STREAM: &str = "sky";
pub const SATELLITE_STREAM: &str = "sat";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeChoice {
    ClearSky,
    BrokenSky,
    Overcast,
    /// Cycles clear, broken and overcast day by day.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Period {
    pub start: NaiveDate,
    pub days: u32,
    pub regime: RegimeChoice,
}

fn default_site() -> Site {
    Site::SIRTA
}

/// Dataset-level simulator settings, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub seed: u64,
    #[serde(default = "default_site")]
    pub site: Site,
    /// Side of the processed frames; the satellite renders at
    /// `resolution * satellite_oversample`.
    pub resolution: usize,
    pub satellite_oversample: usize,
    pub satellite_extent_deg: f64,
    pub sky_pixels: usize,
    pub cloud_height: f64,
    pub attenuation: f64,
    /// Clear, satellite-only days rendered before each period to seed the
    /// albedo history.
    pub history_days: u32,
    pub speed: (f64, f64),
    pub growth_per_hour: f64,
    pub cloud_modes: usize,
    pub cloud_wavelengths: (f64, f64),
    pub albedo: AlbedoParams,
    /// Frames are written while the solar zenith is at most this angle.
    pub max_frame_zenith: f64,
    pub thresholds: WeatherThresholds,
    pub periods: Vec<Period>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            site: Site::SIRTA,
            resolution: 128,
            satellite_oversample: 2,
            satellite_extent_deg: 2.2,
            sky_pixels: 256,
            cloud_height: 2000.0,
            attenuation: 0.75,
            history_days: 10,
            speed: (5.0, 15.0),
            growth_per_hour: 0.0,
            cloud_modes: 48,
            cloud_wavelengths: (15_000.0, 45_000.0),
            albedo: AlbedoParams::default(),
            max_frame_zenith: 85.0,
            thresholds: WeatherThresholds::default(),
            periods: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DayRole {
    /// Clear satellite frames only, for the albedo minimum.
    History,
    Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayPlan {
    pub date: NaiveDate,
    pub role: DayRole,
    pub scene: SceneParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    #[serde(flatten)]
    pub plan: DayPlan,
    /// Label assigned by the day classifier to the emitted trace.
    pub classified: Option<WeatherClass>,
    pub sky_frames: usize,
    pub satellite_frames: usize,
    pub irradiance_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationManifest {
    pub config: SimulationConfig,
    pub days: Vec<DayRecord>,
}

impl SimulationManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }
}

/// Frames and trace of one simulated day.
pub struct DayOutput {
    pub plan: DayPlan,
    pub sky: Vec<(i64, Grid)>,
    pub satellite: Vec<(i64, Grid)>,
    pub irradiance: IrradianceSeries,
    pub classified: Option<WeatherClass>,
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn day_start(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp()
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("simulation config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn satellite_pixels(&self) -> usize {
        self.resolution * self.satellite_oversample
    }

    pub fn satellite_view(&self) -> SatelliteView {
        SatelliteView {
            pixels: self.satellite_pixels(),
            extent_deg: self.satellite_extent_deg,
            latitude: self.site.latitude,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.site.validate().map_err(|e| Error::config(e.to_string()))?;
        if self.periods.is_empty() || self.periods.iter().any(|p| p.days == 0) {
            return Err(Error::config("simulation needs at least one period with a positive day count"));
        }
        if self.resolution < 8 || self.satellite_oversample < 1 || self.sky_pixels < 8 {
            return Err(Error::config("resolution and sky_pixels must be at least 8"));
        }
        if !(self.speed.0 >= 0.0 && self.speed.1 >= self.speed.0) {
            return Err(Error::config("speed range must be ordered and non-negative"));
        }
        if !(self.cloud_wavelengths.0 > 0.0 && self.cloud_wavelengths.1 >= self.cloud_wavelengths.0) || self.cloud_modes == 0 {
            return Err(Error::config("invalid cloud wavelength band or mode count"));
        }
        if !(self.max_frame_zenith > 0.0 && self.max_frame_zenith <= 90.0) {
            return Err(Error::config("max_frame_zenith must lie in (0, 90]"));
        }
        let mut seen = BTreeMap::new();
        for (i, p) in self.periods.iter().enumerate() {
            for d in 0..p.days {
                let date = p.start + Days::new(d as u64);
                if let Some(j) = seen.insert(date, i) {
                    return Err(Error::config(format!("periods {j} and {i} both contain {date}")));
                }
            }
        }
        // Realise the first day to surface parameter errors early.
        for plan in self.plan()?.iter().take(1) {
            SceneSpec::new(plan.scene.clone())?;
        }
        Ok(())
    }

    fn scene_params(&self, date: NaiveDate, regime: WeatherClass, role: DayRole) -> SceneParams {
        let t0 = day_start(date);
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, t0 as u64));
        let dir = rng.random_range(0.0..TAU);
        let speed = rng.random_range(self.speed.0..=self.speed.1);
        let field_seed = rng.random::<u64>();
        let cloud = match (role, regime) {
            (DayRole::History, _) | (_, WeatherClass::ClearSky) => CloudLayer::Uniform { opacity: 0.0 },
            (_, WeatherClass::BrokenSky) => CloudLayer::Broken {
                seed: field_seed,
                modes: self.cloud_modes,
                wavelengths: self.cloud_wavelengths,
                threshold: rng.random_range(-0.25..=0.25),
                softness: 0.8,
            },
            (_, WeatherClass::Overcast) => CloudLayer::Overcast {
                seed: field_seed,
                modes: self.cloud_modes,
                wavelengths: self.cloud_wavelengths,
                mean: rng.random_range(0.8..=0.9),
                spread: 0.06,
            },
        };
        SceneParams {
            seed: self.seed,
            site: self.site,
            regime,
            cloud,
            albedo: AlbedoParams {
                seed: mix(self.seed, 0xA1BE_D0),
                ..self.albedo.clone()
            },
            velocity: (speed * dir.sin(), speed * dir.cos()),
            growth_rate: self.growth_per_hour / 3600.0,
            cloud_height: self.cloud_height,
            attenuation: self.attenuation,
            t0,
            duration: 86_400,
            satellite: self.satellite_view(),
            sky_pixels: self.sky_pixels,
        }
    }

    /// Every simulated day in chronological order.
    pub fn plan(&self) -> Result<Vec<DayPlan>> {
        let mut days: BTreeMap<NaiveDate, (DayRole, WeatherClass)> = BTreeMap::new();
        for p in &self.periods {
            for d in 0..p.days {
                let regime = match p.regime {
                    RegimeChoice::ClearSky => WeatherClass::ClearSky,
                    RegimeChoice::BrokenSky => WeatherClass::BrokenSky,
                    RegimeChoice::Overcast => WeatherClass::Overcast,
                    RegimeChoice::Mixed => WeatherClass::ALL[d as usize % 3],
                };
                days.insert(p.start + Days::new(d as u64), (DayRole::Scene, regime));
            }
        }
        for p in &self.periods {
            for h in 1..=self.history_days {
                let date = p.start - Days::new(h as u64);
                days.entry(date).or_insert((DayRole::History, WeatherClass::ClearSky));
            }
        }
        Ok(days
            .into_iter()
            .map(|(date, (role, regime))| DayPlan {
                date,
                role,
                scene: self.scene_params(date, regime, role),
            })
            .collect())
    }

    /// Renders one planned day.
    pub fn simulate_day(&self, plan: &DayPlan) -> Result<DayOutput> {
        let scene = SceneSpec::new(plan.scene.clone())?;
        let renderer = SceneRenderer::new(&scene);
        let t0 = scene.params().t0;
        let daylight = |t: i64| -> Result<bool> { Ok(sun_at(self.site, t as f64)?.zenith <= self.max_frame_zenith) };
        let times = |step: i64| -> Result<Vec<i64>> {
            let mut v = Vec::new();
            for k in 0..86_400 / step {
                let t = t0 + k * step;
                if daylight(t)? {
                    v.push(t);
                }
            }
            Ok(v)
        };
        let satellite = times(SATELLITE_CADENCE)?
            .into_par_iter()
            .map(|t| Ok((t, renderer.satellite(t as f64)?)))
            .collect::<Result<Vec<_>>>()?;
        let mut irradiance = IrradianceSeries::new();
        let mut sky = Vec::new();
        let mut classified = None;
        if plan.role == DayRole::Scene {
            sky = times(SKY_CADENCE)?
                .into_par_iter()
                .map(|t| Ok((t, renderer.sky(t as f64)?)))
                .collect::<Result<Vec<_>>>()?;
            for k in 1..=86_400 / IRRADIANCE_CADENCE {
                let t = t0 + k * IRRADIANCE_CADENCE;
                let (ghi, clear) = scene.minute_average(t.min(t0 + 86_400))?;
                if clear > 0.0 {
                    irradiance.insert(t, ghi, clear);
                }
            }
            let (g, c): (Vec<f64>, Vec<f64>) = irradiance.iter().map(|(_, p)| (p.ghi, p.clear)).unzip();
            classified = classify_day(&g, &c, &self.thresholds).ok();
        }
        Ok(DayOutput {
            plan: plan.clone(),
            sky,
            satellite,
            irradiance,
            classified,
        })
    }
}

/// Paths of a simulator output directory.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn stream_dir(&self, stream: &str) -> PathBuf {
        self.root.join(stream)
    }

    pub fn irradiance(&self) -> PathBuf {
        self.root.join("irradiance.csv")
    }

    pub fn calibration(&self) -> PathBuf {
        self.root.join("calibration.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

pub fn frame_file_name(stream: &str, ts: i64) -> String {
    format!("{stream}_{ts}.fgrid")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Runs the simulator and writes the dataset layout under `out`.
pub fn simulate(cfg: &SimulationConfig, out: &Path) -> Result<SimulationManifest> {
    cfg.validate()?;
    let layout = DatasetLayout::new(out);
    for dir in [out.to_path_buf(), layout.stream_dir(SKY_STREAM), layout.stream_dir(SATELLITE_STREAM)] {
        create_dir(&dir)?;
    }
    let mut irradiance = IrradianceSeries::new();
    let mut days = Vec::new();
    for plan in cfg.plan()? {
        let day = cfg.simulate_day(&plan)?;
        for (stream, frames) in [(SKY_STREAM, &day.sky), (SATELLITE_STREAM, &day.satellite)] {
            let dir = layout.stream_dir(stream);
            for (t, g) in frames {
                fgrid::save(&dir.join(frame_file_name(stream, *t)), g)?;
            }
        }
        log::info!(
            "{} {:?}: {} sky, {} satellite frames, classified {:?}",
            plan.date,
            plan.role,
            day.sky.len(),
            day.satellite.len(),
            day.classified
        );
        days.push(DayRecord {
            plan: day.plan,
            classified: day.classified,
            sky_frames: day.sky.len(),
            satellite_frames: day.satellite.len(),
            irradiance_points: day.irradiance.len(),
        });
        irradiance.extend(day.irradiance);
    }
    irradiance.save(&layout.irradiance())?;
    let cal = crate::imaging::FisheyeCalibration::equidistant(cfg.sky_pixels, cfg.cloud_height);
    write_json(&layout.calibration(), &cal)?;
    let manifest = SimulationManifest { config: cfg.clone(), days };
    write_json(&layout.manifest(), &manifest)?;
    Ok(manifest)
}
