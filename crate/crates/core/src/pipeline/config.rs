use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{AssemblyConfig, SplitName, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{Inputs, Mode, ModelConfig, TrainConfig};

/// Input representation of one image modality.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Raw,
    Closeup,
    /// Polar resampling around the sun (sky) or the site (satellite).
    Spin,
    CloseupSpin,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Raw, Variant::Closeup, Variant::Spin, Variant::CloseupSpin];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Closeup => "closeup",
            Variant::Spin => "spin",
            Variant::CloseupSpin => "closeup_spin",
        }
    }

    pub fn closeup(self) -> bool {
        matches!(self, Variant::Closeup | Variant::CloseupSpin)
    }

    pub fn spin(self) -> bool {
        matches!(self, Variant::Spin | Variant::CloseupSpin)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == norm)
            .ok_or_else(|| Error::config(format!("unknown input variant {s:?} (raw, closeup, spin, closeup_spin)")))
    }
}

fn default_split() -> SplitSpec {
    SplitSpec::new(2019)
}

/// Settings of the raw-to-samples stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Side of every processed frame.
    pub resolution: usize,
    pub sky_variant: Variant,
    pub sat_variant: Variant,
    /// Side of the unwarped sky grid before anti-aliased downscaling;
    /// defaults to twice the resolution.
    pub sky_unwarp_size: Option<usize>,
    pub satellite_extent_deg: f64,
    pub slot_period: i64,
    pub albedo_window_days: usize,
    pub assembly: AssemblyConfig,
    #[serde(default = "default_split")]
    pub split: SplitSpec,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            sky_variant: Variant::Raw,
            sat_variant: Variant::Raw,
            sky_unwarp_size: None,
            satellite_extent_deg: 2.2,
            slot_period: crate::cloudindex::DEFAULT_SLOT_PERIOD,
            albedo_window_days: crate::cloudindex::DEFAULT_WINDOW_DAYS,
            assembly: AssemblyConfig::default(),
            split: default_split(),
        }
    }
}

impl PreprocessConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = read_toml(path, "preprocess config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn unwarp_size(&self) -> usize {
        self.sky_unwarp_size.unwrap_or(2 * self.resolution)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if r < 8 || r % 2 != 0 {
            return Err(Error::config(format!("resolution {r} must be even and at least 8")));
        }
        let u = self.unwarp_size();
        if u < r || u % r != 0 {
            return Err(Error::config(format!("sky unwarp size {u} must be a multiple of the resolution {r}")));
        }
        if !(self.satellite_extent_deg > 0.0) {
            return Err(Error::config("satellite extent must be positive"));
        }
        if self.slot_period <= 0 || 86_400 % self.slot_period != 0 || self.albedo_window_days == 0 {
            return Err(Error::config("slot period must divide a day and the albedo window must be positive"));
        }
        self.assembly.validate().map_err(to_config)?;
        self.split.validate().map_err(to_config)
    }
}

pub(crate) fn to_config(e: Error) -> Error {
    match e {
        Error::Domain(m) | Error::Data(m) => Error::Config(m),
        other => other,
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1]
}

/// One training / evaluation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Processed dataset directory.
    pub data: PathBuf,
    /// Simulator output; when set, `data` is (re)built from it with the
    /// `preprocess` settings whenever it is missing or stale.
    #[serde(default)]
    pub raw: Option<PathBuf>,
    #[serde(default)]
    pub preprocess: Option<PreprocessConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// One training per seed; scores are averaged over them.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::config(format!("{what} {}: {e}", path.display())))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths are taken from its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_toml(path, "experiment config")?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.data);
        if let Some(p) = &mut self.raw {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.raw.is_some() && self.preprocess.is_none() {
            return Err(Error::config("a raw dataset needs a [preprocess] section"));
        }
        if let Some(p) = &self.preprocess {
            p.validate()?;
            self.check_dataset(p)?;
        }
        Ok(())
    }

    /// Model / dataset compatibility.
    pub fn check_dataset(&self, pre: &PreprocessConfig) -> Result<()> {
        let m = &self.model;
        let a = &pre.assembly;
        if m.input_resolution != pre.resolution {
            return Err(Error::config(format!(
                "model resolution {} differs from the dataset resolution {}",
                m.input_resolution, pre.resolution
            )));
        }
        if m.horizons != a.horizons.len() {
            return Err(Error::config(format!("model has {} horizons, dataset {}", m.horizons, a.horizons.len())));
        }
        if m.bin_count != a.bins {
            return Err(Error::config(format!("model has {} bins, dataset {}", m.bin_count, a.bins)));
        }
        if (m.inputs.sky && m.frames != a.sky_frames) || (m.inputs.satellite && m.frames != a.sat_frames) {
            return Err(Error::config("model frame count differs from the dataset sequences"));
        }
        Ok(())
    }

    /// Copy with a single seed driving both initialisation and shuffling.
    pub fn for_seed(&self, seed: u64) -> (ModelConfig, TrainConfig) {
        let model = ModelConfig { seed, ..self.model.clone() };
        let train = TrainConfig { seed, ..self.train.clone() };
        (model, train)
    }
}

/// One cell of an experiment grid; unset fields keep the base values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    pub name: String,
    #[serde(default)]
    pub inputs: Option<Inputs>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub sky_variant: Option<Variant>,
    #[serde(default)]
    pub sat_variant: Option<Variant>,
}

fn default_report_split() -> SplitName {
    SplitName::Test
}

/// A matrix of experiment cells sharing a base configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_report_split")]
    pub split: SplitName,
    pub base: ExperimentConfig,
    pub cells: Vec<GridCell>,
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("grid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = read_toml(path, "grid config")?;
        cfg.base.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::config("grid has no cells"));
        }
        let mut names = std::collections::BTreeSet::new();
        for c in &self.cells {
            let valid_name = !c.name.is_empty() && c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_+".contains(ch));
            if !valid_name || !names.insert(c.name.as_str()) {
                return Err(Error::config(format!("cell names must be unique and filename-safe, got {:?}", c.name)));
            }
            if (c.sky_variant.is_some() || c.sat_variant.is_some()) && self.base.raw.is_none() {
                return Err(Error::config(format!("cell {} changes a variant but the base has no raw dataset", c.name)));
            }
            self.cell(c).validate()?;
        }
        Ok(())
    }

    /// Experiment of one cell. Cells with non-default variants get their
    /// own dataset directory next to the base one.
    pub fn cell(&self, c: &GridCell) -> ExperimentConfig {
        let mut e = self.base.clone();
        if let Some(i) = c.inputs {
            e.model.inputs = i;
        }
        if let Some(a) = c.alpha {
            e.model.alpha = a;
            if a > 0.0 {
                e.model.heads.cloud_map = true;
            }
        }
        if let Some(m) = c.mode {
            e.model.mode = m;
            match m {
                Mode::Deterministic => e.model.heads.scalar = true,
                Mode::Probabilistic => e.model.heads.distribution = true,
            }
        }
        if let Some(p) = &mut e.preprocess {
            let base = (p.sky_variant, p.sat_variant);
            p.sky_variant = c.sky_variant.unwrap_or(base.0);
            p.sat_variant = c.sat_variant.unwrap_or(base.1);
            let now = (p.sky_variant, p.sat_variant);
            if now != base {
                let stem = e.data.file_name().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
                e.data.set_file_name(format!("{stem}-{}-{}", now.0, now.1));
            }
        }
        e
    }
}
