use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{PreprocessConfig, Variant};
use crate::baselines::DEFAULT_ATTENUATION;
use crate::cloudindex::{cloud_index, AlbedoHistory};
use crate::dataset::{
    assemble, classify_days, parse_frame_name, read_shard, split, write_shard, FrameStore, GapReport, IrradianceSeries, Sample,
    SplitHistograms, SplitName, WeatherClass,
};
use crate::error::{Error, Result};
use crate::fgrid;
use crate::geometry::sun_at;
use crate::imaging::{center_closeup, clamp_center, downscale, spin_transform, undistort_sky, FisheyeCalibration};
use crate::simulator::{DatasetLayout, SatelliteView, SimulationManifest, SATELLITE_STREAM, SKY_STREAM};
use crate::Grid;

/// Paths of a processed dataset directory.
#[derive(Debug, Clone)]
pub struct ProcessedLayout {
    pub root: PathBuf,
}

impl ProcessedLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn sky(&self) -> PathBuf {
        self.root.join(SKY_STREAM)
    }

    pub fn sat(&self) -> PathBuf {
        self.root.join(SATELLITE_STREAM)
    }

    pub fn irradiance(&self) -> PathBuf {
        self.root.join("irradiance.csv")
    }

    pub fn shards(&self) -> PathBuf {
        self.root.join("shards")
    }

    pub fn histograms(&self) -> PathBuf {
        self.root.join("histograms")
    }

    /// Sidecar of the sky stream: lens, unwarp grid and polar centres.
    pub fn sky_sidecar(&self) -> PathBuf {
        self.root.join("sky_geometry.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("preprocess.json")
    }
}

/// Cloud-index ingestion tallies.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudIndexStats {
    pub maps: usize,
    /// Frames without albedo history for their slot (no map written).
    pub without_history: usize,
    pub degenerate: usize,
    pub below_albedo: usize,
    pub above_one: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkyGeometry {
    pub variant: Variant,
    pub calibration: FisheyeCalibration,
    pub unwarp_size: usize,
    pub unwarp_half_extent_m: f64,
    /// Polar centre of every frame (timestamp, x, y) for polar variants.
    pub centres: Vec<(i64, f64, f64)>,
}

/// Summary written next to the processed data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessManifest {
    pub config: PreprocessConfig,
    pub satellite_view: SatelliteView,
    pub cloud_height: f64,
    pub attenuation: f64,
    pub sky_frames: usize,
    pub sat_frames: usize,
    pub cloud_index: CloudIndexStats,
    pub gaps: GapReport,
    pub split_sizes: BTreeMap<String, usize>,
    pub weather: BTreeMap<NaiveDate, WeatherClass>,
}

impl PreprocessManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn frame_files(dir: &Path, stream: &str) -> Result<Vec<(i64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(ts) = entry.file_name().to_str().and_then(|n| parse_frame_name(n, stream)) {
            out.push((ts, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

fn reset_dir(path: &Path) -> Result<()> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Applies an input representation; `center` is the point of interest in
/// pixel coordinates of `img`. Returns the frame and the polar centre used.
pub fn apply_variant(img: &Grid, variant: Variant, center: (f64, f64)) -> Result<(Grid, Option<(f64, f64)>)> {
    let (w, h) = (img.width(), img.height());
    let (mut g, mut c) = (img.clone(), center);
    if variant.closeup() {
        g = center_closeup(&g)?;
        let (mx, my) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        c = (mx + 2.0 * (c.0 - mx), my + 2.0 * (c.1 - my));
    }
    if variant.spin() {
        let c = clamp_center(w, h, c);
        return Ok((spin_transform(&g, c, h, w)?, Some(c)));
    }
    Ok((g, None))
}

fn factor(from: usize, to: usize, what: &str) -> Result<usize> {
    if from < to || from % to != 0 {
        return Err(Error::data(format!("{what} of {from} px cannot be reduced to {to} px")));
    }
    Ok(from / to)
}

fn reduce(img: Grid, f: usize) -> Result<Grid> {
    if f == 1 {
        Ok(img)
    } else {
        downscale(&img, f)
    }
}

/// Sun position in pixels of the unwarped sky grid of side `size`.
pub fn sun_pixel(cal: &FisheyeCalibration, size: usize, site: crate::geometry::Site, ts: i64) -> Result<(f64, f64)> {
    let sun = sun_at(site, ts as f64)?;
    let d = cal.assumed_cloud_height * sun.zenith.min(89.0).to_radians().tan();
    let a = sun.azimuth.to_radians();
    Ok(cal.unwarp_geometry(size).to_pixel(d * a.sin(), d * a.cos()))
}

fn process_sky(raw: &Path, cfg: &PreprocessConfig, cal: &FisheyeCalibration) -> Result<(FrameStore, SkyGeometry)> {
    let files = frame_files(raw, SKY_STREAM)?;
    let (res, unwarp) = (cfg.resolution, cfg.unwarp_size());
    let f = factor(unwarp, res, "unwarped sky grid")?;
    let site = cfg.assembly.site;
    let frames = files
        .par_iter()
        .map(|(ts, path)| {
            let raw = fgrid::load(path)?;
            let g = reduce(undistort_sky(&raw, cal, unwarp)?, f)?;
            let (g, c) = apply_variant(&g, cfg.sky_variant, sun_pixel(cal, res, site, *ts)?)?;
            Ok((*ts, g, c))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut store = FrameStore::new(SKY_STREAM);
    let mut centres = Vec::new();
    for (ts, g, c) in frames {
        if let Some((x, y)) = c {
            centres.push((ts, x, y));
        }
        store.insert(ts, g);
    }
    let geometry = SkyGeometry {
        variant: cfg.sky_variant,
        calibration: cal.clone(),
        unwarp_size: unwarp,
        unwarp_half_extent_m: cal.unwarp_half_extent(),
        centres,
    };
    Ok((store, geometry))
}

fn process_satellite(raw: &Path, cfg: &PreprocessConfig) -> Result<(FrameStore, CloudIndexStats)> {
    let files = frame_files(raw, SATELLITE_STREAM)?;
    let res = cfg.resolution;
    let frames = files
        .par_iter()
        .map(|(ts, path)| {
            let g = fgrid::load(path)?;
            let f = factor(g.width(), res, "satellite frame")?;
            if g.height() != g.width() {
                return Err(Error::data(format!("satellite frame {} is not square", path.display())));
            }
            Ok((*ts, reduce(g, f)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hist = AlbedoHistory::<f32>::new(cfg.slot_period, cfg.albedo_window_days)?;
    let mut stats = CloudIndexStats::default();
    let mut ci_frames = Vec::new();
    for (ts, g) in frames {
        if hist.frames_in_slot(hist.slot_of(ts)) == 0 {
            stats.without_history += 1;
        } else {
            let r = cloud_index(&g, &hist, ts)?;
            stats.maps += 1;
            stats.degenerate += r.degenerate as usize;
            stats.below_albedo += r.below_albedo;
            stats.above_one += r.above_one;
            ci_frames.push((ts, r.map));
        }
        hist.update(&g, ts)?;
    }
    let centre = ((res as f64 - 1.0) / 2.0, (res as f64 - 1.0) / 2.0);
    let processed = ci_frames
        .into_par_iter()
        .map(|(ts, m)| Ok((ts, apply_variant(&m, cfg.sat_variant, centre)?.0)))
        .collect::<Result<Vec<_>>>()?;
    let mut store = FrameStore::new(SATELLITE_STREAM);
    for (ts, g) in processed {
        store.insert(ts, g);
    }
    Ok((store, stats))
}

/// Turns a simulator (or compatible) directory into processed frame
/// stores, split shards and histograms under `out`.
///
/// Sky frames are unwarped, downscaled and transformed to the configured
/// variant. Satellite frames are downscaled and converted to cloud index
/// against the albedo minimum of the preceding days, then transformed.
/// Re-running with the same inputs rewrites identical files.
pub fn preprocess(raw: &Path, cfg: &PreprocessConfig, out: &Path) -> Result<PreprocessManifest> {
    cfg.validate()?;
    let src = DatasetLayout::new(raw);
    let cal_path = src.calibration();
    let cal_text = fs::read_to_string(&cal_path).map_err(|e| Error::io(&cal_path, e))?;
    let cal: FisheyeCalibration = serde_json::from_str(&cal_text).map_err(|e| Error::data(format!("{}: {e}", cal_path.display())))?;
    cal.validate()?;
    let site = cfg.assembly.site;
    let irr = IrradianceSeries::load(&src.irradiance(), &site)?;
    let attenuation = match SimulationManifest::load(&src.manifest()) {
        Ok(m) => m.config.attenuation,
        Err(_) => DEFAULT_ATTENUATION,
    };

    let (sky, sky_geometry) = process_sky(&src.stream_dir(SKY_STREAM), cfg, &cal)?;
    let (sat, ci_stats) = process_satellite(&src.stream_dir(SATELLITE_STREAM), cfg)?;
    log::info!("processed {} sky frames and {} cloud-index maps", sky.len(), sat.len());

    let layout = ProcessedLayout::new(out);
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for dir in [layout.sky(), layout.sat(), layout.shards(), layout.histograms()] {
        reset_dir(&dir)?;
    }
    sky.save_dir(&layout.sky())?;
    sat.save_dir(&layout.sat())?;
    write_json(&layout.sky_sidecar(), &sky_geometry)?;
    irr.save(&layout.irradiance())?;

    let (samples, gaps) = assemble(&sky, &sat, &irr, &cfg.assembly)?;
    log::info!("assembled {} samples from {} candidate times", gaps.emitted, gaps.candidates);
    let splits = split(samples, &cfg.split)?;
    let mut split_sizes = BTreeMap::new();
    for name in SplitName::ALL {
        let part = splits.get(name);
        write_shard(&layout.shards(), name.as_str(), part)?;
        SplitHistograms::new(part, cfg.assembly.bin_range, cfg.assembly.bins)
            .save(&layout.histograms().join(format!("{name}.csv")), cfg.assembly.bin_range)?;
        split_sizes.insert(name.to_string(), part.len());
    }
    split_sizes.insert("unassigned".into(), splits.unassigned);

    let manifest = PreprocessManifest {
        config: cfg.clone(),
        satellite_view: SatelliteView {
            pixels: cfg.resolution,
            extent_deg: cfg.satellite_extent_deg,
            latitude: site.latitude,
        },
        cloud_height: cal.assumed_cloud_height,
        attenuation,
        sky_frames: sky.len(),
        sat_frames: sat.len(),
        cloud_index: ci_stats,
        gaps,
        split_sizes,
        weather: classify_days(&irr, &cfg.assembly.thresholds),
    };
    write_json(&layout.manifest(), &manifest)?;
    Ok(manifest)
}

/// Samples of one split of a processed dataset.
pub fn load_split(data: &Path, name: SplitName) -> Result<Vec<Sample>> {
    read_shard(&ProcessedLayout::new(data).shards(), name.as_str())
}
