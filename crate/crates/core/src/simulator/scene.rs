use serde::{Deserialize, Serialize};

use super::field::SpectralField;
use crate::dataset::WeatherClass;
use crate::error::{Error, Result};
use crate::geometry::{clear_sky_ghi, sun_at, Site, SolarPosition};
use crate::imaging::FisheyeCalibration;

pub const CLOUD_ALBEDO: f64 = 0.9;
pub const SKY_BRIGHTNESS: f64 = 0.3;
pub const CLOUD_BRIGHTNESS: f64 = 0.85;
pub const GLARE_PEAK: f64 = 0.6;
pub const GLARE_RADIUS_DEG: f64 = 5.0;

pub const SKY_CADENCE: i64 = 120;
pub const SATELLITE_CADENCE: i64 = 300;
pub const IRRADIANCE_CADENCE: i64 = 60;

const EARTH_RADIUS: f64 = 6_371_000.0;
/// Rays flatter than this are clipped so the layer intersection stays finite.
const MAX_RAY_ZENITH: f64 = 88.0;

/// Opacity of the cloud layer before advection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CloudLayer {
    /// Spatially constant opacity (0 for a clear sky).
    Uniform { opacity: f64 },
    /// Random field `g` mapped to `clamp(0.5 + (g - threshold) / softness, 0, 1)`.
    Broken {
        seed: u64,
        modes: usize,
        wavelengths: (f64, f64),
        threshold: f64,
        softness: f64,
    },
    /// `clamp(mean + spread * g, 0.7, 1)`.
    Overcast {
        seed: u64,
        modes: usize,
        wavelengths: (f64, f64),
        mean: f64,
        spread: f64,
    },
    /// Fully opaque half plane `{p : p . n > offset}` with `n` at `normal_deg`
    /// clockwise from north.
    Edge { normal_deg: f64, offset: f64 },
}

/// Smooth ground albedo `mean + contrast * tanh(g / 1.5)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlbedoParams {
    pub seed: u64,
    pub mean: f64,
    pub contrast: f64,
    pub wavelengths: (f64, f64),
}

impl Default for AlbedoParams {
    fn default() -> Self {
        Self {
            seed: 0,
            mean: 0.2,
            contrast: 0.15,
            wavelengths: (5_000.0, 30_000.0),
        }
    }
}

/// Footprint of the satellite frame: a square of `extent_deg` in latitude
/// and longitude centred on the site, north up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SatelliteView {
    pub pixels: usize,
    pub extent_deg: f64,
    pub latitude: f64,
}

impl SatelliteView {
    pub fn with_pixels(self, pixels: usize) -> Self {
        Self { pixels, ..self }
    }

    /// Extent in metres (east, north).
    pub fn extent_m(&self) -> (f64, f64) {
        let d = self.extent_deg.to_radians() * EARTH_RADIUS;
        (d * self.latitude.to_radians().cos(), d)
    }

    /// Pixel size in metres (east, north).
    pub fn pixel_size(&self) -> (f64, f64) {
        let (w, h) = self.extent_m();
        (w / self.pixels as f64, h / self.pixels as f64)
    }

    /// Ground position (east, north) of a pixel centre relative to the site.
    pub fn to_plane(&self, px: f64, py: f64) -> (f64, f64) {
        let (w, h) = self.extent_m();
        let n = self.pixels as f64;
        (((px + 0.5) / n - 0.5) * w, (0.5 - (py + 0.5) / n) * h)
    }

    pub fn to_pixel(&self, east: f64, north: f64) -> (f64, f64) {
        let (w, h) = self.extent_m();
        let n = self.pixels as f64;
        ((east / w + 0.5) * n - 0.5, (0.5 - north / h) * n - 0.5)
    }

    pub fn axes(&self) -> (Vec<f64>, Vec<f64>) {
        let xs = (0..self.pixels).map(|i| self.to_plane(i as f64, 0.0).0).collect();
        let ys = (0..self.pixels).map(|j| self.to_plane(0.0, j as f64).1).collect();
        (xs, ys)
    }
}

/// Serializable description of one synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneParams {
    pub seed: u64,
    pub site: Site,
    pub regime: WeatherClass,
    pub cloud: CloudLayer,
    pub albedo: AlbedoParams,
    /// Advection velocity (east, north) in m/s.
    pub velocity: (f64, f64),
    /// Opacity drift per second, added before clamping.
    pub growth_rate: f64,
    pub cloud_height: f64,
    pub attenuation: f64,
    /// Reference instant (unix seconds) of the unadvected layer.
    pub t0: i64,
    pub duration: i64,
    pub satellite: SatelliteView,
    pub sky_pixels: usize,
}

/// A scene with its random fields realised.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    params: SceneParams,
    albedo: SpectralField,
    cloud: Option<SpectralField>,
}

const ALBEDO_MODES: usize = 48;

impl SceneSpec {
    pub fn new(params: SceneParams) -> Result<Self> {
        params.site.validate()?;
        let p = &params;
        if p.duration <= 0 {
            return Err(Error::config("scene duration must be positive"));
        }
        if !(p.cloud_height > 0.0) || !(0.0..=1.0).contains(&p.attenuation) {
            return Err(Error::config("cloud height must be positive and attenuation in [0, 1]"));
        }
        if p.satellite.pixels < 4 || !(p.satellite.extent_deg > 0.0) || p.sky_pixels < 8 {
            return Err(Error::config("satellite and sky frames need at least 4 and 8 pixels"));
        }
        if p.albedo.mean - p.albedo.contrast.abs() < 0.05 - 1e-12 || p.albedo.mean + p.albedo.contrast.abs() > 0.35 + 1e-12 {
            return Err(Error::config("albedo must stay within [0.05, 0.35]"));
        }
        if !p.velocity.0.is_finite() || !p.velocity.1.is_finite() || !p.growth_rate.is_finite() {
            return Err(Error::config("velocity and growth rate must be finite"));
        }
        let band = |w: (f64, f64)| {
            if w.0 > 0.0 && w.1 >= w.0 {
                Ok(())
            } else {
                Err(Error::config(format!("invalid wavelength band {w:?}")))
            }
        };
        band(p.albedo.wavelengths)?;
        let albedo = SpectralField::new(p.albedo.seed, ALBEDO_MODES, p.albedo.wavelengths.0, p.albedo.wavelengths.1);
        let cloud = match &p.cloud {
            CloudLayer::Uniform { opacity } => {
                if !(0.0..=1.0).contains(opacity) {
                    return Err(Error::config("uniform opacity must lie in [0, 1]"));
                }
                None
            }
            CloudLayer::Broken { seed, modes, wavelengths, softness, .. } => {
                band(*wavelengths)?;
                if !(*softness > 0.0) {
                    return Err(Error::config("broken-sky softness must be positive"));
                }
                Some(SpectralField::new(*seed, *modes, wavelengths.0, wavelengths.1))
            }
            CloudLayer::Overcast { seed, modes, wavelengths, .. } => {
                band(*wavelengths)?;
                Some(SpectralField::new(*seed, *modes, wavelengths.0, wavelengths.1))
            }
            CloudLayer::Edge { .. } => None,
        };
        Ok(Self { params, albedo, cloud })
    }

    pub fn params(&self) -> &SceneParams {
        &self.params
    }

    pub fn site(&self) -> Site {
        self.params.site
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        let p = &self.params;
        if t >= p.t0 as f64 && t <= (p.t0 + p.duration) as f64 {
            Ok(())
        } else {
            Err(Error::domain(format!("t = {t} outside scene window [{}, {}]", p.t0, p.t0 + p.duration)))
        }
    }

    /// Translation of the layer since `t0`.
    pub fn displacement(&self, t: f64) -> (f64, f64) {
        let dt = t - self.params.t0 as f64;
        (self.params.velocity.0 * dt, self.params.velocity.1 * dt)
    }

    pub(crate) fn cloud_field(&self) -> Option<&SpectralField> {
        self.cloud.as_ref()
    }

    pub(crate) fn albedo_field(&self) -> &SpectralField {
        &self.albedo
    }

    /// Maps the raw layer value (field sample, or `0` for non-random layers)
    /// at an unadvected position to opacity, including growth.
    pub(crate) fn opacity_from(&self, g: f64, x: f64, y: f64, t: f64) -> f64 {
        let base = match &self.params.cloud {
            CloudLayer::Uniform { opacity } => *opacity,
            CloudLayer::Broken { threshold, softness, .. } => (0.5 + (g - threshold) / softness).clamp(0.0, 1.0),
            CloudLayer::Overcast { mean, spread, .. } => (mean + spread * g).clamp(0.7, 1.0),
            CloudLayer::Edge { normal_deg, offset } => {
                let a = normal_deg.to_radians();
                if x * a.sin() + y * a.cos() > *offset {
                    1.0
                } else {
                    0.0
                }
            }
        };
        let growth = self.params.growth_rate * (t - self.params.t0 as f64);
        (base + growth).clamp(0.0, 1.0)
    }

    /// Cloud opacity at ground position (east, north) metres from the site.
    pub fn opacity(&self, east: f64, north: f64, t: f64) -> f64 {
        let (dx, dy) = self.displacement(t);
        let (x, y) = (east - dx, north - dy);
        let g = self.cloud.as_ref().map_or(0.0, |f| f.value(x, y));
        self.opacity_from(g, x, y, t)
    }

    pub fn albedo(&self, east: f64, north: f64) -> f64 {
        self.albedo_from(self.albedo.value(east, north))
    }

    pub(crate) fn albedo_from(&self, g: f64) -> f64 {
        let a = &self.params.albedo;
        a.mean + a.contrast * (g / 1.5).tanh()
    }

    pub fn sun(&self, t: f64) -> Result<SolarPosition> {
        sun_at(self.params.site, t)
    }

    /// Horizontal offset (east, north) at which a view ray meets the layer.
    pub fn ray_point(&self, zenith_deg: f64, azimuth_deg: f64) -> (f64, f64) {
        let d = self.params.cloud_height * zenith_deg.min(MAX_RAY_ZENITH).to_radians().tan();
        let a = azimuth_deg.to_radians();
        (d * a.sin(), d * a.cos())
    }

    /// Where the sun ray crosses the layer, `None` with the sun down.
    pub fn sun_ray_point(&self, t: f64) -> Result<Option<(f64, f64)>> {
        let s = self.sun(t)?;
        Ok((s.zenith < 90.0).then(|| self.ray_point(s.zenith, s.azimuth)))
    }

    /// Opacity along the sun ray (0 with the sun below the horizon).
    pub fn tau_sun(&self, t: f64) -> Result<f64> {
        Ok(match self.sun_ray_point(t)? {
            Some((e, n)) => self.opacity(e, n, t),
            None => 0.0,
        })
    }

    /// Lens of the simulated camera, matching the rendered sky frames.
    pub fn calibration(&self) -> FisheyeCalibration {
        FisheyeCalibration::equidistant(self.params.sky_pixels, self.params.cloud_height)
    }

    /// Instantaneous GHI: `clear * (1 - k * tau_sun)`.
    pub fn irradiance(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let clear = clear_sky_ghi(self.sun(t)?).ghi_clear;
        if clear == 0.0 {
            return Ok(0.0);
        }
        Ok(clear * (1.0 - self.params.attenuation * self.tau_sun(t)?))
    }

    /// GHI and clear-sky averages over the minute ending at `t` (six
    /// samples at 10 s spacing).
    pub fn minute_average(&self, t: i64) -> Result<(f64, f64)> {
        let mut g = 0.0;
        let mut c = 0.0;
        for k in 0..6 {
            let s = (t - 55 + 10 * k) as f64;
            let s = s.max(self.params.t0 as f64);
            g += self.irradiance(s)?;
            c += clear_sky_ghi(self.sun(s)?).ghi_clear;
        }
        Ok((g / 6.0, c / 6.0))
    }
}
