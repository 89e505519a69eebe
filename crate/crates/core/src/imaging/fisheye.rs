use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::scalar::Scalar;

/// Lens model of an all-sky camera.
///
/// Image axes: `x` grows to the east, `y` grows to the south, so that the
/// raw frame and the unwarped cloud-plane grid share the map orientation
/// (north up, east right).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisheyeCalibration {
    /// Optical centre in raw pixel coordinates (pixel centres at integers).
    pub optical_center: (f64, f64),
    /// `(view zenith in degrees, radial distance in pixels)` knots, strictly increasing.
    pub radius_per_zenith: Vec<(f64, f64)>,
    /// Height of the cloud plane used for unwarping, in metres.
    pub assumed_cloud_height: f64,
    /// View zenith reached at the edge midpoints of the unwarped grid.
    #[serde(default = "default_unwarp_zenith")]
    pub unwarp_max_zenith: f64,
}

fn default_unwarp_zenith() -> f64 {
    80.0
}

impl FisheyeCalibration {
    /// Equidistant lens (`r = r90 * zenith / 90`) tabulated every 5 degrees.
    pub fn equidistant(size: usize, cloud_height: f64) -> Self {
        let c = (size as f64 - 1.0) / 2.0;
        let r90 = c;
        let radius_per_zenith = (0..=18).map(|i| (5.0 * i as f64, r90 * i as f64 / 18.0)).collect();
        Self {
            optical_center: (c, c),
            radius_per_zenith,
            assumed_cloud_height: cloud_height,
            unwarp_max_zenith: default_unwarp_zenith(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.radius_per_zenith;
        if t.len() < 2 {
            return Err(Error::domain("fisheye table needs at least two knots"));
        }
        if t.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1)) {
            return Err(Error::domain("fisheye zenith/radius table must be strictly increasing"));
        }
        if t[0].0 < 0.0 || t.last().unwrap().0 > 90.0 {
            return Err(Error::domain("fisheye table zenith must lie in [0, 90]"));
        }
        if !(self.assumed_cloud_height > 0.0) {
            return Err(Error::domain("assumed cloud height must be positive"));
        }
        if !(self.unwarp_max_zenith > 0.0 && self.unwarp_max_zenith < 89.0) {
            return Err(Error::domain("unwarp zenith must lie in (0, 89) degrees"));
        }
        Ok(())
    }

    pub fn max_zenith(&self) -> f64 {
        self.radius_per_zenith.last().map_or(0.0, |k| k.0)
    }

    /// Radial pixel distance for a view zenith, `None` beyond the table.
    pub fn radius_at(&self, zenith_deg: f64) -> Option<f64> {
        interp(&self.radius_per_zenith, zenith_deg, |k| k.0, |k| k.1)
    }

    /// View zenith for a radial pixel distance, `None` beyond the table.
    pub fn zenith_at(&self, radius: f64) -> Option<f64> {
        interp(&self.radius_per_zenith, radius, |k| k.1, |k| k.0)
    }

    /// Raw pixel position of the view direction (zenith, azimuth clockwise from north).
    pub fn project(&self, zenith_deg: f64, azimuth_deg: f64) -> Option<(f64, f64)> {
        let r = self.radius_at(zenith_deg)?;
        let a = azimuth_deg.to_radians();
        Some((self.optical_center.0 + r * a.sin(), self.optical_center.1 - r * a.cos()))
    }

    /// Half width in metres of the cloud-plane area covered by the unwarped grid.
    pub fn unwarp_half_extent(&self) -> f64 {
        self.assumed_cloud_height * self.unwarp_max_zenith.to_radians().tan()
    }

    pub fn unwarp_geometry(&self, out_size: usize) -> PlaneGrid {
        PlaneGrid {
            size: out_size,
            half_extent: self.unwarp_half_extent(),
        }
    }
}

fn interp<K>(table: &[K], v: f64, key: impl Fn(&K) -> f64, val: impl Fn(&K) -> f64) -> Option<f64> {
    let first = table.first()?;
    if !(v >= key(first)) || v > key(table.last()?) {
        return None;
    }
    let i = table.partition_point(|k| key(k) < v).max(1);
    let (a, b) = (&table[i - 1], &table[i]);
    let t = (v - key(a)) / (key(b) - key(a));
    Some(val(a) + t * (val(b) - val(a)))
}

/// Square horizontal grid centred on the site: pixel centres span
/// `[-half_extent, half_extent]` metres east/north.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneGrid {
    pub size: usize,
    pub half_extent: f64,
}

impl PlaneGrid {
    fn scale(&self) -> f64 {
        (self.size as f64 - 1.0) / 2.0
    }

    /// (east, north) metres of a pixel centre.
    pub fn to_plane(&self, px: f64, py: f64) -> (f64, f64) {
        let s = self.scale();
        ((px - s) / s * self.half_extent, (s - py) / s * self.half_extent)
    }

    pub fn to_pixel(&self, east: f64, north: f64) -> (f64, f64) {
        let s = self.scale();
        (s + east / self.half_extent * s, s - north / self.half_extent * s)
    }
}

/// Reprojects a raw fisheye frame onto a regular grid on the cloud plane.
///
/// Each output pixel is traced back to its view ray (inverse mapping) and
/// sampled bilinearly in the raw frame. Pixels whose ray falls outside the
/// calibrated fisheye circle are masked.
pub fn undistort_sky<T: Scalar>(raw: &Grid2D<T>, cal: &FisheyeCalibration, out_size: usize) -> Result<Grid2D<T>> {
    cal.validate()?;
    if out_size < 8 {
        return Err(Error::domain(format!("unwarp size {out_size} below 8")));
    }
    let (cx, cy) = cal.optical_center;
    if !(cx >= 0.0 && cy >= 0.0 && cx <= (raw.width() - 1) as f64 && cy <= (raw.height() - 1) as f64) {
        return Err(Error::domain(format!("optical centre ({cx}, {cy}) outside the raw image")));
    }
    let plane = cal.unwarp_geometry(out_size);
    let h = cal.assumed_cloud_height;
    let n = out_size * out_size;
    let mut values = vec![T::zero(); n * raw.channels()];
    let mut mask = vec![false; n];
    for py in 0..out_size {
        for px in 0..out_size {
            let (e, nn) = plane.to_plane(px as f64, py as f64);
            let zen = (e.hypot(nn) / h).atan().to_degrees();
            let az = e.atan2(nn).to_degrees();
            let Some((u, v)) = cal.project(zen, az) else { continue };
            let i = py * out_size + px;
            let mut ok = true;
            for c in 0..raw.channels() {
                match raw.sample_bilinear(c, T::c(u), T::c(v)) {
                    Some(s) => values[c * n + i] = s,
                    None => ok = false,
                }
            }
            mask[i] = ok;
        }
    }
    let (lo, hi) = raw.value_range();
    Grid2D::new(out_size, out_size, raw.channels(), values, (lo, hi))?.with_mask(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cal(size: usize) -> FisheyeCalibration {
        FisheyeCalibration::equidistant(size, 2000.0)
    }

    #[test]
    fn table_interpolation() {
        let c = cal(65);
        assert_eq!(c.radius_at(0.0), Some(0.0));
        assert!((c.radius_at(45.0).unwrap() - 16.0).abs() < 1e-12);
        assert!((c.zenith_at(16.0).unwrap() - 45.0).abs() < 1e-12);
        assert_eq!(c.radius_at(91.0), None);
    }

    #[test]
    fn validation() {
        let mut c = cal(33);
        c.radius_per_zenith[3].1 = 0.0;
        assert!(c.validate().is_err());
        let mut c = cal(33);
        c.assumed_cloud_height = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn constant_image_stays_constant() {
        let raw = Grid2D::<f64>::filled(65, 65, 1, 0.42);
        let out = undistort_sky(&raw, &cal(65), 32).unwrap();
        let mut valid = 0;
        for y in 0..32 {
            for x in 0..32 {
                if out.is_valid(x, y) {
                    valid += 1;
                    assert!((out.get(0, x, y) - 0.42).abs() < 1e-12);
                }
            }
        }
        assert!(valid > 900);
    }

    #[test]
    fn centre_dot_maps_to_grid_centre() {
        let raw = Grid2D::<f64>::from_fn(65, 65, |x, y| if x == 32 && y == 32 { 1.0 } else { 0.0 });
        let out = undistort_sky(&raw, &cal(65), 33).unwrap();
        let (mut best, mut at) = (0.0, (0, 0));
        for y in 0..33 {
            for x in 0..33 {
                if out.get(0, x, y) > best {
                    best = out.get(0, x, y);
                    at = (x, y);
                }
            }
        }
        assert_eq!(at, (16, 16));
        assert!((best - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dot_at_sixty_degrees_follows_ray_projection() {
        // Independent oracle: a ray at zenith 60 deg, azimuth 90 deg (east)
        // meets the plane at h*tan(60) metres east of the site.
        let c = cal(129);
        let (u, v) = c.project(60.0, 90.0).unwrap();
        assert!((u - (64.0 + 64.0 * 60.0 / 90.0)).abs() < 1e-9 && (v - 64.0).abs() < 1e-9);
        let raw = Grid2D::<f64>::from_fn(129, 129, |x, y| {
            let d2 = (x as f64 - u).powi(2) + (y as f64 - v).powi(2);
            (-d2 / 2.0).exp()
        });
        let out = undistort_sky(&raw, &c, 129).unwrap();
        let east = 2000.0 * 60f64.to_radians().tan();
        let half = 2000.0 * 80f64.to_radians().tan();
        let expect_x = 64.0 + east / half * 64.0;
        let (mut best, mut at) = (0.0, 0usize);
        for x in 0..129 {
            if out.get(0, x, 64) > best {
                best = out.get(0, x, 64);
                at = x;
            }
        }
        assert!((at as f64 - expect_x).abs() <= 1.0, "peak at {at}, expected {expect_x:.2}");
    }

    #[test]
    fn centre_outside_image_is_error() {
        let raw = Grid2D::<f64>::filled(16, 16, 1, 0.0);
        let mut c = cal(16);
        c.optical_center = (40.0, 8.0);
        assert!(matches!(undistort_sky(&raw, &c, 16), Err(Error::Domain(_))));
        assert!(undistort_sky(&raw, &cal(16), 4).is_err());
    }
}
