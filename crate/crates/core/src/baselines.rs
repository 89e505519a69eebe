//! Reference forecasters: persistence, smart persistence and cloud motion
//! vector (CMV) advection of cloud-index maps.

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::scalar::Scalar;

/// Default transmittance loss of a fully opaque cloud (`ghi = clear * (1 - k ci)`).
pub const DEFAULT_ATTENUATION: f64 = 0.75;

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineForecast<T> {
    /// Lead time in seconds.
    pub horizon: i64,
    /// Forecast GHI in W/m², finite and non-negative.
    pub ghi_hat: f64,
    pub advected_map: Option<Grid2D<T>>,
    /// Motion vector applied to the map, in pixels over the horizon.
    pub displacement: Option<(f64, f64)>,
}

impl<T> BaselineForecast<T> {
    fn scalar(horizon: i64, ghi_hat: f64) -> Self {
        Self {
            horizon,
            ghi_hat,
            advected_map: None,
            displacement: None,
        }
    }
}

fn check_irradiance(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::domain(format!("{name} must be finite and non-negative, got {v}")));
    }
    Ok(())
}

/// No change over the horizon.
pub fn persistence<T>(y_t: f64, horizon: i64) -> Result<BaselineForecast<T>> {
    check_irradiance("current GHI", y_t)?;
    Ok(BaselineForecast::scalar(horizon, y_t))
}

/// Current GHI scaled by the clear-sky ratio over the horizon.
pub fn smart_persistence<T>(y_t: f64, yclr_t: f64, yclr_h: f64, horizon: i64) -> Result<BaselineForecast<T>> {
    check_irradiance("current GHI", y_t)?;
    check_irradiance("future clear-sky GHI", yclr_h)?;
    if !(yclr_t > 0.0) || !yclr_t.is_finite() {
        return Err(Error::domain(format!(
            "clear-sky GHI at forecast time is {yclr_t}: sun at or below the horizon"
        )));
    }
    Ok(BaselineForecast::scalar(horizon, yclr_h / yclr_t * y_t))
}

/// Block-matching parameters of the CMV baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmvParams {
    /// Block side in pixels.
    pub block: usize,
    /// Maximum displacement searched in each direction, pixels.
    pub search: usize,
    /// Cloud attenuation `k`.
    pub attenuation: f64,
}

impl Default for CmvParams {
    fn default() -> Self {
        Self {
            block: 8,
            search: 4,
            attenuation: DEFAULT_ATTENUATION,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Global motion between two maps as the component-wise median of the
/// per-block displacements minimising the mean absolute difference.
///
/// Content at `p` in `prev` is found at `p + d` in `curr`. Ties prefer the
/// smallest displacement; textureless blocks do not vote.
pub fn estimate_motion<T: Scalar>(prev: &Grid2D<T>, curr: &Grid2D<T>, block: usize, search: usize) -> Result<(f64, f64)> {
    if prev.width() != curr.width() || prev.height() != curr.height() {
        return Err(Error::domain("CMV maps must have the same dimensions"));
    }
    if block == 0 {
        return Err(Error::domain("CMV block size must be positive"));
    }
    let (w, h) = (curr.width(), curr.height());
    if block + 2 * search > w || block + 2 * search > h {
        return Err(Error::domain(format!(
            "block {block} with search +/-{search} does not fit a {w}x{h} map"
        )));
    }
    let s = search as isize;
    let mut candidates: Vec<(isize, isize)> = (-s..=s).flat_map(|dy| (-s..=s).map(move |dx| (dx, dy))).collect();
    candidates.sort_by_key(|&(dx, dy)| (dx.abs() + dy.abs(), dy, dx));

    let (mut vx, mut vy) = (Vec::new(), Vec::new());
    let mut by = search;
    while by + block + search <= h {
        let mut bx = search;
        while bx + block + search <= w {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for y in by..by + block {
                for x in bx..bx + block {
                    if curr.is_valid(x, y) {
                        let v = curr.get(0, x, y).f64();
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
            }
            if hi - lo > 1e-6 {
                let mut best: Option<(f64, isize, isize)> = None;
                for &(dx, dy) in &candidates {
                    let (mut acc, mut n) = (0.0, 0usize);
                    for y in by..by + block {
                        for x in bx..bx + block {
                            let (sx, sy) = ((x as isize - dx) as usize, (y as isize - dy) as usize);
                            if curr.is_valid(x, y) && prev.is_valid(sx, sy) {
                                acc += (curr.get(0, x, y).f64() - prev.get(0, sx, sy).f64()).abs();
                                n += 1;
                            }
                        }
                    }
                    if n == 0 {
                        continue;
                    }
                    let mad = acc / n as f64;
                    if best.map_or(true, |(b, _, _)| mad < b) {
                        best = Some((mad, dx, dy));
                    }
                }
                if let Some((_, dx, dy)) = best {
                    vx.push(dx as f64);
                    vy.push(dy as f64);
                }
            }
            bx += block;
        }
        by += block;
    }
    if vx.is_empty() {
        return Ok((0.0, 0.0));
    }
    Ok((median(&mut vx), median(&mut vy)))
}

/// Translates a map by `(dx, dy)` pixels; sources outside the map are masked.
pub fn translate<T: Scalar>(map: &Grid2D<T>, dx: f64, dy: f64) -> Result<Grid2D<T>> {
    let (w, h) = (map.width(), map.height());
    let n = w * h;
    let mut values = vec![T::zero(); n * map.channels()];
    let mut mask = vec![true; n];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (T::c(x as f64 - dx), T::c(y as f64 - dy));
            for c in 0..map.channels() {
                match map.sample_bilinear(c, sx, sy) {
                    Some(v) => values[c * n + y * w + x] = v,
                    None => mask[y * w + x] = false,
                }
            }
        }
    }
    let (lo, hi) = map.value_range();
    Grid2D::new(w, h, map.channels(), values, (lo, hi))?.with_mask(mask)
}

/// CMV advection forecast.
///
/// The motion observed between `map_prev` and `map_curr` (taken `dt_obs`
/// seconds apart) is scaled to `horizon`, the current map is advected by it
/// and GHI is read from the advected cloud index at `site_pixel`. Where the
/// advected map is masked at the site, the current map is used.
pub fn cmv_advect<T: Scalar>(
    map_prev: &Grid2D<T>,
    map_curr: &Grid2D<T>,
    dt_obs: i64,
    horizon: i64,
    params: &CmvParams,
    site_pixel: (f64, f64),
    clear_h: f64,
) -> Result<BaselineForecast<T>> {
    if dt_obs <= 0 {
        return Err(Error::domain("CMV observation interval must be positive"));
    }
    check_irradiance("future clear-sky GHI", clear_h)?;
    let (dx, dy) = estimate_motion(map_prev, map_curr, params.block, params.search)?;
    let scale = horizon as f64 / dt_obs as f64;
    let (sx, sy) = (dx * scale, dy * scale);
    let advected = translate(map_curr, sx, sy)?;
    let ci = advected
        .sample_bilinear(0, T::c(site_pixel.0), T::c(site_pixel.1))
        .or_else(|| map_curr.sample_bilinear(0, T::c(site_pixel.0), T::c(site_pixel.1)))
        .map_or(0.0, |v| v.f64())
        .clamp(0.0, 1.0);
    let ghi_hat = (clear_h * (1.0 - params.attenuation * ci)).max(0.0);
    Ok(BaselineForecast {
        horizon,
        ghi_hat,
        advected_map: Some(advected),
        displacement: Some((sx, sy)),
    })
}
