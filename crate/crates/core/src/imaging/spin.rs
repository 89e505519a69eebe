//! Polar resampling around a point of interest (the sun in sky frames, the
//! site in satellite frames).
//!
//! Output row `r` holds radius `r * dr`, column `a` holds angle
//! `a * 2pi / angular_bins` measured from the +x axis towards +y. The
//! largest radius reaches the nearest image edge.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::scalar::Scalar;

pub const DEFAULT_BINS: usize = 128;

/// Radius (pixels) from `center` to the nearest pixel-centre edge.
pub fn max_radius(width: usize, height: usize, center: (f64, f64)) -> f64 {
    let (cx, cy) = center;
    cx.min(cy).min(width as f64 - 1.0 - cx).min(height as f64 - 1.0 - cy)
}

fn check_center(width: usize, height: usize, center: (f64, f64)) -> Result<()> {
    let (cx, cy) = center;
    if !(cx >= 0.0 && cy >= 0.0 && cx <= width as f64 - 1.0 && cy <= height as f64 - 1.0) {
        return Err(Error::domain(format!("polar centre ({cx}, {cy}) outside {width}x{height} image")));
    }
    Ok(())
}

fn radial_step(r_max: f64, radial_bins: usize) -> f64 {
    if radial_bins > 1 {
        r_max / (radial_bins - 1) as f64
    } else {
        0.0
    }
}

/// Clamps a point into the image so that it can serve as a polar centre.
pub fn clamp_center(width: usize, height: usize, center: (f64, f64)) -> (f64, f64) {
    (
        center.0.clamp(0.0, width as f64 - 1.0),
        center.1.clamp(0.0, height as f64 - 1.0),
    )
}

pub fn spin_transform<T: Scalar>(
    img: &Grid2D<T>,
    center: (f64, f64),
    radial_bins: usize,
    angular_bins: usize,
) -> Result<Grid2D<T>> {
    if radial_bins == 0 || angular_bins == 0 {
        return Err(Error::domain("polar bin counts must be positive"));
    }
    check_center(img.width(), img.height(), center)?;
    let dr = radial_step(max_radius(img.width(), img.height(), center), radial_bins);
    let dtheta = TAU / angular_bins as f64;
    let n = radial_bins * angular_bins;
    let mut values = vec![T::zero(); n * img.channels()];
    let mut mask = vec![true; n];
    for r in 0..radial_bins {
        let rad = r as f64 * dr;
        for a in 0..angular_bins {
            let th = a as f64 * dtheta;
            let x = center.0 + rad * th.cos();
            let y = center.1 + rad * th.sin();
            let o = r * angular_bins + a;
            for c in 0..img.channels() {
                match img.sample_bilinear(c, T::c(x), T::c(y)) {
                    Some(v) => values[c * n + o] = v,
                    None => mask[o] = false,
                }
            }
        }
    }
    let (lo, hi) = img.value_range();
    Grid2D::new(angular_bins, radial_bins, img.channels(), values, (lo, hi))?.with_mask(mask)
}

/// Maps a polar grid back onto a `width x height` image around `center`.
///
/// Angular interpolation wraps around; pixels beyond the sampled disk are
/// masked.
pub fn spin_inverse<T: Scalar>(polar: &Grid2D<T>, center: (f64, f64), width: usize, height: usize) -> Result<Grid2D<T>> {
    if width == 0 || height == 0 {
        return Err(Error::domain("inverse polar output must be non-empty"));
    }
    check_center(width, height, center)?;
    let (bins_a, bins_r) = (polar.width(), polar.height());
    let r_max = max_radius(width, height, center);
    if bins_r > 1 && r_max <= 0.0 {
        return Err(Error::domain("polar geometry mismatch: zero radius with several radial bins"));
    }
    let dr = radial_step(r_max, bins_r);
    let dtheta = TAU / bins_a as f64;
    let n = width * height;
    let mut values = vec![T::zero(); n * polar.channels()];
    let mut mask = vec![false; n];
    for y in 0..height {
        for x in 0..width {
            let (dx, dy) = (x as f64 - center.0, y as f64 - center.1);
            let rad = dx.hypot(dy);
            let row = if dr > 0.0 { rad / dr } else { 0.0 };
            if row > (bins_r - 1) as f64 + 1e-9 || (dr == 0.0 && rad > 1e-9) {
                continue;
            }
            let col = dy.atan2(dx).rem_euclid(TAU) / dtheta;
            let (r0, c0) = (row.floor() as usize, col.floor() as usize % bins_a);
            let r1 = (r0 + 1).min(bins_r - 1);
            let c1 = (c0 + 1) % bins_a;
            let (fr, fc) = (row - row.floor(), col - col.floor());
            let taps = [
                (c0, r0, (1.0 - fc) * (1.0 - fr)),
                (c1, r0, fc * (1.0 - fr)),
                (c0, r1, (1.0 - fc) * fr),
                (c1, r1, fc * fr),
            ];
            let i = y * width + x;
            let mut ok = true;
            for c in 0..polar.channels() {
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for &(pc, pr, w) in &taps {
                    if w > 0.0 && polar.is_valid(pc, pr) {
                        acc += w * polar.get(c, pc, pr).f64();
                        wsum += w;
                    }
                }
                if wsum > 0.0 {
                    values[c * n + i] = T::c(acc / wsum);
                } else {
                    ok = false;
                }
            }
            mask[i] = ok;
        }
    }
    let (lo, hi) = polar.value_range();
    for (i, v) in values.iter_mut().enumerate() {
        *v = v.max(lo).min(hi);
        if !mask[i % n] {
            *v = lo;
        }
    }
    Grid2D::new(width, height, polar.channels(), values, (lo, hi))?.with_mask(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(size: usize, cx: f64, cy: f64, sigma: f64) -> Grid2D<f64> {
        Grid2D::from_fn(size, size, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
    }

    #[test]
    fn radial_symmetry_gives_constant_rows() {
        let g = blob(65, 32.0, 32.0, 9.0);
        let p = spin_transform(&g, (32.0, 32.0), 32, 64).unwrap();
        for r in 0..32 {
            let row: Vec<f64> = (0..64).map(|a| p.get(0, a, r)).collect();
            let spread = row.iter().cloned().fold(f64::MIN, f64::max) - row.iter().cloned().fold(f64::MAX, f64::min);
            // Bilinear sampling of a Gaussian at off-grid angles.
            assert!(spread < 5e-3, "row {r} spread {spread}");
        }
    }

    #[test]
    fn first_row_replicates_centre() {
        let g = Grid2D::<f64>::from_fn(40, 30, |x, y| (x * 7 + y * 3) as f64 / 400.0);
        let p = spin_transform(&g, (12.0, 9.0), 16, 24).unwrap();
        for a in 0..24 {
            assert_eq!(p.get(0, a, 0), g.get(0, 12, 9));
        }
    }

    #[test]
    fn errors() {
        let g = Grid2D::<f64>::filled(8, 8, 1, 0.0);
        assert!(spin_transform(&g, (4.0, 4.0), 0, 8).is_err());
        assert!(spin_transform(&g, (4.0, 4.0), 8, 0).is_err());
        assert!(spin_transform(&g, (9.0, 4.0), 8, 8).is_err());
        assert!(spin_inverse(&g, (-1.0, 4.0), 8, 8).is_err());
    }

    #[test]
    fn constant_round_trip() {
        let g = Grid2D::<f64>::filled(32, 32, 1, 0.25);
        let p = spin_transform(&g, (15.5, 15.5), 32, 64).unwrap();
        let back = spin_inverse(&p, (15.5, 15.5), 32, 32).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                if back.is_valid(x, y) {
                    assert!((back.get(0, x, y) - 0.25).abs() < 1e-12);
                }
            }
        }
        assert!(back.valid_count() > 700);
    }

    #[test]
    fn fully_masked_round_trip_is_masked() {
        let g = Grid2D::<f64>::filled(16, 16, 1, 0.5).with_mask(vec![false; 256]).unwrap();
        let p = spin_transform(&g, (7.5, 7.5), 8, 16).unwrap();
        assert_eq!(p.valid_count(), 0);
        let back = spin_inverse(&p, (7.5, 7.5), 16, 16).unwrap();
        assert_eq!(back.valid_count(), 0);
    }
}
