use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::scalar::Scalar;

/// Normalised binomial kernel with `2 * factor - 1` taps.
pub fn binomial_kernel(factor: usize) -> Vec<f64> {
    let n = 2 * factor - 1;
    let mut row = vec![1.0f64];
    for _ in 1..n {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let s: f64 = row.iter().sum();
    row.iter().map(|v| v / s).collect()
}

/// Separable masked convolution; returns the filtered value plane and the
/// accumulated weight plane (0 where the stencil saw no valid pixel).
fn blur_plane(plane: &[f64], valid: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let r = (k.len() / 2) as isize;
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (t, &kv) in k.iter().enumerate() {
                    let d = t as isize - r;
                    let (sx, sy) = if horizontal { (x as isize + d, y as isize) } else { (x as isize, y as isize + d) };
                    if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                        continue;
                    }
                    acc += kv * src[sy as usize * w + sx as usize];
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let num: Vec<f64> = plane.iter().zip(valid).map(|(v, m)| v * m).collect();
    let num = pass(&pass(&num, true), false);
    let den = pass(&pass(valid, true), false);
    (num, den)
}

/// Anti-aliased downscaling: binomial low-pass then sampling at block centres.
///
/// For even factors the block centre falls between input pixels and the
/// filtered image is interpolated there.
pub fn downscale<T: Scalar>(img: &Grid2D<T>, factor: usize) -> Result<Grid2D<T>> {
    if factor < 2 {
        return Err(Error::domain(format!("downscale factor {factor} must be at least 2")));
    }
    let (w, h) = (img.width(), img.height());
    if w % factor != 0 || h % factor != 0 {
        return Err(Error::domain(format!("{w}x{h} not divisible by {factor}")));
    }
    let (ow, oh) = (w / factor, h / factor);
    let k = binomial_kernel(factor);
    let valid: Vec<f64> = (0..w * h)
        .map(|i| if img.is_valid(i % w, i / w) { 1.0 } else { 0.0 })
        .collect();
    let offset = (factor as f64 - 1.0) / 2.0;
    let mut values = vec![T::zero(); ow * oh * img.channels()];
    let mut mask = vec![true; ow * oh];
    for c in 0..img.channels() {
        let plane: Vec<f64> = img.plane(c).iter().map(|v| v.f64()).collect();
        let (num, den) = blur_plane(&plane, &valid, w, h, &k);
        for oy in 0..oh {
            for ox in 0..ow {
                let x = ox as f64 * factor as f64 + offset;
                let y = oy as f64 * factor as f64 + offset;
                let (x0, y0) = (x.floor() as usize, y.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = (x - x0 as f64, y - y0 as f64);
                let mut n = 0.0;
                let mut d = 0.0;
                for (px, py, wt) in [
                    (x0, y0, (1.0 - fx) * (1.0 - fy)),
                    (x1, y0, fx * (1.0 - fy)),
                    (x0, y1, (1.0 - fx) * fy),
                    (x1, y1, fx * fy),
                ] {
                    n += wt * num[py * w + px];
                    d += wt * den[py * w + px];
                }
                let o = oy * ow + ox;
                if d > 1e-12 {
                    values[c * ow * oh + o] = T::c(n / d);
                } else {
                    mask[o] = false;
                }
            }
        }
    }
    let (lo, hi) = img.value_range();
    for (i, v) in values.iter_mut().enumerate() {
        if mask[i % (ow * oh)] {
            *v = v.max(lo).min(hi);
        }
    }
    Grid2D::new(ow, oh, img.channels(), values, (lo, hi))?.with_mask(mask)
}

/// Central crop covering a quarter of the area, resized back to the input
/// resolution (2x magnification about the image centre).
pub fn center_closeup<T: Scalar>(img: &Grid2D<T>) -> Result<Grid2D<T>> {
    let (w, h) = (img.width(), img.height());
    if w % 2 != 0 || h % 2 != 0 || w < 4 || h < 4 {
        return Err(Error::domain(format!("close-up needs even dimensions of at least 4, got {w}x{h}")));
    }
    let (x_lo, y_lo) = (w as f64 / 4.0, h as f64 / 4.0);
    let (x_hi, y_hi) = (x_lo + w as f64 / 2.0 - 1.0, y_lo + h as f64 / 2.0 - 1.0);
    let n = w * h;
    let mut values = vec![T::zero(); n * img.channels()];
    let mut mask = vec![true; n];
    for y in 0..h {
        for x in 0..w {
            // Pixel-centre aligned 2x resize of the crop, clamped to the crop.
            let sx = (x_lo - 0.5 + (x as f64 + 0.5) / 2.0).clamp(x_lo, x_hi);
            let sy = (y_lo - 0.5 + (y as f64 + 0.5) / 2.0).clamp(y_lo, y_hi);
            for c in 0..img.channels() {
                match img.sample_bilinear(c, T::c(sx), T::c(sy)) {
                    Some(v) => values[c * n + y * w + x] = v,
                    None => mask[y * w + x] = false,
                }
            }
        }
    }
    let (lo, hi) = img.value_range();
    Grid2D::new(w, h, img.channels(), values, (lo, hi))?.with_mask(mask)
}
