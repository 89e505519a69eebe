//! The raster carrier shared by sky frames, satellite frames, cloud-index
//! maps and model feature maps.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A multi-channel raster stored channel-planar (`[channel][row][column]`).
///
/// `mask`, when present, flags each pixel as valid (`true`) or masked.
/// Masked pixels are ignored by every statistic and interpolation stencil.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D<T> {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<T>,
    value_range: (T, T),
    mask: Option<Vec<bool>>,
}

impl<T: Scalar> Grid2D<T> {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<T>, value_range: (T, T)) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::domain(format!("empty grid {width}x{height}x{channels}")));
        }
        if values.len() != width * height * channels {
            return Err(Error::domain(format!(
                "grid {width}x{height}x{channels} needs {} samples, got {}",
                width * height * channels,
                values.len()
            )));
        }
        if !(value_range.0 <= value_range.1) {
            return Err(Error::domain("value range lower bound exceeds upper bound"));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
            value_range,
            mask: None,
        })
    }

    /// Grid with the value range taken from the data.
    pub fn from_values(width: usize, height: usize, channels: usize, values: Vec<T>) -> Result<Self> {
        let mut g = Self::new(width, height, channels, values, (T::zero(), T::zero()))?;
        g.value_range = g.observed_range().unwrap_or((T::zero(), T::zero()));
        Ok(g)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels], (value, value))
            .expect("non-empty grid")
    }

    /// Single channel grid built from `f(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::from_values(width, height, 1, values).expect("non-empty grid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn value_range(&self) -> (T, T) {
        self.value_range
    }

    /// Overrides the declared range; it must contain every valid sample.
    pub fn with_value_range(mut self, lo: T, hi: T) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::domain("value range lower bound exceeds upper bound"));
        }
        if let Some((a, b)) = self.observed_range() {
            if a < lo || b > hi {
                return Err(Error::domain(format!("samples span [{a}, {b}], outside declared [{lo}, {hi}]")));
            }
        }
        self.value_range = (lo, hi);
        Ok(self)
    }

    pub(crate) fn set_value_range_unchecked(&mut self, lo: T, hi: T) {
        self.value_range = (lo, hi);
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.pixels() {
            return Err(Error::domain("mask length does not match pixel count"));
        }
        self.mask = if mask.iter().all(|&m| m) { None } else { Some(mask) };
        Ok(self)
    }

    pub fn clear_mask(&mut self) {
        self.mask = None;
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask.as_ref().map_or(true, |m| m[y * self.width + x])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.as_ref().map_or(self.pixels(), |m| m.iter().filter(|&&v| v).count())
    }

    #[inline]
    pub fn index(&self, c: usize, x: usize, y: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> T {
        self.values[self.index(c, x, y)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: T) {
        let i = self.index(c, x, y);
        self.values[i] = v;
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.pixels();
        &self.values[c * n..(c + 1) * n]
    }

    /// Min and max over valid samples of every channel.
    pub fn observed_range(&self) -> Option<(T, T)> {
        let n = self.pixels();
        let mut out: Option<(T, T)> = None;
        for (i, &v) in self.values.iter().enumerate() {
            if let Some(m) = &self.mask {
                if !m[i % n] {
                    continue;
                }
            }
            out = Some(match out {
                None => (v, v),
                Some((lo, hi)) => (lo.min(v), hi.max(v)),
            });
        }
        out
    }

    /// Bilinear sample of channel `c` at continuous pixel-centre coordinates.
    ///
    /// Masked neighbours get zero weight and the remaining weights are
    /// renormalised. Returns `None` outside the pixel-centre hull or when
    /// every neighbour with positive weight is masked.
    pub fn sample_bilinear(&self, c: usize, x: T, y: T) -> Option<T> {
        let eps = T::c(1e-9);
        let wmax = T::from_usize_lossy(self.width - 1);
        let hmax = T::from_usize_lossy(self.height - 1);
        if !(x >= -eps && y >= -eps && x <= wmax + eps && y <= hmax + eps) {
            return None;
        }
        let x = x.max(T::zero()).min(wmax);
        let y = y.max(T::zero()).min(hmax);
        let x0 = x.floor().to_usize().unwrap_or(0).min(self.width - 1);
        let y0 = y.floor().to_usize().unwrap_or(0).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - T::from_usize_lossy(x0);
        let fy = y - T::from_usize_lossy(y0);
        let taps = [
            (x0, y0, (T::one() - fx) * (T::one() - fy)),
            (x1, y0, fx * (T::one() - fy)),
            (x0, y1, (T::one() - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let mut acc = T::zero();
        let mut wsum = T::zero();
        for (px, py, w) in taps {
            if w > T::zero() && self.is_valid(px, py) {
                acc += w * self.get(c, px, py);
                wsum += w;
            }
        }
        if wsum <= T::zero() {
            return None;
        }
        // Renormalised convex combination; clamp away rounding excursions.
        let (lo, hi) = self.value_range;
        Some((acc / wsum).max(lo).min(hi))
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out.value_range = out.observed_range().unwrap_or(self.value_range);
        out
    }

    /// Converts the sample type.
    pub fn cast<U: Scalar>(&self) -> Grid2D<U> {
        Grid2D {
            width: self.width,
            height: self.height,
            channels: self.channels,
            values: self.values.iter().map(|v| U::c(v.f64())).collect(),
            value_range: (U::c(self.value_range.0.f64()), U::c(self.value_range.1.f64())),
            mask: self.mask.clone(),
        }
    }

    /// Stacks single-channel-compatible grids of equal size along channels.
    pub fn stack_channels(parts: &[&Grid2D<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::domain("nothing to stack"))?;
        let (w, h) = (first.width, first.height);
        let mut values = Vec::new();
        let mut lo = first.value_range.0;
        let mut hi = first.value_range.1;
        let mut mask: Option<Vec<bool>> = None;
        for p in parts {
            if p.width != w || p.height != h {
                return Err(Error::domain("cannot stack grids of different sizes"));
            }
            values.extend_from_slice(&p.values);
            lo = lo.min(p.value_range.0);
            hi = hi.max(p.value_range.1);
            if let Some(m) = &p.mask {
                let acc = mask.get_or_insert_with(|| vec![true; w * h]);
                acc.iter_mut().zip(m).for_each(|(a, &b)| *a = *a && b);
            }
        }
        let channels = values.len() / (w * h);
        let g = Self::new(w, h, channels, values, (lo, hi))?;
        match mask {
            Some(m) => g.with_mask(m),
            None => Ok(g),
        }
    }
}
