//! Band-limited Gaussian random fields by random-phase spectral synthesis.
//!
//! The field is a finite sum of plane waves, so it can be evaluated exactly
//! at any point and translates without interpolation error.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Mode {
    kx: f64,
    ky: f64,
    phase: f64,
}

/// Zero-mean, unit-variance random field with wavelengths in a band.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    modes: Vec<Mode>,
    amplitude: f64,
}

impl SpectralField {
    /// `modes` plane waves with wavelengths uniform in `[min_wavelength, max_wavelength]` metres.
    pub fn new(seed: u64, modes: usize, min_wavelength: f64, max_wavelength: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<Mode> = (0..modes.max(1))
            .map(|_| {
                let lambda = rng.random_range(min_wavelength..=max_wavelength);
                let dir = rng.random_range(0.0..TAU);
                let k = TAU / lambda;
                Mode {
                    kx: k * dir.cos(),
                    ky: k * dir.sin(),
                    phase: rng.random_range(0.0..TAU),
                }
            })
            .collect();
        let amplitude = (2.0 / modes.len() as f64).sqrt();
        Self { modes, amplitude }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.amplitude * self.modes.iter().map(|m| (m.kx * x + m.ky * y + m.phase).cos()).sum::<f64>()
    }

    /// Evaluates the field on the tensor grid `xs x ys` (row-major, `ys` outer).
    ///
    /// Uses `cos(a + b) = cos a cos b - sin a sin b` so each mode costs one
    /// multiply-add per point.
    pub fn eval_grid(&self, xs: &[f64], ys: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; xs.len() * ys.len()];
        let mut cx = vec![0.0; xs.len()];
        let mut sx = vec![0.0; xs.len()];
        for m in &self.modes {
            for (i, &x) in xs.iter().enumerate() {
                let (s, c) = (m.kx * x).sin_cos();
                cx[i] = c;
                sx[i] = s;
            }
            for (j, &y) in ys.iter().enumerate() {
                let (sb, cb) = (m.ky * y + m.phase).sin_cos();
                let row = &mut out[j * xs.len()..(j + 1) * xs.len()];
                for i in 0..xs.len() {
                    row[i] += cx[i] * cb - sx[i] * sb;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= self.amplitude);
        out
    }

    /// Tabulates the field at fixed points so that translated copies can be
    /// evaluated cheaply with [`PointSet::eval_shifted`].
    pub fn at_points(&self, points: &[(f64, f64)]) -> PointSet {
        let n = points.len();
        let mut cos = Vec::with_capacity(n * self.modes.len());
        let mut sin = Vec::with_capacity(n * self.modes.len());
        for m in &self.modes {
            for &(x, y) in points {
                let (s, c) = (m.kx * x + m.ky * y + m.phase).sin_cos();
                cos.push(c);
                sin.push(s);
            }
        }
        PointSet {
            field: self.clone(),
            n,
            cos,
            sin,
        }
    }
}

/// A [`SpectralField`] tabulated at a fixed set of points.
#[derive(Debug, Clone)]
pub struct PointSet {
    field: SpectralField,
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Field values at `p - (dx, dy)` for every tabulated point `p`.
    pub fn eval_shifted(&self, dx: f64, dy: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (mi, m) in self.field.modes.iter().enumerate() {
            // cos(a - b) = cos a cos b + sin a sin b
            let (sb, cb) = (m.kx * dx + m.ky * dy).sin_cos();
            let c = &self.cos[mi * self.n..(mi + 1) * self.n];
            let s = &self.sin[mi * self.n..(mi + 1) * self.n];
            for i in 0..self.n {
                out[i] += c[i] * cb + s[i] * sb;
            }
        }
        out.iter_mut().for_each(|v| *v *= self.field.amplitude);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_matches_pointwise() {
        let f = SpectralField::new(3, 24, 5_000.0, 20_000.0);
        let xs: Vec<f64> = (0..7).map(|i| i as f64 * 1234.5 - 3000.0).collect();
        let ys: Vec<f64> = (0..5).map(|j| j as f64 * -987.0 + 100.0).collect();
        let g = f.eval_grid(&xs, &ys);
        for (j, &y) in ys.iter().enumerate() {
            for (i, &x) in xs.iter().enumerate() {
                assert!((g[j * xs.len() + i] - f.value(x, y)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn shifted_point_set_matches_translation() {
        let f = SpectralField::new(9, 16, 3_000.0, 9_000.0);
        let pts = [(0.0, 0.0), (1500.0, -250.0), (-7000.0, 4200.0)];
        let set = f.at_points(&pts);
        let v = set.eval_shifted(320.0, -45.5);
        for (i, &(x, y)) in pts.iter().enumerate() {
            assert!((v[i] - f.value(x - 320.0, y + 45.5)).abs() < 1e-9);
        }
    }

    #[test]
    fn roughly_unit_variance() {
        let f = SpectralField::new(11, 64, 4_000.0, 8_000.0);
        let xs: Vec<f64> = (0..200).map(|i| i as f64 * 997.0).collect();
        let g = f.eval_grid(&xs, &xs);
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g.len() as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.2, "variance {var}");
    }

    #[test]
    fn seeded() {
        assert_eq!(SpectralField::new(5, 8, 1.0, 2.0), SpectralField::new(5, 8, 1.0, 2.0));
        assert_ne!(SpectralField::new(5, 8, 1.0, 2.0), SpectralField::new(6, 8, 1.0, 2.0));
    }
}
