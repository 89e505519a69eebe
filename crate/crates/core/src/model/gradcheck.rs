//! Central finite-difference verification of the reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::network::{ModelInput, ModelTargets};
use super::params::ParameterStore;
use super::tape::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Coordinates whose analytic and numeric gradients both fall below this are skipped.
pub const MIN_MAGNITUDE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Coordinates compared (magnitude above [`MIN_MAGNITUDE`]).
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// `(tensor, index, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// Compares `analytic` with central differences of `f` around `point`.
pub fn compare(
    point: &mut [Tensor<f64>],
    analytic: &[Vec<f64>],
    step: f64,
    mut f: impl FnMut(&[Tensor<f64>]) -> Result<f64>,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for k in 0..point.len() {
        for i in 0..point[k].len() {
            let x0 = point[k].data[i];
            point[k].data[i] = x0 + step;
            let fp = f(point)?;
            point[k].data[i] = x0 - step;
            let fm = f(point)?;
            point[k].data[i] = x0;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic[k][i];
            let mag = a.abs().max(numeric.abs());
            if mag <= MIN_MAGNITUDE {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let rel = (a - numeric).abs() / mag;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((k, i, a, numeric));
            }
        }
    }
    Ok(report)
}

/// Random tensors with entries uniform in `[-1, 1]`.
pub fn random_tensors(shapes: &[Vec<usize>], seed: u64) -> Vec<Tensor<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shapes
        .iter()
        .map(|s| Tensor {
            shape: s.clone(),
            data: (0..s.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect()
}

/// Checks one operation in isolation.
///
/// The operands are parameters with the given shapes; the output is reduced
/// to a scalar by a squared error against a fixed random target unless it is
/// already a scalar.
pub fn check_op(
    shapes: &[Vec<usize>],
    seed: u64,
    step: f64,
    op: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut point = random_tensors(shapes, seed);
    let mut target: Option<Vec<f64>> = None;
    let mut eval = |p: &[Tensor<f64>], grads: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = p.iter().enumerate().map(|(i, t)| tape.param(i, t.clone())).collect();
        let y = op(&mut tape, &vars)?;
        let root = if tape.shape(y) == [1] {
            y
        } else {
            let n = tape.value(y).len();
            let t = target.get_or_insert_with(|| random_tensors(&[vec![n]], seed ^ 0x5eed).remove(0).data).clone();
            tape.mse(y, t, None)?
        };
        let value = tape.value(root).data[0];
        let g = if grads {
            let gr = tape.backward(root, 1.0)?;
            vars.iter().zip(p).map(|(&v, t)| gr.get(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)).collect()
        } else {
            Vec::new()
        };
        Ok((value, g))
    };
    let (_, analytic) = eval(&point, true)?;
    compare(&mut point, &analytic, step, |p| eval(p, false).map(|r| r.0))
}

/// Checks every parameter of a composed model.
pub fn check_model(
    params: &ParameterStore<f64>,
    input: &ModelInput<f64>,
    targets: &ModelTargets<f64>,
    cfg: &ModelConfig,
    step: f64,
) -> Result<GradCheckReport> {
    let (_, analytic) = super::gradients(params, input, targets, cfg, 1.0)?;
    let names = params.names().to_vec();
    let mut point = params.tensors().to_vec();
    compare(&mut point, &analytic, step, |p| {
        let store = ParameterStore::from_parts(names.clone(), p.to_vec())?;
        Ok(super::loss_value(&store, input, targets, cfg)?.total)
    })
}

/// Synthetic input and targets matching `cfg`, for gradient checks and tests.
pub fn synthetic_example(cfg: &ModelConfig, seed: u64) -> Result<(ModelInput<f64>, ModelTargets<f64>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = cfg.input_resolution;
    let mut frame = |c: usize| Tensor {
        shape: vec![c, r, r],
        data: (0..c * r * r).map(|_| rng.random_range(0.0..1.0)).collect(),
    };
    let sky = if cfg.inputs.sky { (0..cfg.frames).map(|_| frame(cfg.sky_channels)).collect() } else { Vec::new() };
    let sat = if cfg.inputs.satellite { (0..cfg.frames).map(|_| frame(cfg.sat_channels)).collect() } else { Vec::new() };
    let ic = if cfg.inputs.irradiance { (0..cfg.frames).map(|_| rng.random_range(0.2..1.2)).collect() } else { Vec::new() };
    let clear_h: Vec<f64> = (0..cfg.horizons).map(|_| rng.random_range(0.3..0.9)).collect();
    let ghi: Vec<f64> = clear_h.iter().map(|c| c * 1200.0 * rng.random_range(0.1..1.0)).collect();
    let ci_maps: Vec<Vec<f64>> = (0..cfg.horizons).map(|_| (0..r * r).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let ci_weights = (0..cfg.horizons).map(|_| (0..r * r).map(|i| if i % 7 == 3 { 0.0 } else { 1.0 }).collect()).collect();
    let bins = ghi.iter().map(|&g| crate::metrics::bin_index(g, 0.0, 1200.0, cfg.bin_count)).collect();
    if ghi.iter().any(|g| !g.is_finite()) {
        return Err(Error::Internal("synthetic target not finite".into()));
    }
    Ok((
        ModelInput { sky, sat, ic, clear_h, ghi_scale: 1200.0 },
        ModelTargets { ci_maps, ci_weights, ghi, bins, ghi_scale: 1200.0 },
    ))
}
