//! Hybrid sky / satellite forecaster: parallel spatial encoders, a temporal
//! encoder, a convolutional GRU over future states and three decoders.

mod checkpoint;
mod config;
pub mod gradcheck;
mod network;
mod params;
pub mod tape;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Heads, ImageLoss, Inputs, Mode, ModelConfig};
pub use network::{forecast_set, forward, loss, param_gradients, ForecastSet, HorizonForecast, LossBreakdown, LossVars, ModelInput, ModelTargets, Outputs};
pub use params::{param_specs, Adam, AdamConfig, ParamGrads, ParamSpec, ParameterStore};
pub use tape::{Tape, Tensor, Var};
pub use train::{evaluate_split, prepare, train, EpochRecord, HorizonScore, Prepared, TrainConfig, TrainLog, TrainOutcome};

use std::time::Instant;

use crate::error::Result;
use crate::scalar::Scalar;

/// Forecast of one sample, recorded on a fresh tape.
pub fn forward_sample<T: Scalar>(params: &ParameterStore<T>, input: &ModelInput<T>, cfg: &ModelConfig, bin_range: (f64, f64)) -> Result<ForecastSet<T>> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, params, input, cfg)?;
    forecast_set(&tape, &out, input, bin_range)
}

/// Inference entry point; runs the same kernels as [`forward_sample`]
/// without keeping a backward graph.
pub fn predict<T: Scalar>(params: &ParameterStore<T>, input: &ModelInput<T>, cfg: &ModelConfig, bin_range: (f64, f64)) -> Result<ForecastSet<T>> {
    let mut tape = Tape::inference();
    let out = forward(&mut tape, params, input, cfg)?;
    forecast_set(&tape, &out, input, bin_range)
}

/// Predictions for a batch, in input order.
pub fn predict_batch<T: Scalar>(params: &ParameterStore<T>, inputs: &[ModelInput<T>], cfg: &ModelConfig, bin_range: (f64, f64)) -> Result<Vec<ForecastSet<T>>> {
    use rayon::prelude::*;
    let start = Instant::now();
    let out = inputs.par_iter().map(|x| predict(params, x, cfg, bin_range)).collect::<Result<Vec<_>>>()?;
    if !inputs.is_empty() {
        log::debug!("predicted {} samples, {:.2} ms per sample", inputs.len(), start.elapsed().as_secs_f64() * 1e3 / inputs.len() as f64);
    }
    Ok(out)
}

/// Total loss of one sample and the gradient of `scale * loss`.
pub fn gradients<T: Scalar>(
    params: &ParameterStore<T>,
    input: &ModelInput<T>,
    targets: &ModelTargets<T>,
    cfg: &ModelConfig,
    scale: T,
) -> Result<(LossBreakdown, ParamGrads<T>)> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, params, input, cfg)?;
    let (vars, breakdown) = loss(&mut tape, &out, targets, cfg)?;
    let grads = param_gradients(&tape, &out, vars.total, scale, params)?;
    Ok((breakdown, grads))
}

/// Loss of one sample without gradients.
pub fn loss_value<T: Scalar>(params: &ParameterStore<T>, input: &ModelInput<T>, targets: &ModelTargets<T>, cfg: &ModelConfig) -> Result<LossBreakdown> {
    let mut tape = Tape::inference();
    let out = forward(&mut tape, params, input, cfg)?;
    Ok(loss(&mut tape, &out, targets, cfg)?.1)
}
