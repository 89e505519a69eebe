use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::tape::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Name, shape and fan-in of one weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

fn spec(name: String, shape: Vec<usize>) -> ParamSpec {
    let fan_in = match shape.len() {
        // A stride-2, 2x2 transposed kernel feeds each output from one tap per input channel.
        4 if name.starts_with("dec.") => shape[0],
        4 => shape[1] * shape[2] * shape[3],
        2 => shape[1],
        _ => 0,
    };
    ParamSpec { name, shape, fan_in }
}

fn conv(out: &mut Vec<ParamSpec>, name: &str, co: usize, ci: usize, k: usize) {
    out.push(spec(format!("{name}.w"), vec![co, ci, k, k]));
    out.push(spec(format!("{name}.b"), vec![co]));
}

/// Every weight tensor implied by a configuration, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let mut frame_width = 0;
    for (enabled, prefix, first_in) in [(cfg.inputs.sky, "sky", cfg.sky_in()), (cfg.inputs.satellite, "sat", cfg.sat_in())] {
        if !enabled {
            continue;
        }
        let mut ci = first_in;
        for (s, &w) in cfg.encoder_widths.iter().enumerate() {
            conv(&mut out, &format!("{prefix}.enc{s}"), w, ci, 3);
            ci = w;
        }
        frame_width += ci;
    }
    let l = cfg.latent_width;
    let mut ci = frame_width;
    for j in 0..cfg.temporal_stages() {
        conv(&mut out, &format!("temporal{j}"), l, cfg.temporal_kernel * ci, 3);
        ci = l;
    }
    for gate in ["update", "reset", "candidate"] {
        conv(&mut out, &format!("gru.{gate}"), l, 2 * l, 3);
    }
    let mut ci = l;
    for (i, &w) in cfg.decoder_widths.iter().chain(std::iter::once(&1)).enumerate() {
        // Transposed kernels are stored [in, out, k, k].
        out.push(spec(format!("dec.{i}.w"), vec![ci, w, 2, 2]));
        out.push(spec(format!("dec.{i}.b"), vec![w]));
        ci = w;
    }
    out.push(spec("scalar.w".into(), vec![1, l + 1]));
    out.push(spec("scalar.b".into(), vec![1]));
    out.push(spec("dist.w".into(), vec![cfg.bin_count, l + 1]));
    out.push(spec("dist.b".into(), vec![cfg.bin_count]));
    out
}

/// Named weight tensors of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParameterStore<T> {
    /// Uniform initialisation with variance `1 / fan_in`, zero biases.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let specs = param_specs(cfg);
        let mut tensors = Vec::with_capacity(specs.len());
        for s in &specs {
            let n: usize = s.shape.iter().product();
            let data = if s.fan_in == 0 {
                vec![T::zero(); n]
            } else {
                let a = (3.0 / s.fan_in as f64).sqrt();
                (0..n).map(|_| T::c(rng.random_range(-a..a))).collect()
            };
            tensors.push(Tensor { shape: s.shape.clone(), data });
        }
        Ok(Self {
            names: specs.into_iter().map(|s| s.name).collect(),
            tensors,
        })
    }

    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        let mut p = Self::init(cfg)?;
        p.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v = T::zero()));
        Ok(p)
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::Internal("parameter names and tensors differ in number".into()));
        }
        Ok(Self { names, tensors })
    }

    /// Fails unless names and shapes match the configuration.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = param_specs(cfg);
        if specs.len() != self.tensors.len() {
            return Err(Error::data(format!("expected {} parameter tensors, found {}", specs.len(), self.tensors.len())));
        }
        for (s, (n, t)) in specs.iter().zip(self.names.iter().zip(&self.tensors)) {
            if &s.name != n || s.shape != t.shape {
                return Err(Error::data(format!("parameter {n} {:?} does not match {} {:?}", t.shape, s.name, s.shape)));
            }
        }
        if self.tensors.iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
            return Err(Error::data("non-finite parameter value"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    /// Total number of scalar weights.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Gradient buffers aligned with a [`ParameterStore`].
pub type ParamGrads<T> = Vec<Vec<T>>;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 5.0,
        }
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(cfg: AdamConfig, params: &ParameterStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn update<T: Scalar>(&mut self, params: &mut ParameterStore<T>, grads: &ParamGrads<T>) -> f64 {
        let norm = grads.iter().flatten().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt();
        let clip = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (k, t) in params.tensors_mut().iter_mut().enumerate() {
            for (i, w) in t.data.iter_mut().enumerate() {
                let g = grads[k][i].f64() * clip;
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let upd = self.cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.cfg.epsilon);
                *w = T::c(w.f64() - upd);
            }
        }
        norm
    }
}
