use super::config::{ImageLoss, Mode, ModelConfig};
use super::params::{ParamGrads, ParameterStore};
use super::tape::{Tape, Tensor, Var};
use crate::dataset::{Sample, IC_MAX};
use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::metrics::BinnedDistribution;
use crate::scalar::Scalar;

/// Network inputs of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput<T> {
    /// One `[channels, r, r]` tensor per sky frame, oldest first.
    pub sky: Vec<Tensor<T>>,
    pub sat: Vec<Tensor<T>>,
    /// Past clear-sky index per frame.
    pub ic: Vec<T>,
    /// Clear-sky GHI at every horizon, divided by `ghi_scale`.
    pub clear_h: Vec<T>,
    /// Upper edge of the irradiance bin range, the GHI normaliser.
    pub ghi_scale: f64,
}

/// Supervision of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelTargets<T> {
    pub ci_maps: Vec<Vec<T>>,
    /// 1 on valid pixels of each target map, 0 elsewhere.
    pub ci_weights: Vec<Vec<T>>,
    pub ghi: Vec<f64>,
    pub bins: Vec<usize>,
    pub ghi_scale: f64,
}

fn frame_tensor<T: Scalar>(g: &Grid2D<f32>, res: usize, channels: usize, what: &str) -> Result<Tensor<T>> {
    if g.width() != res || g.height() != res || g.channels() != channels {
        return Err(Error::domain(format!(
            "{what} frame is {}x{}x{}, model expects {res}x{res}x{channels}",
            g.width(),
            g.height(),
            g.channels()
        )));
    }
    let n = res * res;
    let mut data = Vec::with_capacity(channels * n);
    for c in 0..channels {
        for (i, &v) in g.plane(c).iter().enumerate() {
            let valid = g.mask().is_none_or(|m| m[i]) && v.is_finite();
            data.push(if valid { T::c(v as f64) } else { T::zero() });
        }
    }
    Tensor::new(vec![channels, res, res], data)
}

impl<T: Scalar> ModelInput<T> {
    /// Extracts the enabled modalities of `sample`; disabled ones stay empty.
    pub fn from_sample(sample: &Sample, cfg: &ModelConfig, ghi_scale: f64) -> Result<Self> {
        let r = cfg.input_resolution;
        if sample.targets.len() != cfg.horizons {
            return Err(Error::domain(format!("sample has {} horizons, model {}", sample.targets.len(), cfg.horizons)));
        }
        let sky = if cfg.inputs.sky {
            if sample.sky.len() != cfg.frames {
                return Err(Error::domain("sky frame count does not match the model"));
            }
            sample.sky.iter().map(|g| frame_tensor(g, r, cfg.sky_channels, "sky")).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let sat = if cfg.inputs.satellite {
            if sample.sat.len() != cfg.frames {
                return Err(Error::domain("satellite frame count does not match the model"));
            }
            sample.sat.iter().map(|g| frame_tensor(g, r, cfg.sat_channels, "satellite")).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let ic = if cfg.inputs.irradiance {
            let v = sample.ic_values()?;
            if v.len() != cfg.frames {
                return Err(Error::domain("irradiance history does not match the frame count"));
            }
            v.into_iter().map(T::c).collect()
        } else {
            Vec::new()
        };
        Ok(Self {
            sky,
            sat,
            ic,
            clear_h: sample.targets.iter().map(|t| T::c(t.clear / ghi_scale)).collect(),
            ghi_scale,
        })
    }
}

impl<T: Scalar> ModelTargets<T> {
    pub fn from_sample(sample: &Sample, cfg: &ModelConfig, ghi_scale: f64) -> Result<Self> {
        let r = cfg.input_resolution;
        let mut ci_maps = Vec::new();
        let mut ci_weights = Vec::new();
        for t in &sample.targets {
            let g = &t.ci_map;
            if g.width() != r || g.height() != r {
                return Err(Error::domain(format!("target map is {}x{}, model expects {r}x{r}", g.width(), g.height())));
            }
            let plane = g.plane(0);
            let w: Vec<T> = (0..plane.len())
                .map(|i| if g.mask().is_none_or(|m| m[i]) && plane[i].is_finite() { T::one() } else { T::zero() })
                .collect();
            ci_maps.push(plane.iter().map(|&v| if v.is_finite() { T::c(v as f64) } else { T::zero() }).collect());
            ci_weights.push(w);
        }
        Ok(Self {
            ci_maps,
            ci_weights,
            ghi: sample.targets.iter().map(|t| t.ghi).collect(),
            bins: sample.targets.iter().map(|t| t.bin).collect(),
            ghi_scale,
        })
    }
}

/// Tape handles of the head outputs, one entry per horizon.
#[derive(Debug, Clone)]
pub struct Outputs {
    pub ci_map: Vec<Option<Var>>,
    /// Normalised GHI forecast `ghi_hat / ghi_scale`.
    pub ghi: Vec<Option<Var>>,
    pub log_probs: Vec<Option<Var>>,
    params: Vec<Var>,
}

impl Outputs {
    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }
}

struct Net<'a, T> {
    tape: &'a mut Tape<T>,
    params: &'a ParameterStore<T>,
    vars: Vec<Var>,
}

impl<T: Scalar> Net<'_, T> {
    fn p(&self, name: &str) -> Result<Var> {
        self.params
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::Internal(format!("missing parameter {name}")))
    }

    fn conv(&mut self, x: Var, name: &str, stride: usize) -> Result<Var> {
        let (w, b) = (self.p(&format!("{name}.w"))?, self.p(&format!("{name}.b"))?);
        self.tape.conv2d(x, w, b, stride, 1)
    }

    fn encode(&mut self, prefix: &str, frame: Var, stages: usize) -> Result<Var> {
        let mut h = frame;
        for s in 0..stages {
            let c = self.conv(h, &format!("{prefix}.enc{s}"), 2)?;
            h = self.tape.silu(c);
        }
        Ok(h)
    }
}

fn constant_plane<T: Scalar>(tape: &mut Tape<T>, frame: &Tensor<T>, v: T) -> Result<Var> {
    let mut data = frame.data.clone();
    data.extend(std::iter::repeat_n(v, frame.shape[1] * frame.shape[2]));
    let mut shape = frame.shape.clone();
    shape[0] += 1;
    Ok(tape.input(Tensor::new(shape, data)?))
}

/// Records the forward pass of one sample on `tape`.
pub fn forward<T: Scalar>(tape: &mut Tape<T>, params: &ParameterStore<T>, input: &ModelInput<T>, cfg: &ModelConfig) -> Result<Outputs> {
    let expect = |n: usize, enabled: bool, what: &str| -> Result<()> {
        if enabled && n != cfg.frames || !enabled && n != 0 {
            return Err(Error::domain(format!("{what} input does not match the enabled modalities")));
        }
        Ok(())
    };
    expect(input.sky.len(), cfg.inputs.sky, "sky")?;
    expect(input.sat.len(), cfg.inputs.satellite, "satellite")?;
    expect(input.ic.len(), cfg.inputs.irradiance, "irradiance")?;
    if input.clear_h.len() != cfg.horizons {
        return Err(Error::domain("clear-sky values do not match the horizon count"));
    }
    let vars: Vec<Var> = params.tensors().iter().enumerate().map(|(i, t)| tape.param(i, t.clone())).collect();
    let mut net = Net { tape, params, vars };
    let stages = cfg.encoder_widths.len();

    // Spatial encoders, one feature map per frame.
    let mut frames = Vec::with_capacity(cfg.frames);
    for k in 0..cfg.frames {
        let mut parts = Vec::new();
        for (prefix, list, gets_ic) in [("sky", &input.sky, true), ("sat", &input.sat, !cfg.inputs.sky)] {
            if list.is_empty() {
                continue;
            }
            let x = if cfg.inputs.irradiance && gets_ic {
                constant_plane(net.tape, &list[k], input.ic[k].min(T::c(IC_MAX)))?
            } else {
                net.tape.input(list[k].clone())
            };
            parts.push(net.encode(prefix, x, stages)?);
        }
        frames.push(if parts.len() == 1 { parts[0] } else { net.tape.concat(&parts)? });
    }

    // Temporal encoder: shared-weight convolutions over sliding frame windows.
    let kt = cfg.temporal_kernel;
    for j in 0..cfg.temporal_stages() {
        let mut next = Vec::with_capacity(frames.len() + 1 - kt);
        for window in frames.windows(kt) {
            let x = net.tape.concat(window)?;
            let c = net.conv(x, &format!("temporal{j}"), 1)?;
            next.push(net.tape.silu(c));
        }
        frames = next;
    }
    let z0 = frames[0];

    // Convolutional GRU rolled over the horizons, starting from z0.
    let mut h = z0;
    let mut states = Vec::with_capacity(cfg.horizons);
    for _ in 0..cfg.horizons {
        let zh = net.tape.concat(&[z0, h])?;
        let u = net.conv(zh, "gru.update", 1)?;
        let u = net.tape.sigmoid(u);
        let r = net.conv(zh, "gru.reset", 1)?;
        let r = net.tape.sigmoid(r);
        let rh = net.tape.mul(r, h)?;
        let zrh = net.tape.concat(&[z0, rh])?;
        let n = net.conv(zrh, "gru.candidate", 1)?;
        let n = net.tape.tanh(n);
        let d = net.tape.sub(n, h)?;
        let ud = net.tape.mul(u, d)?;
        h = net.tape.add(h, ud)?;
        states.push(h);
    }

    let mut out = Outputs {
        ci_map: Vec::with_capacity(cfg.horizons),
        ghi: Vec::with_capacity(cfg.horizons),
        log_probs: Vec::with_capacity(cfg.horizons),
        params: Vec::new(),
    };
    for (k, &z) in states.iter().enumerate() {
        out.ci_map.push(if cfg.heads.cloud_map {
            let mut x = z;
            let last = cfg.decoder_widths.len();
            for i in 0..=last {
                let (w, b) = (net.p(&format!("dec.{i}.w"))?, net.p(&format!("dec.{i}.b"))?);
                let y = net.tape.conv_t2d(x, w, b, 2)?;
                x = if i == last { net.tape.sigmoid(y) } else { net.tape.silu(y) };
            }
            Some(x)
        } else {
            None
        });
        let needs_pool = cfg.heads.scalar || cfg.heads.distribution;
        let feats = if needs_pool {
            let pooled = net.tape.mean_pool(z)?;
            let c = net.tape.input(Tensor::scalar(input.clear_h[k]));
            Some(net.tape.concat(&[pooled, c])?)
        } else {
            None
        };
        out.ghi.push(match feats {
            Some(f) if cfg.heads.scalar => {
                let (w, b) = (net.p("scalar.w")?, net.p("scalar.b")?);
                let y = net.tape.linear(f, w, b)?;
                // Clear-sky index times the (normalised) clear-sky irradiance.
                let kc = net.tape.softplus(y);
                Some(net.tape.scale(kc, input.clear_h[k]))
            }
            _ => None,
        });
        out.log_probs.push(match feats {
            Some(f) if cfg.heads.distribution => {
                let (w, b) = (net.p("dist.w")?, net.p("dist.b")?);
                let y = net.tape.linear(f, w, b)?;
                Some(net.tape.log_softmax(y)?)
            }
            _ => None,
        });
    }
    out.params = net.vars;
    Ok(out)
}

/// Loss handles: total and the two weighted terms, each averaged over horizons.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub irradiance: Var,
    pub image: Option<Var>,
}

/// Per-horizon loss values.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub irradiance: f64,
    pub image: f64,
    pub irradiance_per_horizon: Vec<f64>,
    pub image_per_horizon: Vec<f64>,
}

/// Records `L_irradiance + alpha * L_image` averaged over horizons.
pub fn loss<T: Scalar>(tape: &mut Tape<T>, out: &Outputs, targets: &ModelTargets<T>, cfg: &ModelConfig) -> Result<(LossVars, LossBreakdown)> {
    let hcount = cfg.horizons;
    if targets.ghi.len() != hcount || targets.bins.len() != hcount || targets.ci_maps.len() != hcount {
        return Err(Error::Internal("targets do not cover every horizon".into()));
    }
    let inv = T::one() / T::from_usize_lossy(hcount);
    let mut irr_terms = Vec::with_capacity(hcount);
    let mut img_terms = Vec::with_capacity(hcount);
    for k in 0..hcount {
        irr_terms.push(match cfg.mode {
            Mode::Deterministic => {
                let g = out.ghi[k].ok_or_else(|| Error::Internal("scalar head disabled".into()))?;
                let y = targets.ghi[k] / targets.ghi_scale;
                if !y.is_finite() {
                    return Err(Error::TrainingFault("non-finite irradiance target".into()));
                }
                tape.mse(g, vec![T::c(y)], None)?
            }
            Mode::Probabilistic => {
                let lp = out.log_probs[k].ok_or_else(|| Error::Internal("distribution head disabled".into()))?;
                tape.nll(lp, targets.bins[k])?
            }
        });
        if cfg.alpha > 0.0 {
            let m = out.ci_map[k].ok_or_else(|| Error::Internal("cloud map head disabled".into()))?;
            let t = targets.ci_maps[k].clone();
            let w = Some(targets.ci_weights[k].clone());
            img_terms.push(match cfg.image_loss {
                ImageLoss::Mae => tape.mae(m, t, w)?,
                ImageLoss::Mse => tape.mse(m, t, w)?,
            });
        }
    }
    let irr_sum = tape.sum(&irr_terms)?;
    let irradiance = tape.scale(irr_sum, inv);
    let (total, image) = if img_terms.is_empty() {
        (irradiance, None)
    } else {
        let img_sum = tape.sum(&img_terms)?;
        let image = tape.scale(img_sum, inv);
        let weighted = tape.scale(image, T::c(cfg.alpha));
        (tape.sum(&[irradiance, weighted])?, Some(image))
    };
    let scalar = |v: Var| tape.value(v).data[0].f64();
    let breakdown = LossBreakdown {
        total: scalar(total),
        irradiance: scalar(irradiance),
        image: image.map_or(0.0, scalar),
        irradiance_per_horizon: irr_terms.iter().map(|&v| scalar(v)).collect(),
        image_per_horizon: img_terms.iter().map(|&v| scalar(v)).collect(),
    };
    if !breakdown.total.is_finite() {
        return Err(Error::TrainingFault(format!("non-finite loss {}", breakdown.total)));
    }
    Ok((LossVars { total, irradiance, image }, breakdown))
}

/// Scalar and distribution forecasts of one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonForecast<T> {
    pub ci_map: Option<Grid2D<T>>,
    pub ghi_hat: Option<f64>,
    pub dist: Option<BinnedDistribution>,
}

/// Forecasts of one sample for every horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSet<T> {
    pub horizons: Vec<HorizonForecast<T>>,
}

/// Reads the head values off a tape.
pub fn forecast_set<T: Scalar>(tape: &Tape<T>, out: &Outputs, input: &ModelInput<T>, bin_range: (f64, f64)) -> Result<ForecastSet<T>> {
    let mut horizons = Vec::with_capacity(out.ghi.len());
    for k in 0..out.ghi.len() {
        let ci_map = match out.ci_map[k] {
            Some(v) => {
                let t = tape.value(v);
                let g = Grid2D::new(t.shape[2], t.shape[1], 1, t.data.clone(), (T::zero(), T::one()))?;
                Some(g)
            }
            None => None,
        };
        let ghi_hat = out.ghi[k].map(|v| tape.value(v).data[0].f64() * input.ghi_scale);
        let dist = match out.log_probs[k] {
            Some(v) => {
                let lp = &tape.value(v).data;
                let p: Vec<f64> = lp.iter().map(|x| x.f64().exp()).collect();
                let s: f64 = p.iter().sum();
                Some(BinnedDistribution::new(bin_range.0, bin_range.1, p.into_iter().map(|x| x / s).collect())?)
            }
            None => None,
        };
        horizons.push(HorizonForecast { ci_map, ghi_hat, dist });
    }
    Ok(ForecastSet { horizons })
}

/// Gradients of the parameters from a backward sweep, zero where unused.
pub fn param_gradients<T: Scalar>(tape: &Tape<T>, out: &Outputs, root: Var, seed: T, params: &ParameterStore<T>) -> Result<ParamGrads<T>> {
    let g = tape.backward(root, seed)?;
    Ok(out
        .params
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| g.get(v).map_or_else(|| vec![T::zero(); t.len()], <[T]>::to_vec))
        .collect())
}
