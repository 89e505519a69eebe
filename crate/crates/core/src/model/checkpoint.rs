//! Versioned checkpoint container.
//!
//! Layout: magic `SKCK`, little-endian `u32` version, `u32` header length,
//! UTF-8 JSON header, then every tensor as little-endian `f32` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::{ForecastSet, ModelInput};
use super::params::ParameterStore;
use super::tape::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SKCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    snapshot: usize,
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    bin_range: (f64, f64),
    horizons_s: Vec<i64>,
    horizon_snapshot: Vec<usize>,
    tensors: Vec<TensorEntry>,
}

/// Trained forecaster: one or more parameter snapshots and the snapshot
/// serving each horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub bin_range: (f64, f64),
    pub horizons_s: Vec<i64>,
    pub snapshots: Vec<ParameterStore<f32>>,
    pub horizon_snapshot: Vec<usize>,
}

impl Checkpoint {
    pub fn single(config: ModelConfig, bin_range: (f64, f64), horizons_s: Vec<i64>, params: ParameterStore<f32>) -> Self {
        let n = config.horizons;
        Self {
            config,
            bin_range,
            horizons_s,
            snapshots: vec![params],
            horizon_snapshot: vec![0; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.horizon_snapshot.len() != self.config.horizons || self.horizons_s.len() != self.config.horizons {
            return Err(Error::data("checkpoint horizon table does not match the model"));
        }
        if self.horizon_snapshot.iter().any(|&i| i >= self.snapshots.len()) {
            return Err(Error::data("checkpoint references a missing snapshot"));
        }
        for s in &self.snapshots {
            s.check(&self.config)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let tensors = self
            .snapshots
            .iter()
            .enumerate()
            .flat_map(|(k, s)| {
                s.names().iter().zip(s.tensors()).map(move |(n, t)| TensorEntry {
                    snapshot: k,
                    name: n.clone(),
                    shape: t.shape.clone(),
                })
            })
            .collect();
        let header = Header {
            config: self.config.clone(),
            bin_range: self.bin_range,
            horizons_s: self.horizons_s.clone(),
            horizon_snapshot: self.horizon_snapshot.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Internal(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for s in &self.snapshots {
            for t in s.tensors() {
                for v in &t.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::data(format!("checkpoint: {m}"));
        if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        let mut pos = 12 + hlen;
        let mut snapshots: Vec<(Vec<String>, Vec<Tensor<f32>>)> = Vec::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated tensor data"))?;
            pos += 4 * n;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            if e.snapshot == snapshots.len() {
                snapshots.push((Vec::new(), Vec::new()));
            }
            let slot = snapshots.get_mut(e.snapshot).ok_or_else(|| bad("snapshots out of order"))?;
            slot.0.push(e.name.clone());
            slot.1.push(Tensor::new(e.shape.clone(), data)?);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let ck = Self {
            config: header.config,
            bin_range: header.bin_range,
            horizons_s: header.horizons_s,
            snapshots: snapshots.into_iter().map(|(n, t)| ParameterStore::from_parts(n, t)).collect::<Result<_>>()?,
            horizon_snapshot: header.horizon_snapshot,
        };
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Forecast using each horizon's snapshot.
    pub fn predict(&self, input: &ModelInput<f32>) -> Result<ForecastSet<f32>> {
        let mut per_snapshot: Vec<Option<ForecastSet<f32>>> = vec![None; self.snapshots.len()];
        let mut horizons = Vec::with_capacity(self.config.horizons);
        for (k, &s) in self.horizon_snapshot.iter().enumerate() {
            if per_snapshot[s].is_none() {
                per_snapshot[s] = Some(super::predict(&self.snapshots[s], input, &self.config, self.bin_range)?);
            }
            let set = per_snapshot[s].as_ref().expect("filled above");
            horizons.push(set.horizons[k].clone());
        }
        Ok(ForecastSet { horizons })
    }
}
