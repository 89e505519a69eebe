use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageLoss {
    Mae,
    Mse,
}

/// Deterministic mode supervises the scalar head with MSE; probabilistic mode
/// supervises the distribution head with cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Deterministic,
    Probabilistic,
}

/// Input modalities: sky images (SI), satellite cloud-index maps (SO) and
/// the irradiance channel (IC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub sky: bool,
    pub satellite: bool,
    pub irradiance: bool,
}

impl Default for Inputs {
    fn default() -> Self {
        Self {
            sky: true,
            satellite: true,
            irradiance: true,
        }
    }
}

impl Inputs {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.satellite {
            parts.push("SO");
        }
        if self.sky {
            parts.push("SI");
        }
        if self.irradiance {
            parts.push("IC");
        }
        parts.join("+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heads {
    pub cloud_map: bool,
    pub scalar: bool,
    pub distribution: bool,
}

impl Default for Heads {
    fn default() -> Self {
        Self {
            cloud_map: true,
            scalar: true,
            distribution: true,
        }
    }
}

/// Architecture and objective of the forecaster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Side of the square input frames; a multiple of `2^stages`.
    pub input_resolution: usize,
    pub sky_channels: usize,
    pub sat_channels: usize,
    pub frames: usize,
    /// Output widths of the strided encoder stages.
    pub encoder_widths: Vec<usize>,
    /// Temporal kernel of the frame-axis convolutions.
    pub temporal_kernel: usize,
    pub latent_width: usize,
    pub decoder_widths: Vec<usize>,
    pub horizons: usize,
    pub bin_count: usize,
    pub heads: Heads,
    pub inputs: Inputs,
    pub mode: Mode,
    pub alpha: f64,
    pub image_loss: ImageLoss,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_resolution: 128,
            sky_channels: 1,
            sat_channels: 1,
            frames: 5,
            encoder_widths: vec![8, 16, 32],
            temporal_kernel: 3,
            latent_width: 64,
            decoder_widths: vec![32, 16],
            horizons: 6,
            bin_count: crate::metrics::BIN_COUNT,
            heads: Heads::default(),
            inputs: Inputs::default(),
            mode: Mode::Deterministic,
            alpha: 5.0,
            image_loss: ImageLoss::Mae,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !self.inputs.sky && !self.inputs.satellite {
            return bad("at least one of the sky and satellite inputs must be enabled");
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return bad("alpha must be finite and non-negative");
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return bad("encoder widths must be non-empty and positive");
        }
        let scale = 1usize << self.encoder_widths.len();
        if self.input_resolution == 0 || self.input_resolution % scale != 0 {
            return bad("input resolution must be a positive multiple of 2^stages");
        }
        if self.decoder_widths.len() + 1 != self.encoder_widths.len() || self.decoder_widths.contains(&0) {
            return bad("decoder needs one width per encoder stage minus one");
        }
        if self.temporal_kernel < 2 || self.frames < self.temporal_kernel || (self.frames - 1) % (self.temporal_kernel - 1) != 0 {
            return bad("temporal kernel must reduce the frame count to exactly one");
        }
        if self.latent_width == 0 || self.horizons == 0 || self.bin_count < 2 {
            return bad("latent width and horizons must be positive, at least two bins");
        }
        if self.sky_channels == 0 || self.sat_channels == 0 {
            return bad("channel counts must be positive");
        }
        match self.mode {
            Mode::Deterministic if !self.heads.scalar => bad("deterministic mode needs the scalar head"),
            Mode::Probabilistic if !self.heads.distribution => bad("probabilistic mode needs the distribution head"),
            _ if self.alpha > 0.0 && !self.heads.cloud_map => bad("alpha > 0 needs the cloud map head"),
            _ => Ok(()),
        }
    }

    /// Temporal convolutions applied until a single latent frame remains.
    pub fn temporal_stages(&self) -> usize {
        let mut n = self.frames;
        let mut s = 0;
        while n > 1 && self.temporal_kernel > 1 {
            n = n.saturating_sub(self.temporal_kernel - 1).max(1);
            s += 1;
        }
        s
    }

    pub fn latent_resolution(&self) -> usize {
        self.input_resolution >> self.encoder_widths.len()
    }

    /// Channels fed to the sky encoder per frame.
    pub fn sky_in(&self) -> usize {
        self.sky_channels + usize::from(self.inputs.irradiance && self.inputs.sky)
    }

    pub fn sat_in(&self) -> usize {
        self.sat_channels + usize::from(self.inputs.irradiance && !self.inputs.sky)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.temporal_stages(), 2);
        assert_eq!(c.latent_resolution(), 16);
    }

    #[test]
    fn rejects_no_image_input() {
        let c = ModelConfig {
            inputs: Inputs {
                sky: false,
                satellite: false,
                irradiance: true,
            },
            ..ModelConfig::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(serde_json::from_str::<ModelConfig>(r#"{"alpha": 1.0, "alhpa": 2.0}"#).is_err());
        let c: ModelConfig = serde_json::from_str(r#"{"alpha": 1000.0}"#).unwrap();
        assert_eq!(c.alpha, 1000.0);
    }
}
