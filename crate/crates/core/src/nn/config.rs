use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters shared by the three VAEs and the decoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Joints per dancer (29 for the HybrIK skeleton).
    pub joints: usize,
    /// Coordinates per joint.
    pub coords: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub latent_dim: usize,
    pub lstm_layers: usize,
    pub conv_kernel: usize,
    pub decoder_layers: usize,
    pub ff_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            joints: 29,
            coords: 3,
            d_model: 64,
            n_heads: 8,
            latent_dim: 64,
            lstm_layers: 2,
            conv_kernel: 5,
            decoder_layers: 1,
            ff_dim: 256,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains in seconds on a CPU.
    pub fn desk(joints: usize) -> Self {
        Self {
            joints,
            coords: 3,
            d_model: 16,
            n_heads: 4,
            latent_dim: 8,
            lstm_layers: 2,
            conv_kernel: 5,
            decoder_layers: 1,
            ff_dim: 32,
        }
    }

    /// Width of one flattened frame.
    pub fn frame_dim(&self) -> usize {
        self.joints * self.coords
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("joints", self.joints),
            ("coords", self.coords),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("latent_dim", self.latent_dim),
            ("lstm_layers", self.lstm_layers),
            ("conv_kernel", self.conv_kernel),
            ("decoder_layers", self.decoder_layers),
            ("ff_dim", self.ff_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::arg(format!("model config `{name}` must be positive")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::arg(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::arg("d_model must be even for positional encoding"));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::arg("conv_kernel must be odd"));
        }
        Ok(())
    }
}
