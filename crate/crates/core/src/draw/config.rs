use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Attention {
    /// Read the whole tile, write a full-canvas patch.
    Off,
    /// `n×n` Gaussian-grid glimpses for read and write.
    Grid { n: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawConfig {
    /// Number of read/write iterations `T`.
    pub steps: usize,
    pub z_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    /// Side of the square tile in pixels.
    pub tile_size: usize,
    pub channels: usize,
    pub attention: Attention,
}

impl Default for DrawConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            z_dim: 100,
            enc_hidden: 256,
            dec_hidden: 256,
            tile_size: 28,
            channels: 3,
            attention: Attention::Off,
        }
    }
}

impl DrawConfig {
    /// Small configuration used for gradient checks and smoke tests.
    pub fn tiny() -> Self {
        Self {
            steps: 2,
            z_dim: 3,
            enc_hidden: 5,
            dec_hidden: 5,
            tile_size: 8,
            channels: 3,
            attention: Attention::Off,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("steps", self.steps),
            ("z_dim", self.z_dim),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("tile_size", self.tile_size),
            ("channels", self.channels),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("draw config: {name} must be >= 1")));
        }
        if let Attention::Grid { n } = self.attention {
            if n < 2 {
                return Err(Error::invalid("attention grid must be at least 2×2"));
            }
        }
        Ok(())
    }

    pub fn tile_shape(&self) -> [usize; 3] {
        [self.tile_size, self.tile_size, self.channels]
    }

    pub fn tile_len(&self) -> usize {
        self.tile_size * self.tile_size * self.channels
    }

    /// Length of the read vector fed to the encoder.
    pub fn read_len(&self) -> usize {
        2 * self.write_len()
    }

    /// Length of the patch emitted by the write head.
    pub fn write_len(&self) -> usize {
        match self.attention {
            Attention::Off => self.tile_len(),
            Attention::Grid { n } => n * n * self.channels,
        }
    }
}
