use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::mix64;
use crate::mask::Mask;

/// `C x H x W` grid of 32-bit floats, channel-major then row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Latent {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Rejects wrong lengths and any NaN or infinity.
    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dims(channels * height * width, data.len()));
        }
        let latent = Self {
            channels,
            height,
            width,
            data,
        };
        latent.ensure_finite("latent")?;
        Ok(latent)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn byte_len(&self) -> usize {
        self.data.len() * std::mem::size_of::<f32>()
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn check_same_shape(&self, other: &Latent) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dims(
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    pub fn check_mask(&self, mask: &Mask) -> Result<()> {
        if mask.dims() != (self.width, self.height) {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", mask.width(), mask.height()),
            ));
        }
        Ok(())
    }

    /// Little-endian f32 bytes, channel then row-major.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(
        channels: usize,
        height: usize,
        width: usize,
        bytes: &[u8],
    ) -> Result<Self> {
        if bytes.len() != channels * height * width * 4 {
            return Err(Error::dims(channels * height * width * 4, bytes.len()));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::from_vec(channels, height, width, data)
    }
}

/// Standard-normal initial latent for one edit. The stream is ChaCha keyed by
/// `(seed, layer)`, so it is reproducible across platforms and distinct per
/// layer.
pub fn sample_init_latent(
    seed: u64,
    layer: usize,
    channels: usize,
    height: usize,
    width: usize,
) -> Latent {
    sample_normal(mix64(seed, layer as u64), channels, height, width)
}

pub(crate) fn sample_normal(key: u64, channels: usize, height: usize, width: usize) -> Latent {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let data = (0..channels * height * width)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Latent {
        channels,
        height,
        width,
        data,
    }
}
