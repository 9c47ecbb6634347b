use std::io::Cursor;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latent::Latent;

pub const DEFAULT_DECODE_SCALE: usize = 8;

/// 8-bit RGB raster, row-major, interleaved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img =
            image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .ok_or_else(|| Error::InvalidEncoding("rgb raster size".into()))?;
        let mut out = Vec::new();
        img.write_to(&mut Cursor::new(&mut out), image::ImageFormat::Png)?;
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data: img.into_raw(),
        })
    }

    /// Hex SHA-256 of the raw pixel bytes (dimensions included).
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        h.update(&self.data);
        hex_digest(h.finalize().as_slice())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Maps a latent value in `[-1, 1]` to a byte, rounding half up.
pub fn quantize(v: f32) -> u8 {
    let x = ((v + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0;
    (x + 0.5).floor() as u8
}

/// Channels 0..3 become RGB through `clamp((v + 1) / 2) * 255`; each latent
/// cell becomes a `scale x scale` block.
pub fn decode_latent(latent: &Latent, scale: usize) -> Result<RgbImage> {
    if latent.channels() < 3 {
        return Err(Error::InvalidConfig(format!(
            "decode needs 3 channels, latent has {}",
            latent.channels()
        )));
    }
    if scale == 0 {
        return Err(Error::InvalidConfig("decode scale must be positive".into()));
    }
    let (w, h) = (latent.width(), latent.height());
    let mut img = RgbImage::new(w * scale, h * scale);
    for y in 0..h * scale {
        for x in 0..w * scale {
            let (cx, cy) = (x / scale, y / scale);
            img.put_pixel(
                x,
                y,
                [
                    quantize(latent.get(0, cy, cx)),
                    quantize(latent.get(1, cy, cx)),
                    quantize(latent.get(2, cy, cx)),
                ],
            );
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_endpoints() {
        assert_eq!(quantize(-1.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 128);
        assert_eq!(quantize(-7.0), 0);
        assert_eq!(quantize(3.0), 255);
    }

    #[test]
    fn zero_latent_is_mid_gray() {
        let img = decode_latent(&Latent::zeros(4, 2, 2), 8).unwrap();
        assert_eq!((img.width, img.height), (16, 16));
        assert!(img.data.iter().all(|&b| b == 128));
    }

    #[test]
    fn upscale_keeps_blocks_constant() {
        let z = crate::latent::sample_init_latent(1, 0, 3, 3, 3);
        let img = decode_latent(&z, 8).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                assert_eq!(img.pixel(x, y), img.pixel(x / 8 * 8, y / 8 * 8));
            }
        }
    }

    #[test]
    fn too_few_channels() {
        assert!(decode_latent(&Latent::zeros(2, 2, 2), 8).is_err());
    }

    #[test]
    fn png_round_trip() {
        let z = crate::latent::sample_init_latent(1, 0, 3, 3, 3);
        let img = decode_latent(&z, 2).unwrap();
        assert_eq!(RgbImage::from_png(&img.to_png().unwrap()).unwrap(), img);
    }
}
