//! Mask uploads: run-length JSON or base64 PNG, at image or latent
//! resolution.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use strata_core::mask::downsample_mask;
use strata_core::{Error, Mask, Result, RleMask, SessionConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskInput {
    Rle(RleMask),
    /// Base64 PNG; luma above 127 counts as set.
    Png(String),
}

impl MaskInput {
    pub fn decode(&self) -> Result<Mask> {
        match self {
            MaskInput::Rle(rle) => Mask::try_from(rle.clone()),
            MaskInput::Png(b64) => {
                let bytes = STANDARD
                    .decode(b64.trim())
                    .map_err(|e| Error::InvalidEncoding(format!("base64: {e}")))?;
                Mask::from_png(&bytes)
            }
        }
    }
}

/// Brings a mask onto the latent grid. Image-resolution masks are
/// downsampled; latent-resolution masks pass through.
pub fn fit_mask(mask: &Mask, config: &SessionConfig) -> Result<Mask> {
    let latent = (config.latent_width, config.latent_height);
    let fitted = if mask.dims() == latent {
        mask.clone()
    } else if mask.dims() == config.image_dims() {
        downsample_mask(mask, latent.0, latent.1)?
    } else {
        return Err(Error::DimensionMismatch {
            expected: format!(
                "{}x{} (image) or {}x{} (latent)",
                config.image_dims().0,
                config.image_dims().1,
                latent.0,
                latent.1
            ),
            got: format!("{}x{}", mask.width(), mask.height()),
        });
    };
    if fitted.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(fitted)
}
