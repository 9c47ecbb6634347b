//! Prompt-keyed pattern generator. Each owner's region gets a flat color plus
//! a stripe or dot texture derived from a hash of its label, so any composite
//! can be checked cell by cell against an owner lookup.

use super::{check_owners, Conditioning, Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::hash::fnv1a;
use crate::latent::Latent;
use crate::mask::RegionPartition;

const TEXTURE_AMPLITUDE: f32 = 0.25;

/// Pattern value of `label` at latent cell `(x, y)`: RGB-ish channels 0..3 and
/// a label-id channel 3. Values stay inside `[-0.85, 0.85]`.
pub fn procedural_pattern(label: &str, x: usize, y: usize) -> [f32; 4] {
    let h = fnv1a(label.as_bytes());
    let byte = |shift: u32| ((h >> shift) & 0xff) as f32 / 255.0;
    let period = 2 + ((h >> 28) % 3) as usize;
    let on = match (h >> 24) % 3 {
        0 => (y / period).is_multiple_of(2),
        1 => (x / period).is_multiple_of(2),
        _ => x.is_multiple_of(period) && y.is_multiple_of(period),
    };
    let tex = if on { TEXTURE_AMPLITUDE } else { -TEXTURE_AMPLITUDE };
    let id = ((h >> 32) & 0xffff) as f32 / 65535.0 * 1.7 - 0.85;
    [
        byte(0) * 1.2 - 0.6 + tex,
        byte(8) * 1.2 - 0.6 + tex,
        byte(16) * 1.2 - 0.6 + tex,
        id,
    ]
}

/// Fade-in applied to the pattern: `min(1, 2 (T - t) / T)`.
pub fn fade_in(t: usize, steps: usize) -> f32 {
    (2.0 * (steps - t.min(steps)) as f32 / steps as f32).min(1.0)
}

/// Renders every partition region with its owner's pattern. `labels[j]`
/// names owner `j`.
pub fn procedural_predict(
    labels: &[&str],
    partition: &RegionPartition,
    t: usize,
    steps: usize,
    channels: usize,
) -> Result<Latent> {
    check_owners(partition, labels.len())?;
    let (w, h) = partition.dims();
    let fade = fade_in(t, steps);
    let mut out = Latent::zeros(channels, h, w);
    for entry in partition.entries() {
        let label = labels[entry.owner];
        for y in 0..h {
            for x in 0..w {
                if !entry.region.get(x, y) {
                    continue;
                }
                let pattern = procedural_pattern(label, x, y);
                for (ch, &v) in pattern.iter().enumerate().take(channels) {
                    out.set(ch, y, x, fade * v);
                }
            }
        }
    }
    Ok(out)
}

/// The procedural backend. It ignores the noisy input (beyond its shape) and
/// the guidance scale.
#[derive(Debug, Clone)]
pub struct ProceduralDenoiser {
    config: DenoiserConfig,
}

impl ProceduralDenoiser {
    pub fn new(config: DenoiserConfig) -> Self {
        Self { config }
    }
}

impl Denoiser for ProceduralDenoiser {
    fn backend(&self) -> super::Backend {
        super::Backend::Procedural
    }

    fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    fn predict(
        &self,
        latent: &Latent,
        t: usize,
        partition: &RegionPartition,
        conds: &[&Conditioning],
    ) -> Result<Latent> {
        if partition.dims() != (latent.width(), latent.height()) {
            return Err(Error::dims(
                format!("{}x{}", latent.width(), latent.height()),
                format!("{:?}", partition.dims()),
            ));
        }
        let labels: Vec<&str> = conds.iter().map(|c| c.label.as_str()).collect();
        procedural_predict(&labels, partition, t, self.config.steps, latent.channels())
    }
}
