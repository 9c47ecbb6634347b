//! The per-edit denoising loop with background consistency guidance (BCG).
//!
//! Each step's output is kept only inside the new mask; everything outside is
//! copied from the previous layer's memorized latent at the same timestep, so
//! the previous image never has to be re-encoded or re-noised. The
//! latent-blending (LB) mode is the baseline: it rebuilds that outside
//! context by forward-noising the previous final latent at every step and
//! counts each such pass.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::{forward_noise, scheduler_step, Conditioning, Denoiser};
use crate::error::{Error, Result};
use crate::hash::mix64;
use crate::latent::{sample_init_latent, Latent};
use crate::mask::{partition, Mask, RegionPartition};
use crate::memory::{LayerMemory, LayerRecord};
use crate::prompt::PromptEmbedding;

const LB_NOISE_SALT: u64 = 0x4c42_5f6e_6f69_7365;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlendMode {
    /// Read the previous layer's latents from memory.
    Bcg,
    /// Forward-noise the previous final latent at every step.
    Lb,
}

impl fmt::Display for BlendMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BlendMode::Bcg => "bcg",
            BlendMode::Lb => "lb",
        })
    }
}

/// Instrumented counters for one denoising run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub mode: BlendMode,
    /// Guided denoiser predictions.
    pub denoiser_calls: u64,
    /// Base cost proxy: denoiser calls times transformer blocks.
    pub omega: u64,
    /// Passes over the previous image (forward-noising) in LB mode.
    pub forward_cost: u64,
    pub wall_time_ms: f64,
}

impl CostReport {
    fn new(mode: BlendMode) -> Self {
        Self {
            mode,
            denoiser_calls: 0,
            omega: 0,
            forward_cost: 0,
            wall_time_ms: 0.0,
        }
    }

    /// Measured `C_f / Omega`.
    pub fn r(&self) -> f64 {
        if self.omega == 0 {
            0.0
        } else {
            self.forward_cost as f64 / self.omega as f64
        }
    }

    /// `(Omega + C_f) / Omega`: the cost of this run relative to a run that
    /// skips the forward passes.
    pub fn efficiency_gain(&self) -> f64 {
        if self.omega == 0 {
            1.0
        } else {
            (self.omega + self.forward_cost) as f64 / self.omega as f64
        }
    }
}

/// Closed-form cost comparison between latent blending and BCG.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub omega: f64,
    pub forward_cost: f64,
    pub cost_lb: f64,
    pub cost_bcg: f64,
    pub r: f64,
    pub efficiency_gain: f64,
}

/// `Omega = T * L`, `C_f = r * Omega`, `Cost_LB = (1 + r) Omega`,
/// `Cost_BCG = Omega`.
pub fn cost_model(steps: usize, layers: usize, height: usize, width: usize, r: f64) -> Result<CostModel> {
    if steps == 0 || layers == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidConfig(
            "cost model sizes must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&r) {
        return Err(Error::InvalidRatio(r));
    }
    let omega = (steps * layers) as f64;
    let forward_cost = r * omega;
    let cost_lb = forward_cost + omega;
    Ok(CostModel {
        omega,
        forward_cost,
        cost_lb,
        cost_bcg: omega,
        r,
        efficiency_gain: cost_lb / omega,
    })
}

/// `out = z_block_out * m + z_prev * (1 - m)`, with the mask broadcast over
/// channels. Cells outside the mask are copied, not recomputed.
pub fn bcg_blend(z_block_out: &Latent, z_prev: &Latent, mask: &Mask) -> Result<Latent> {
    z_block_out.check_same_shape(z_prev)?;
    z_block_out.check_mask(mask)?;
    let cells = z_prev.cells();
    let mut out = z_prev.clone();
    for (ch_out, ch_new) in out
        .data_mut()
        .chunks_exact_mut(cells)
        .zip(z_block_out.data().chunks_exact(cells))
    {
        for ((o, &n), &inside) in ch_out.iter_mut().zip(ch_new).zip(mask.bits()) {
            if inside {
                *o = n;
            }
        }
    }
    Ok(out)
}

/// One denoising step as seen by an observer.
#[derive(Debug)]
pub struct StepEvent<'a> {
    /// Timestep the denoiser was called at; the step produces level `t - 1`.
    pub t: usize,
    pub prediction: &'a Latent,
    /// Latent the step output was blended against, when a blend happened.
    pub blend_target: Option<&'a Latent>,
    pub output: &'a Latent,
}

/// Result of one edit's denoising loop.
#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub record: LayerRecord,
    pub partition: RegionPartition,
    pub cost: CostReport,
}

/// Conditionings for every layer in memory, in order.
pub fn memory_conditionings(memory: &LayerMemory) -> Vec<Conditioning> {
    memory
        .records()
        .iter()
        .map(|r| Conditioning {
            label: r.label.clone(),
            embedding: r.prompt.clone(),
        })
        .collect()
}

/// Denoises the background layer from fresh noise with a single region.
pub fn run_background_denoise(
    denoiser: &dyn Denoiser,
    memory: &LayerMemory,
    label: &str,
    prompt: PromptEmbedding,
    seed: u64,
) -> Result<EditOutcome> {
    let dims = memory.dims();
    let steps = dims.steps;
    let blocks = denoiser.config().blocks as u64;
    let part = RegionPartition::single(0, dims.width, dims.height);
    let cond = Conditioning {
        label: label.to_string(),
        embedding: prompt.clone(),
    };
    let mut cost = CostReport::new(BlendMode::Bcg);
    let start = Instant::now();

    let mut trajectory = vec![Latent::zeros(0, 0, 0); steps + 1];
    let mut z = sample_init_latent(seed, 0, dims.channels, dims.height, dims.width);
    trajectory[steps] = z.clone();
    for t in (1..=steps).rev() {
        let pred = denoiser.predict(&z, t, &part, &[&cond])?;
        cost.denoiser_calls += 1;
        cost.omega += blocks;
        z = scheduler_step(&z, &pred, t, steps)?;
        trajectory[t - 1] = z.clone();
    }
    cost.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(EditOutcome {
        record: LayerRecord {
            label: label.to_string(),
            prompt,
            trajectory,
            mask: Mask::full(dims.width, dims.height),
        },
        partition: part,
        cost,
    })
}

/// Runs one add-edit over the current memory without modifying it.
pub fn run_edit_denoise(
    denoiser: &dyn Denoiser,
    memory: &LayerMemory,
    label: &str,
    prompt: PromptEmbedding,
    mask: &Mask,
    seed: u64,
    mode: BlendMode,
) -> Result<EditOutcome> {
    run_edit_denoise_observed(denoiser, memory, label, prompt, mask, seed, mode, &mut |_| {})
}

/// [`run_edit_denoise`] with a callback after every step.
#[allow(clippy::too_many_arguments)]
pub fn run_edit_denoise_observed(
    denoiser: &dyn Denoiser,
    memory: &LayerMemory,
    label: &str,
    prompt: PromptEmbedding,
    mask: &Mask,
    seed: u64,
    mode: BlendMode,
    observer: &mut dyn FnMut(&StepEvent<'_>),
) -> Result<EditOutcome> {
    let dims = memory.dims();
    let steps = dims.steps;
    if memory.is_empty() {
        return Err(Error::InvalidConfig(
            "an edit needs the background layer in memory".into(),
        ));
    }
    if mask.dims() != (dims.width, dims.height) {
        return Err(Error::dims(
            format!("{}x{}", dims.width, dims.height),
            format!("{}x{}", mask.width(), mask.height()),
        ));
    }
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }

    let layer = memory.len();
    let prev = layer - 1;
    let mut masks = memory.masks();
    masks.push(mask.clone());
    let part = partition(&masks)?;
    let mut conds = memory_conditionings(memory);
    conds.push(Conditioning {
        label: label.to_string(),
        embedding: prompt.clone(),
    });
    let cond_refs: Vec<&Conditioning> = conds.iter().collect();
    let blocks = denoiser.config().blocks as u64;
    let prev_final = memory.latent_at(prev, 0)?;
    let noise_key = mix64(mix64(seed, layer as u64), LB_NOISE_SALT);

    let mut cost = CostReport::new(mode);
    let start = Instant::now();
    let mut trajectory = vec![Latent::zeros(0, 0, 0); steps + 1];

    let init = sample_init_latent(seed, layer, dims.channels, dims.height, dims.width);
    let mut z = match mode {
        BlendMode::Bcg => bcg_blend(&init, memory.latent_at(prev, steps)?, mask)?,
        // A target noised all the way to level T carries nothing of the
        // previous image, so the baseline starts from the raw noise.
        BlendMode::Lb => init,
    };
    trajectory[steps] = z.clone();

    for t in (1..=steps).rev() {
        let pred = denoiser.predict(&z, t, &part, &cond_refs)?;
        cost.denoiser_calls += 1;
        cost.omega += blocks;
        let stepped = scheduler_step(&z, &pred, t, steps)?;
        let noised;
        let target = match mode {
            BlendMode::Bcg => memory.latent_at(prev, t - 1)?,
            BlendMode::Lb => {
                noised = forward_noise(prev_final, t - 1, steps, noise_key)?;
                cost.forward_cost += 1;
                &noised
            }
        };
        z = bcg_blend(&stepped, target, mask)?;
        observer(&StepEvent {
            t,
            prediction: &pred,
            blend_target: Some(target),
            output: &z,
        });
        trajectory[t - 1] = z.clone();
    }
    cost.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;

    Ok(EditOutcome {
        record: LayerRecord {
            label: label.to_string(),
            prompt,
            trajectory,
            mask: mask.clone(),
        },
        partition: part,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize) -> Mask {
        Mask::from_fn(w, h, |x, y| (x + y) % 2 == 0)
    }

    #[test]
    fn blend_identities() {
        let a = crate::latent::sample_init_latent(1, 0, 3, 4, 4);
        let b = crate::latent::sample_init_latent(2, 0, 3, 4, 4);
        assert_eq!(bcg_blend(&a, &b, &Mask::empty(4, 4)).unwrap(), b);
        assert_eq!(bcg_blend(&a, &b, &Mask::full(4, 4)).unwrap(), a);
    }

    #[test]
    fn blend_checkerboard_matches_elementwise() {
        let a = crate::latent::sample_init_latent(1, 0, 3, 4, 5);
        let b = crate::latent::sample_init_latent(2, 0, 3, 4, 5);
        let m = checker(5, 4);
        let out = bcg_blend(&a, &b, &m).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..5 {
                    let mv = m.get(x, y) as u8 as f32;
                    let expect = a.get(c, y, x) * mv + b.get(c, y, x) * (1.0 - mv);
                    assert_eq!(out.get(c, y, x), expect);
                }
            }
        }
    }

    #[test]
    fn blend_rejects_mismatched_dims() {
        let a = crate::latent::sample_init_latent(1, 0, 3, 4, 4);
        let b = crate::latent::sample_init_latent(2, 0, 3, 4, 5);
        assert!(bcg_blend(&a, &b, &Mask::full(4, 4)).is_err());
        assert!(bcg_blend(&a, &a, &Mask::full(5, 4)).is_err());
    }

    #[test]
    fn analytic_cost_model() {
        let zero = cost_model(20, 4, 16, 16, 0.0).unwrap();
        assert_eq!(zero.efficiency_gain, 1.0);
        assert_eq!(zero.cost_bcg, 80.0);
        let tenth = cost_model(20, 4, 16, 16, 0.1).unwrap();
        assert!((tenth.efficiency_gain - 1.1).abs() < 1e-12);
        assert!(matches!(cost_model(20, 4, 16, 16, 1.0), Err(Error::InvalidRatio(_))));
        assert!(matches!(cost_model(20, 4, 16, 16, -0.1), Err(Error::InvalidRatio(_))));
        assert!(cost_model(0, 4, 16, 16, 0.1).is_err());
    }
}
