//! Session orchestration: background creation, mask-ordered additions,
//! deletion of occluded layers, rendering and replay.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bcg::{
    bcg_blend, memory_conditionings, run_background_denoise, run_edit_denoise, BlendMode,
    CostReport,
};
use crate::decode::{decode_latent, RgbImage, DEFAULT_DECODE_SCALE};
use crate::denoiser::{build_denoiser, scheduler_step, Backend, Conditioning, Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::mask::{partition, Mask};
use crate::memory::{LatentDims, LayerMemory, LayerRecord};
use crate::prompt::embed_prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub backend: Backend,
    pub denoiser: DenoiserConfig,
    pub channels: usize,
    pub latent_width: usize,
    pub latent_height: usize,
    pub decode_scale: usize,
    /// Keys every initial-noise draw.
    pub seed: u64,
    pub embed_seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            backend: Backend::ToyDit,
            denoiser: DenoiserConfig::default(),
            channels: 4,
            latent_width: 16,
            latent_height: 16,
            decode_scale: DEFAULT_DECODE_SCALE,
            seed: 0,
            embed_seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        self.denoiser.validate()?;
        if self.channels < 3 {
            return Err(Error::InvalidConfig(format!(
                "need at least 3 latent channels, got {}",
                self.channels
            )));
        }
        if self.latent_width == 0 || self.latent_height == 0 || self.decode_scale == 0 {
            return Err(Error::InvalidConfig("latent and decode sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn latent_dims(&self) -> LatentDims {
        LatentDims {
            channels: self.channels,
            height: self.latent_height,
            width: self.latent_width,
            steps: self.denoiser.steps,
        }
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (
            self.latent_width * self.decode_scale,
            self.latent_height * self.decode_scale,
        )
    }

    /// Deletion restart step: `ceil(0.4 T)`.
    pub fn deletion_tau(&self) -> usize {
        deletion_tau(self.denoiser.steps)
    }
}

pub fn deletion_tau(steps: usize) -> usize {
    (2 * steps).div_ceil(5)
}

/// One replayable session command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditCommand {
    Create { prompt: String },
    Add { prompt: String, mask: Mask },
    Delete { layer: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Create,
    Add,
    Delete,
}

/// Per-command accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditStats {
    pub op: EditOp,
    /// Layer created, added, or deleted.
    pub layer: usize,
    pub cost: CostReport,
    /// Deletion only: steps blended against the layer below the target.
    pub blended_steps: usize,
    /// Deletion only: plain steps after the switch.
    pub plain_steps: usize,
}

pub struct EditSession {
    config: SessionConfig,
    denoiser: Arc<dyn Denoiser>,
    memory: LayerMemory,
    edit_log: Vec<EditCommand>,
    stats: Vec<EditStats>,
}

impl std::fmt::Debug for EditSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EditSession")
            .field("config", &self.config)
            .field("layers", &self.memory.len())
            .field("edit_log", &self.edit_log)
            .finish()
    }
}

impl EditSession {
    /// Generates the background layer and starts the edit log.
    pub fn create(background_prompt: &str, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let denoiser = build_denoiser(config.backend, &config.denoiser, config.channels)?;
        Self::create_with(background_prompt, config, denoiser)
    }

    /// Like [`EditSession::create`] with a caller-supplied denoiser.
    pub fn create_with(
        background_prompt: &str,
        config: SessionConfig,
        denoiser: Arc<dyn Denoiser>,
    ) -> Result<Self> {
        config.validate()?;
        let prompt = embed_prompt(background_prompt, config.denoiser.d_model, config.embed_seed)?;
        let mut memory = LayerMemory::new(config.latent_dims());
        let outcome = run_background_denoise(
            denoiser.as_ref(),
            &memory,
            background_prompt,
            prompt,
            config.seed,
        )?;
        memory.append_layer(outcome.record)?;
        Ok(Self {
            config,
            denoiser,
            memory,
            edit_log: vec![EditCommand::Create {
                prompt: background_prompt.to_string(),
            }],
            stats: vec![EditStats {
                op: EditOp::Create,
                layer: 0,
                cost: outcome.cost,
                blended_steps: 0,
                plain_steps: 0,
            }],
        })
    }

    /// Rebuilds a session from scratch by re-running its edit log.
    pub fn replay(config: SessionConfig, log: &[EditCommand]) -> Result<Self> {
        let Some(EditCommand::Create { prompt }) = log.first() else {
            return Err(Error::Persist("edit log must start with create".into()));
        };
        let mut session = Self::create(prompt, config)?;
        for cmd in &log[1..] {
            session.apply(cmd)?;
        }
        Ok(session)
    }

    /// Applies one logged command.
    pub fn apply(&mut self, cmd: &EditCommand) -> Result<RgbImage> {
        match cmd {
            EditCommand::Create { .. } => Err(Error::Persist(
                "create may only appear first in an edit log".into(),
            )),
            EditCommand::Add { prompt, mask } => self.add_edit(prompt, mask),
            EditCommand::Delete { layer } => self.delete_edit(*layer),
        }
    }

    /// Reassembles a session from stored parts without recomputation.
    pub(crate) fn from_parts(
        config: SessionConfig,
        memory: LayerMemory,
        edit_log: Vec<EditCommand>,
        stats: Vec<EditStats>,
    ) -> Result<Self> {
        config.validate()?;
        let denoiser = build_denoiser(config.backend, &config.denoiser, config.channels)?;
        Ok(Self {
            config,
            denoiser,
            memory,
            edit_log,
            stats,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn memory(&self) -> &LayerMemory {
        &self.memory
    }

    pub fn edit_log(&self) -> &[EditCommand] {
        &self.edit_log
    }

    pub fn stats(&self) -> &[EditStats] {
        &self.stats
    }

    pub fn denoiser(&self) -> &Arc<dyn Denoiser> {
        &self.denoiser
    }

    /// Adds an object on top of every existing layer. `mask` is at latent
    /// resolution.
    pub fn add_edit(&mut self, prompt: &str, mask: &Mask) -> Result<RgbImage> {
        let embedding = embed_prompt(prompt, self.config.denoiser.d_model, self.config.embed_seed)?;
        let outcome = run_edit_denoise(
            self.denoiser.as_ref(),
            &self.memory,
            prompt,
            embedding,
            mask,
            self.config.seed,
            BlendMode::Bcg,
        )?;
        let layer = self.memory.append_layer(outcome.record)?;
        self.edit_log.push(EditCommand::Add {
            prompt: prompt.to_string(),
            mask: mask.clone(),
        });
        self.stats.push(EditStats {
            op: EditOp::Add,
            layer,
            cost: outcome.cost,
            blended_steps: 0,
            plain_steps: 0,
        });
        self.render()
    }

    /// Removes layer `target`.
    ///
    /// The topmost layer is dropped directly, since memory already holds the
    /// state beneath it. An occluded layer is erased by restarting the
    /// denoiser at `tau = ceil(0.4 T)` from a blend of the topmost layer
    /// (inside its mask) and the layer under the target (elsewhere), with the
    /// target's mask and prompt left out of the partition. Steps down to level
    /// `ceil(tau / 2)` are blended against the layer under the target; the
    /// rest run unblended.
    pub fn delete_edit(&mut self, target: usize) -> Result<RgbImage> {
        let len = self.memory.len();
        if target == 0 {
            return Err(Error::BackgroundLayer);
        }
        if target >= len {
            return Err(Error::OutOfRange { index: target, len });
        }
        let top = len - 1;
        if target == top {
            self.memory.remove_layer(target)?;
            self.log_delete(target, CostReport {
                mode: BlendMode::Bcg,
                denoiser_calls: 0,
                omega: 0,
                forward_cost: 0,
                wall_time_ms: 0.0,
            }, 0, 0);
            return self.render();
        }

        let start = std::time::Instant::now();
        let steps = self.config.denoiser.steps;
        let tau = self.config.deletion_tau();
        let switch = tau.div_ceil(2);
        let base = target - 1;
        let top_record = self.memory.record(top)?;
        let top_mask = top_record.mask.clone();

        let kept: Vec<usize> = (0..len).filter(|&i| i != target).collect();
        let masks: Vec<Mask> = kept
            .iter()
            .map(|&i| self.memory.records()[i].mask.clone())
            .collect();
        let part = partition(&masks)?;
        let all_conds = memory_conditionings(&self.memory);
        let conds: Vec<&Conditioning> = kept.iter().map(|&i| &all_conds[i]).collect();

        let mut trajectory = vec![Latent::zeros(0, 0, 0); steps + 1];
        for t in tau..=steps {
            trajectory[t] = bcg_blend(
                self.memory.latent_at(top, t)?,
                self.memory.latent_at(base, t)?,
                &top_mask,
            )?;
        }
        let mut z = trajectory[tau].clone();
        let mut calls = 0u64;
        let mut blended = 0;
        for t in (1..=tau).rev() {
            let pred = self.denoiser.predict(&z, t, &part, &conds)?;
            calls += 1;
            z = scheduler_step(&z, &pred, t, steps)?;
            if t > switch {
                z = bcg_blend(&z, self.memory.latent_at(base, t - 1)?, &top_mask)?;
                blended += 1;
            }
            trajectory[t - 1] = z.clone();
        }

        let rebuilt = LayerRecord {
            trajectory,
            ..top_record.clone()
        };
        self.memory.remove_layer(target)?;
        self.memory.replace_layer(top - 1, rebuilt)?;
        let cost = CostReport {
            mode: BlendMode::Bcg,
            denoiser_calls: calls,
            omega: calls * self.config.denoiser.blocks as u64,
            forward_cost: 0,
            wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        self.log_delete(target, cost, blended, tau - blended);
        self.render()
    }

    fn log_delete(&mut self, target: usize, cost: CostReport, blended: usize, plain: usize) {
        self.edit_log.push(EditCommand::Delete { layer: target });
        self.stats.push(EditStats {
            op: EditOp::Delete,
            layer: target,
            cost,
            blended_steps: blended,
            plain_steps: plain,
        });
    }

    /// Decodes the latest final latent.
    pub fn render(&self) -> Result<RgbImage> {
        let latest = self
            .memory
            .latest()
            .ok_or_else(|| Error::InvalidConfig("session has no layers".into()))?;
        decode_latent(latest.final_latent(), self.config.decode_scale)
    }
}
