//! Pluggable denoisers. Both backends predict a clean latent from a noisy one
//! under a [`RegionPartition`] that routes every cell to exactly one owner's
//! prompt.

mod dit;
mod procedural;
mod scheduler;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use dit::{
    cross_attention, mqd_cross_attention, timestep_embedding, AttentionTrace, BlockActivations,
    BlockWeights, DitWeights, Linear, ToyDit,
};
pub use procedural::{procedural_pattern, procedural_predict, ProceduralDenoiser};
pub use scheduler::{alpha_bar, cfg_combine, forward_noise, scheduler_step};

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::mask::RegionPartition;
use crate::prompt::PromptEmbedding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Transformer block count (K).
    pub blocks: usize,
    pub d_model: usize,
    pub heads: usize,
    /// Total denoising steps (T).
    pub steps: usize,
    pub guidance_scale: f32,
    pub weight_seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            d_model: 64,
            heads: 4,
            steps: 20,
            guidance_scale: 7.5,
            weight_seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::InvalidConfig("need at least one block".into()));
        }
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::InvalidConfig("d_model must be even".into()));
        }
        if self.steps < 2 {
            return Err(Error::InvalidConfig(format!("steps {} < 2", self.steps)));
        }
        if !self.guidance_scale.is_finite() {
            return Err(Error::InvalidConfig("guidance scale must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    ToyDit,
    Procedural,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::ToyDit => "toy-dit",
            Backend::Procedural => "procedural",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy-dit" => Ok(Backend::ToyDit),
            "procedural" => Ok(Backend::Procedural),
            other => Err(Error::InvalidConfig(format!("unknown backend {other:?}"))),
        }
    }
}

/// What one partition owner is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub label: String,
    pub embedding: PromptEmbedding,
}

pub trait Denoiser: Send + Sync {
    fn backend(&self) -> Backend;

    fn config(&self) -> &DenoiserConfig;

    /// One (guided) prediction of the clean latent at timestep `t`.
    /// `conds[j]` conditions partition owner `j`.
    fn predict(
        &self,
        latent: &Latent,
        t: usize,
        partition: &RegionPartition,
        conds: &[&Conditioning],
    ) -> Result<Latent>;
}

pub fn build_denoiser(
    backend: Backend,
    config: &DenoiserConfig,
    channels: usize,
) -> Result<Arc<dyn Denoiser>> {
    config.validate()?;
    Ok(match backend {
        Backend::ToyDit => Arc::new(ToyDit::new(config.clone(), channels)?),
        Backend::Procedural => Arc::new(ProceduralDenoiser::new(config.clone())),
    })
}

pub(crate) fn check_owners(partition: &RegionPartition, owners: usize) -> Result<()> {
    match partition.owners().find(|&o| o >= owners) {
        Some(o) => Err(Error::InvalidConfig(format!(
            "partition owner {o} has no conditioning ({owners} given)"
        ))),
        None => Ok(()),
    }
}
