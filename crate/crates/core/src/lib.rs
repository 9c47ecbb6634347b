//! Mask-ordered iterative image editing over pluggable toy denoisers.
//!
//! Every edit is stored in a layer-wise memory (prompt embedding, full latent
//! trajectory, mask). New objects are denoised under region-routed
//! cross-attention and blended into the memorized latents of the layer below,
//! so content outside the new mask is copied rather than regenerated.

pub mod bcg;
pub mod bench;
pub mod decode;
pub mod denoiser;
pub mod error;
pub mod hash;
pub mod latent;
pub mod mask;
pub mod memory;
pub mod persist;
pub mod prompt;
pub mod session;

pub use bcg::{bcg_blend, cost_model, run_edit_denoise, BlendMode, CostModel, CostReport};
pub use decode::{decode_latent, RgbImage};
pub use denoiser::{Backend, Denoiser, DenoiserConfig};
pub use error::{Error, Result};
pub use latent::{sample_init_latent, Latent};
pub use mask::{Mask, RegionPartition, RleMask, Shape};
pub use memory::{LatentDims, LayerMemory, LayerRecord};
pub use prompt::{embed_prompt, PromptEmbedding};
pub use session::{EditCommand, EditSession, EditStats, SessionConfig};
