//! Session files: a JSON manifest plus one little-endian f32 blob per
//! `(layer, timestep)`.
//!
//! ```text
//! <dir>/session.json
//! <dir>/layers/000/t000.f32 .. t{T}.f32
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::mask::Mask;
use crate::memory::{LayerMemory, LayerRecord};
use crate::prompt::embed_prompt;
use crate::session::{EditCommand, EditSession, EditStats, SessionConfig};

pub const MANIFEST_FILE: &str = "session.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub index: usize,
    pub label: String,
    pub mask: Mask,
    /// Blob paths relative to the session directory, indexed by timestep.
    pub blobs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub format_version: u32,
    pub config: SessionConfig,
    pub edit_log: Vec<EditCommand>,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub stats: Vec<EditStats>,
}

impl SessionManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let manifest: SessionManifest = serde_json::from_slice(&fs::read(path)?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Persist(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }
        Ok(manifest)
    }
}

fn blob_name(layer: usize, t: usize) -> String {
    format!("layers/{layer:03}/t{t:03}.f32")
}

/// Resolves a path that may name the session directory or its manifest.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Writes the manifest and every trajectory blob under `dir`.
pub fn save_session(session: &EditSession, dir: &Path) -> Result<SessionManifest> {
    let layers_dir = dir.join("layers");
    if layers_dir.exists() {
        fs::remove_dir_all(&layers_dir)?;
    }
    let mut layers = Vec::with_capacity(session.memory().len());
    for (index, record) in session.memory().records().iter().enumerate() {
        fs::create_dir_all(dir.join(format!("layers/{index:03}")))?;
        let mut blobs = Vec::with_capacity(record.trajectory.len());
        for (t, z) in record.trajectory.iter().enumerate() {
            let name = blob_name(index, t);
            fs::write(dir.join(&name), z.to_le_bytes())?;
            blobs.push(name);
        }
        layers.push(LayerEntry {
            index,
            label: record.label.clone(),
            mask: record.mask.clone(),
            blobs,
        });
    }
    let manifest = SessionManifest {
        format_version: FORMAT_VERSION,
        config: session.config().clone(),
        edit_log: session.edit_log().to_vec(),
        layers,
        stats: session.stats().to_vec(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads a saved session from its blobs; nothing is recomputed.
pub fn load_session(path: &Path) -> Result<EditSession> {
    let manifest_file = manifest_path(path);
    let dir = manifest_file
        .parent()
        .ok_or_else(|| Error::Persist("manifest has no parent directory".into()))?;
    let manifest = SessionManifest::read(&manifest_file)?;
    let config = manifest.config.clone();
    let dims = config.latent_dims();
    let mut memory = LayerMemory::new(dims);
    for entry in &manifest.layers {
        if entry.blobs.len() != dims.steps + 1 {
            return Err(Error::Persist(format!(
                "layer {} lists {} blobs, expected {}",
                entry.index,
                entry.blobs.len(),
                dims.steps + 1
            )));
        }
        let trajectory = entry
            .blobs
            .iter()
            .map(|name| {
                let bytes = fs::read(dir.join(name))?;
                Latent::from_le_bytes(dims.channels, dims.height, dims.width, &bytes)
            })
            .collect::<Result<Vec<_>>>()?;
        memory.append_layer(LayerRecord {
            label: entry.label.clone(),
            prompt: embed_prompt(&entry.label, config.denoiser.d_model, config.embed_seed)?,
            trajectory,
            mask: entry.mask.clone(),
        })?;
    }
    EditSession::from_parts(config, memory, manifest.edit_log, manifest.stats)
}

/// The replayable part of a session: its config and edit log. A manifest
/// parses as one too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayLog {
    pub config: SessionConfig,
    pub edit_log: Vec<EditCommand>,
}

impl ReplayLog {
    pub fn of(session: &EditSession) -> Self {
        Self {
            config: session.config().clone(),
            edit_log: session.edit_log().to_vec(),
        }
    }

    pub fn replay(&self) -> Result<EditSession> {
        EditSession::replay(self.config.clone(), &self.edit_log)
    }
}

/// Re-runs an edit log from scratch. `path` may be a session directory, its
/// manifest, or a bare [`ReplayLog`] file.
pub fn replay_session_file(path: &Path) -> Result<EditSession> {
    let log: ReplayLog = serde_json::from_slice(&fs::read(manifest_path(path))?)?;
    log.replay()
}
