//! Session registry with per-session edit locks and snapshot reads.
//!
//! Edits take the session's async mutex with `try_lock`, so a second edit
//! while one is running is refused rather than queued. Reads never touch the
//! mutex: each edit publishes an immutable [`Snapshot`] when it finishes.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use strata_core::persist::ReplayLog;
use strata_core::session::EditStats;
use strata_core::{EditSession, Result, RgbImage, RleMask, SessionConfig};

/// PNG bytes keyed by the pixel checksum.
#[derive(Default)]
pub struct ImageStore {
    images: Mutex<HashMap<String, Arc<Vec<u8>>>>,
}

impl ImageStore {
    /// Stores `img` and returns its id.
    pub fn put(&self, img: &RgbImage) -> Result<String> {
        let id = img.checksum();
        let mut images = self.images.lock().expect("image store poisoned");
        if !images.contains_key(&id) {
            images.insert(id.clone(), Arc::new(img.to_png()?));
        }
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<Arc<Vec<u8>>> {
        self.images.lock().expect("image store poisoned").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.images.lock().expect("image store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerView {
    pub index: usize,
    pub label: String,
    /// Latent-resolution mask.
    pub mask: RleMask,
    pub checksum: String,
}

/// Everything a GET needs, frozen after each edit.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub image_id: String,
    pub image_size: (usize, usize),
    pub layers: Vec<LayerView>,
    pub stats: Vec<EditStats>,
    pub memory_bytes: usize,
    pub log: ReplayLog,
}

impl Snapshot {
    pub fn capture(session: &EditSession, images: &ImageStore) -> Result<Self> {
        let img = session.render()?;
        let layers = session
            .memory()
            .records()
            .iter()
            .enumerate()
            .map(|(index, r)| LayerView {
                index,
                label: r.label.clone(),
                mask: r.mask.to_rle(),
                checksum: r.checksum().iter().map(|b| format!("{b:02x}")).collect(),
            })
            .collect();
        Ok(Self {
            image_id: images.put(&img)?,
            image_size: (img.width, img.height),
            layers,
            stats: session.stats().to_vec(),
            memory_bytes: session.memory().memory_footprint(),
            log: ReplayLog::of(session),
        })
    }
}

pub struct SessionSlot {
    pub id: String,
    pub created_at: u64,
    pub session: Arc<tokio::sync::Mutex<EditSession>>,
    snapshot: RwLock<Arc<Snapshot>>,
}

impl SessionSlot {
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot poisoned").clone()
    }

    pub fn publish(&self, snapshot: Snapshot) {
        *self.snapshot.write().expect("snapshot poisoned") = Arc::new(snapshot);
    }
}

/// Limits and defaults for sessions created over HTTP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub defaults: SessionConfig,
    /// Largest latent side accepted from a request.
    pub max_latent_size: usize,
    pub max_steps: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            defaults: SessionConfig::default(),
            max_latent_size: 64,
            max_steps: 100,
        }
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    pub images: ImageStore,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            config,
            images: ImageStore::default(),
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn get(&self, id: &str) -> Option<Arc<SessionSlot>> {
        self.sessions.read().expect("registry poisoned").get(id).cloned()
    }

    pub fn insert(&self, session: EditSession, snapshot: Snapshot) -> Arc<SessionSlot> {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let slot = Arc::new(SessionSlot {
            id: format!("s{n:06}"),
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            session: Arc::new(tokio::sync::Mutex::new(session)),
            snapshot: RwLock::new(Arc::new(snapshot)),
        });
        self.sessions
            .write()
            .expect("registry poisoned")
            .insert(slot.id.clone(), slot.clone());
        slot
    }

    pub fn remove(&self, id: &str) -> Option<Arc<SessionSlot>> {
        self.sessions.write().expect("registry poisoned").remove(id)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("registry poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
