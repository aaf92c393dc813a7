//! Off-site content hosting ("indirection providers").
//!
//! An [`ObjectStore`] keeps bytes under opaque 16-hex-character ids. A
//! [`Provider`] wraps a store with a name, a locator base URL, a payload cap
//! and an optional simulated latency, and speaks in [`ContentLocator`]s.

mod fs;
mod http;
mod memory;

use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::locator::ContentLocator;

pub use fs::FsStore;
pub use http::{serve_store, HttpStore, StoreServer};
pub(crate) use http::http_client;
pub use memory::MemoryStore;

/// Default upload cap.
pub const DEFAULT_MAX_PAYLOAD: usize = 16 * 1024 * 1024;

/// Path under which objects live, relative to a store's base URL.
pub const OBJECTS_PATH: &str = "/v1/objects/";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("object not found")]
    NotFound,
    #[error("store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("payload of {size} bytes exceeds the {limit}-byte limit")]
    PayloadTooLarge { size: usize, limit: usize },
    #[error("invalid content item: {0}")]
    InvalidItem(String),
    #[error("locator {0} does not belong to this store")]
    ForeignLocator(String),
    #[error("failed to bind {addr}: {reason}")]
    BindFailure { addr: String, reason: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Bytes plus their media type.
#[derive(Clone, PartialEq, Eq)]
pub struct ContentItem {
    pub bytes: bytes::Bytes,
    pub media_type: String,
}

impl ContentItem {
    pub fn new(bytes: impl Into<bytes::Bytes>, media_type: impl Into<String>) -> Self {
        Self {
            bytes: bytes.into(),
            media_type: media_type.into(),
        }
    }

    pub fn declared_length(&self) -> usize {
        self.bytes.len()
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.media_type.trim().is_empty() {
            return Err(StoreError::InvalidItem("media_type is empty".into()));
        }
        if self.media_type.contains(['\n', '\r']) {
            return Err(StoreError::InvalidItem("media_type contains a line break".into()));
        }
        Ok(())
    }
}

impl fmt::Debug for ContentItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContentItem")
            .field("len", &self.bytes.len())
            .field("media_type", &self.media_type)
            .finish()
    }
}

/// Opaque object id: 16 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(String);

impl ObjectId {
    pub fn parse(s: &str) -> Option<ObjectId> {
        (s.len() == 16 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')))
            .then(|| ObjectId(s.to_owned()))
    }

    pub fn random(rng: &mut impl RngCore) -> ObjectId {
        ObjectId(format!("{:016x}", rng.gen::<u64>()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[async_trait]
pub trait ObjectStore: Send + Sync + fmt::Debug {
    /// Stores under a fresh id; never deduplicates.
    async fn put(&self, item: ContentItem) -> Result<ObjectId, StoreError>;
    async fn get(&self, id: &ObjectId) -> Result<ContentItem, StoreError>;
    async fn delete(&self, id: &ObjectId) -> Result<(), StoreError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Memory,
    Filesystem,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderDescriptor {
    pub name: String,
    pub kind: ProviderKind,
    /// Locator prefix; objects live at `<base_url>/v1/objects/<id>`.
    pub base_url: String,
    #[serde(default, rename = "simulated_latency_ms")]
    pub simulated_latency_ms: Option<u64>,
    /// Storage directory for the filesystem kind.
    #[serde(default)]
    pub root: Option<std::path::PathBuf>,
}

impl ProviderDescriptor {
    pub fn memory(name: &str, latency_ms: u64) -> Self {
        Self {
            name: name.to_owned(),
            kind: ProviderKind::Memory,
            base_url: format!("http://{}.invalid", name.replace('_', "-")),
            simulated_latency_ms: Some(latency_ms),
            root: None,
        }
    }

    pub fn latency(&self) -> Duration {
        Duration::from_millis(self.simulated_latency_ms.unwrap_or(0))
    }
}

/// Median response times of eight hosting services for a 44 KB image,
/// shipped as memory-provider presets.
pub const LATENCY_PRESETS: [(&str, u64); 8] = [
    ("facebook_cdn", 11),
    ("imgur", 12),
    ("photobucket", 50),
    ("postimage", 51),
    ("flickr", 147),
    ("dropbox", 306),
    ("tinypic", 310),
    ("imageshack", 434),
];

pub fn latency_presets() -> Vec<ProviderDescriptor> {
    LATENCY_PRESETS
        .iter()
        .map(|&(name, ms)| ProviderDescriptor::memory(name, ms))
        .collect()
}

/// A named store addressed by locators.
#[derive(Debug, Clone)]
pub struct Provider {
    name: String,
    base_url: String,
    store: Arc<dyn ObjectStore>,
    latency: Duration,
    max_payload: usize,
}

impl Provider {
    pub fn new(name: impl Into<String>, base_url: impl Into<String>, store: Arc<dyn ObjectStore>) -> Self {
        Self {
            name: name.into(),
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            store,
            latency: Duration::ZERO,
            max_payload: DEFAULT_MAX_PAYLOAD,
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_max_payload(mut self, limit: usize) -> Self {
        self.max_payload = limit;
        self
    }

    /// Builds the provider a descriptor names. Memory stores are seeded from `seed`.
    pub fn from_descriptor(d: &ProviderDescriptor, seed: u64) -> Result<Self, StoreError> {
        let store: Arc<dyn ObjectStore> = match d.kind {
            ProviderKind::Memory => Arc::new(MemoryStore::seeded(seed)),
            ProviderKind::Filesystem => {
                let root = d.root.clone().ok_or_else(|| {
                    StoreError::InvalidArgument(format!("provider {} needs a root directory", d.name))
                })?;
                Arc::new(FsStore::open(root, seed)?)
            }
            ProviderKind::Http => Arc::new(HttpStore::new(&d.base_url)?),
        };
        Ok(Provider::new(&d.name, &d.base_url, store).with_latency(d.latency()))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn latency(&self) -> Duration {
        self.latency
    }

    pub fn max_payload(&self) -> usize {
        self.max_payload
    }

    pub fn store(&self) -> &Arc<dyn ObjectStore> {
        &self.store
    }

    pub fn locator_for(&self, id: &ObjectId) -> ContentLocator {
        ContentLocator::parse(&format!("{}{OBJECTS_PATH}{id}", self.base_url))
            .expect("provider base URL yields valid locators")
    }

    pub fn id_of(&self, locator: &ContentLocator) -> Result<ObjectId, StoreError> {
        locator
            .as_str()
            .strip_prefix(&self.base_url)
            .and_then(|rest| rest.strip_prefix(OBJECTS_PATH))
            .and_then(ObjectId::parse)
            .ok_or_else(|| StoreError::ForeignLocator(locator.to_string()))
    }

    async fn simulate_latency(&self) {
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
    }

    pub async fn upload(&self, item: ContentItem) -> Result<ContentLocator, StoreError> {
        item.validate()?;
        if item.bytes.len() > self.max_payload {
            return Err(StoreError::PayloadTooLarge {
                size: item.bytes.len(),
                limit: self.max_payload,
            });
        }
        self.simulate_latency().await;
        let id = self.store.put(item).await?;
        Ok(self.locator_for(&id))
    }

    pub async fn fetch(&self, locator: &ContentLocator) -> Result<ContentItem, StoreError> {
        let id = self.id_of(locator).map_err(|e| match e {
            // Well-formed URL under our base but with a bad id is just missing.
            StoreError::ForeignLocator(_) if locator.as_str().starts_with(&self.base_url) => {
                StoreError::NotFound
            }
            other => other,
        })?;
        self.simulate_latency().await;
        self.store.get(&id).await
    }

    pub async fn delete(&self, locator: &ContentLocator) -> Result<(), StoreError> {
        let id = self.id_of(locator)?;
        self.simulate_latency().await;
        self.store.delete(&id).await
    }
}

/// Uploads `item_size` random bytes once, then times `repetitions` fetches
/// spaced `interval` apart. Samples are in milliseconds.
pub async fn measure_store(
    provider: &Provider,
    item_size: usize,
    repetitions: usize,
    interval: Duration,
    rng: &mut impl RngCore,
) -> Result<Vec<f64>, StoreError> {
    if repetitions == 0 {
        return Err(StoreError::InvalidArgument("repetitions must be >= 1".into()));
    }
    let mut bytes = vec![0u8; item_size];
    rng.fill_bytes(&mut bytes);
    let locator = provider
        .upload(ContentItem::new(bytes, "application/octet-stream"))
        .await?;
    let mut samples = Vec::with_capacity(repetitions);
    for i in 0..repetitions {
        if i > 0 && !interval.is_zero() {
            tokio::time::sleep(interval).await;
        }
        let start = Instant::now();
        provider.fetch(&locator).await?;
        samples.push(start.elapsed().as_secs_f64() * 1000.0);
    }
    Ok(samples)
}
