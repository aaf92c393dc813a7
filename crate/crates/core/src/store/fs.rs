use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use async_trait::async_trait;
use parking_lot::Mutex;
use rand::rngs::StdRng;
use rand::SeedableRng;

use super::{ContentItem, ObjectId, ObjectStore, StoreError};

/// Stores `<root>/<id>` (bytes) and `<root>/<id>.meta` (media type, one line).
#[derive(Debug)]
pub struct FsStore {
    root: PathBuf,
    rng: Mutex<StdRng>,
}

fn io_err(e: std::io::Error) -> StoreError {
    match e.kind() {
        ErrorKind::NotFound => StoreError::NotFound,
        _ => StoreError::StoreUnavailable(e.to_string()),
    }
}

impl FsStore {
    pub fn open(root: impl Into<PathBuf>, seed: u64) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(io_err)?;
        Ok(Self {
            root,
            rng: Mutex::new(StdRng::seed_from_u64(seed)),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn paths(&self, id: &ObjectId) -> (PathBuf, PathBuf) {
        (
            self.root.join(id.as_str()),
            self.root.join(format!("{id}.meta")),
        )
    }
}

#[async_trait]
impl ObjectStore for FsStore {
    async fn put(&self, item: ContentItem) -> Result<ObjectId, StoreError> {
        loop {
            let id = ObjectId::random(&mut *self.rng.lock());
            let (data, meta) = self.paths(&id);
            // Claim the id by creating the metadata file exclusively.
            let claimed = tokio::fs::OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(&meta)
                .await;
            match claimed {
                Ok(_) => {}
                Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(io_err(e)),
            }
            let tmp = self.root.join(format!(".{id}.tmp"));
            tokio::fs::write(&tmp, &item.bytes).await.map_err(io_err)?;
            tokio::fs::rename(&tmp, &data).await.map_err(io_err)?;
            tokio::fs::write(&meta, format!("{}\n", item.media_type))
                .await
                .map_err(io_err)?;
            return Ok(id);
        }
    }

    async fn get(&self, id: &ObjectId) -> Result<ContentItem, StoreError> {
        let (data, meta) = self.paths(id);
        let media_type = tokio::fs::read_to_string(&meta).await.map_err(io_err)?;
        let bytes = tokio::fs::read(&data).await.map_err(io_err)?;
        Ok(ContentItem::new(bytes, media_type.trim_end_matches('\n')))
    }

    async fn delete(&self, id: &ObjectId) -> Result<(), StoreError> {
        let (data, meta) = self.paths(id);
        tokio::fs::remove_file(&data).await.map_err(io_err)?;
        match tokio::fs::remove_file(&meta).await {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(()),
            Err(e) => Err(io_err(e)),
        }
    }
}
