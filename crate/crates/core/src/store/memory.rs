use std::collections::HashMap;

use async_trait::async_trait;
use parking_lot::Mutex;
use rand::rngs::StdRng;
use rand::SeedableRng;

use super::{ContentItem, ObjectId, ObjectStore, StoreError};

/// In-process store. Ids come from a seedable RNG.
#[derive(Debug)]
pub struct MemoryStore {
    objects: Mutex<HashMap<ObjectId, ContentItem>>,
    rng: Mutex<StdRng>,
}

impl MemoryStore {
    pub fn seeded(seed: u64) -> Self {
        Self {
            objects: Mutex::new(HashMap::new()),
            rng: Mutex::new(StdRng::seed_from_u64(seed)),
        }
    }

    pub fn len(&self) -> usize {
        self.objects.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether any stored object has exactly these bytes.
    pub fn contains_bytes(&self, bytes: &[u8]) -> bool {
        self.objects.lock().values().any(|i| i.bytes == bytes)
    }
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::seeded(rand::random())
    }
}

#[async_trait]
impl ObjectStore for MemoryStore {
    async fn put(&self, item: ContentItem) -> Result<ObjectId, StoreError> {
        let mut objects = self.objects.lock();
        let id = loop {
            let id = ObjectId::random(&mut *self.rng.lock());
            if !objects.contains_key(&id) {
                break id;
            }
        };
        objects.insert(id.clone(), item);
        Ok(id)
    }

    async fn get(&self, id: &ObjectId) -> Result<ContentItem, StoreError> {
        self.objects.lock().get(id).cloned().ok_or(StoreError::NotFound)
    }

    async fn delete(&self, id: &ObjectId) -> Result<(), StoreError> {
        self.objects.lock().remove(id).map(|_| ()).ok_or(StoreError::NotFound)
    }
}
