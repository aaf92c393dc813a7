//! Loopback first-party and store servers plus helpers for writing albums.
#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use r2o_core::cache::MappingsCache;
use r2o_core::codec::{PseudoImage, QrConfig};
use r2o_core::filter::FilterConfig;
use r2o_core::firstparty::{serve_firstparty, AlbumId, FirstPartyApi, FirstPartyServer, HttpFirstParty};
use r2o_core::pipeline::{write_path, WriteContext, WriteReceipt};
use r2o_core::store::{serve_store, ContentItem, MemoryStore, Provider, StoreServer};

pub struct Services {
    pub fp: FirstPartyServer,
    pub store: StoreServer,
    pub objects: Arc<MemoryStore>,
    pub provider: Provider,
    pub client: HttpFirstParty,
    pub qr: QrConfig,
    pub filter: FilterConfig,
    pub writer_cache: MappingsCache,
}

impl Services {
    pub async fn start(firstparty_delay_ms: u64, offsite_delay_ms: u64) -> Self {
        let fp = serve_firstparty("127.0.0.1:0", Duration::from_millis(firstparty_delay_ms))
            .await
            .unwrap();
        let objects = Arc::new(MemoryStore::seeded(11));
        let backing = Provider::new("offsite", "http://offsite.invalid", objects.clone())
            .with_latency(Duration::from_millis(offsite_delay_ms));
        let store = serve_store("127.0.0.1:0", backing).await.unwrap();
        let provider = store.client_provider("offsite");
        let client = fp.client();
        Self {
            fp,
            store,
            objects,
            provider,
            client,
            qr: QrConfig::default(),
            filter: FilterConfig::default(),
            writer_cache: MappingsCache::default(),
        }
    }

    pub async fn album(&self, title: &str) -> AlbumId {
        self.client.create_album(title).await.unwrap()
    }

    pub fn page_url(&self, album: &AlbumId) -> String {
        self.client.album_page_url(album)
    }

    pub async fn write(&self, album: &AlbumId, item: ContentItem) -> WriteReceipt {
        let ctx = WriteContext::new(&self.provider, &self.client, &self.qr, &self.filter, &self.writer_cache);
        write_path(&ctx, item, Some("photo"), album).await.unwrap()
    }

    pub async fn shutdown(self) {
        self.fp.shutdown().await;
        self.store.shutdown().await;
    }
}

/// A random grayscale PNG standing in for a user's photo.
pub fn photo(seed: u64, width: u32, height: u32) -> ContentItem {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut pixels = vec![0u8; (width * height) as usize];
    rng.fill_bytes(&mut pixels);
    let image = PseudoImage {
        width,
        height,
        pixels,
        quiet_zone: 0,
        symbol_bounds: None,
    };
    ContentItem::new(image.to_png(), "image/png")
}
