//! Write path and read path orchestration.
//!
//! Write: intercept → off-site upload → encode schema → first-party upload →
//! record mapping. Read: scan → filter → cache lookup → (fetch + decode on
//! miss) → off-site fetch → replace.

use std::sync::Arc;

use async_trait::async_trait;
use futures::future::join_all;
use parking_lot::Mutex;
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::cache::{CacheError, MappingEntry, MappingsCache};
use crate::codec::{decode_qr, encode_qr, pad_with_border, CodecError, IndirectionPayload, PseudoImage, QrConfig};
use crate::filter::{is_candidate, make_caption, Decision, ElementDescriptor, FilterConfig, RejectReason};
use crate::firstparty::{generate_preview_comment, AlbumId, FirstPartyApi, FirstPartyError, PhotoId};
use crate::locator::{ContentLocator, MediaClass};
use crate::rewriter::{data_url, rewrite_html, scan_html, Replacement, ReplacementMode, RewriteError};
use crate::store::{ContentItem, Provider, StoreError};

/// Default bound on concurrent decodes during a read.
pub const DEFAULT_PARALLELISM: usize = 8;

/// Bound on concurrent network fetches during a read.
pub const MAX_IN_FLIGHT_FETCHES: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("first party: {0}")]
    FirstParty(#[from] FirstPartyError),
    #[error("codec: {0}")]
    Codec(#[from] CodecError),
    #[error("cache: {0}")]
    Cache(#[from] CacheError),
    #[error("rewrite: {0}")]
    Rewrite(#[from] RewriteError),
    #[error("page unreachable: {0}")]
    PageUnreachable(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WriteReceipt {
    pub offsite_locator: ContentLocator,
    pub pseudo_locator: ContentLocator,
    pub photo_id: PhotoId,
    pub album_id: AlbumId,
}

/// Everything a write needs besides the item itself.
pub struct WriteContext<'a> {
    pub provider: &'a Provider,
    pub firstparty: &'a dyn FirstPartyApi,
    pub qr: &'a QrConfig,
    pub filter: &'a FilterConfig,
    pub cache: &'a MappingsCache,
    /// Pad the schema to these dimensions before upload.
    pub border_target: Option<(u32, u32)>,
    /// Also post a preview comment carrying the off-site locator.
    pub preview_comment: bool,
}

impl<'a> WriteContext<'a> {
    pub fn new(
        provider: &'a Provider,
        firstparty: &'a dyn FirstPartyApi,
        qr: &'a QrConfig,
        filter: &'a FilterConfig,
        cache: &'a MappingsCache,
    ) -> Self {
        Self {
            provider,
            firstparty,
            qr,
            filter,
            cache,
            border_target: None,
            preview_comment: false,
        }
    }
}

fn schema_for(ctx: &WriteContext<'_>, offsite: &ContentLocator) -> Result<PseudoImage, CodecError> {
    let image = encode_qr(&IndirectionPayload::image(offsite.clone()), ctx.qr)?;
    match ctx.border_target {
        Some((w, h)) => pad_with_border(&image, w, h),
        None => Ok(image),
    }
}

/// Hosts `image` off-site and places a QR schema for it on the first party.
/// The original bytes are never sent to the first party. If anything fails
/// after the off-site upload and before the schema is placed, the off-site
/// object is deleted again.
pub async fn write_path(
    ctx: &WriteContext<'_>,
    image: ContentItem,
    caption: Option<&str>,
    album: &AlbumId,
) -> Result<WriteReceipt, PipelineError> {
    image.validate()?;
    let offsite = ctx.provider.upload(image).await?;

    let placed = async {
        let png = schema_for(ctx, &offsite)?.to_png();
        let caption = make_caption(caption, ctx.filter);
        let uploaded = ctx
            .firstparty
            .upload_photo(album, ContentItem::new(png, "image/png"), &caption)
            .await?;
        Ok::<_, PipelineError>(uploaded)
    }
    .await;
    let uploaded = match placed {
        Ok(u) => u,
        Err(e) => {
            let _ = ctx.provider.delete(&offsite).await;
            return Err(e);
        }
    };

    let entry = MappingEntry::new(uploaded.static_url.clone(), offsite.clone(), MediaClass::Image)?;
    ctx.cache.record_created(entry);
    if ctx.preview_comment {
        generate_preview_comment(ctx.firstparty, &uploaded.photo_id, &offsite).await?;
    }
    Ok(WriteReceipt {
        offsite_locator: offsite,
        pseudo_locator: uploaded.static_url,
        photo_id: uploaded.photo_id,
        album_id: album.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unexpected status {status} for {url}")]
    Status { url: String, status: u16 },
    #[error("unreachable: {0}")]
    Unreachable(String),
}

/// Retrieves content by URL for the read path.
#[async_trait]
pub trait Fetcher: Send + Sync {
    async fn fetch(&self, url: &str) -> Result<ContentItem, FetchError>;
}

#[derive(Debug, Clone)]
pub struct HttpFetcher {
    client: reqwest::Client,
}

impl HttpFetcher {
    pub fn new() -> Self {
        Self {
            client: crate::store::http_client(),
        }
    }
}

impl Default for HttpFetcher {
    fn default() -> Self {
        Self::new()
    }
}

#[async_trait]
impl Fetcher for HttpFetcher {
    async fn fetch(&self, url: &str) -> Result<ContentItem, FetchError> {
        let unreachable = |e: reqwest::Error| FetchError::Unreachable(format!("{url}: {e}"));
        let resp = self.client.get(url).send().await.map_err(unreachable)?;
        let status = resp.status();
        if status == reqwest::StatusCode::NOT_FOUND {
            return Err(FetchError::NotFound(url.to_owned()));
        }
        if !status.is_success() {
            return Err(FetchError::Status {
                url: url.to_owned(),
                status: status.as_u16(),
            });
        }
        let media_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("application/octet-stream")
            .to_owned();
        let bytes = resp.bytes().await.map_err(unreachable)?;
        Ok(ContentItem::new(bytes, media_type))
    }
}

/// Records every requested URL before delegating.
pub struct RecordingFetcher<F> {
    inner: F,
    log: Mutex<Vec<String>>,
}

impl<F: Fetcher> RecordingFetcher<F> {
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<String> {
        self.log.lock().clone()
    }

    pub fn count_for(&self, url: &str) -> usize {
        self.log.lock().iter().filter(|u| *u == url).count()
    }

    pub fn clear(&self) {
        self.log.lock().clear();
    }
}

#[async_trait]
impl<F: Fetcher> Fetcher for RecordingFetcher<F> {
    async fn fetch(&self, url: &str) -> Result<ContentItem, FetchError> {
        self.log.lock().push(url.to_owned());
        self.inner.fetch(url).await
    }
}

#[async_trait]
impl<T: Fetcher + ?Sized> Fetcher for Arc<T> {
    async fn fetch(&self, url: &str) -> Result<ContentItem, FetchError> {
        (**self).fetch(url).await
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Via {
    CacheHit,
    Decoded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Replaced {
        offsite_locator: ContentLocator,
        item: ContentItem,
        via: Via,
    },
    /// `reason` is set when the filter rejected the element; `None` means
    /// it was fetched but did not hold a schema.
    NotIndirection { reason: Option<RejectReason> },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub element: ElementDescriptor,
    pub outcome: Outcome,
}

impl Resolution {
    pub fn is_replaced(&self) -> bool {
        matches!(self.outcome, Outcome::Replaced { .. })
    }

    pub fn via(&self) -> Option<Via> {
        match self.outcome {
            Outcome::Replaced { via, .. } => Some(via),
            _ => None,
        }
    }
}

/// Everything a read needs besides the elements.
pub struct ReadContext<'a> {
    pub filter: &'a FilterConfig,
    pub cache: &'a MappingsCache,
    pub fetcher: &'a dyn Fetcher,
    /// Bound on concurrent decodes.
    pub parallelism: usize,
}

impl<'a> ReadContext<'a> {
    pub fn new(filter: &'a FilterConfig, cache: &'a MappingsCache, fetcher: &'a dyn Fetcher) -> Self {
        Self {
            filter,
            cache,
            fetcher,
            parallelism: DEFAULT_PARALLELISM,
        }
    }
}

struct Limits {
    decode: Semaphore,
    fetch: Semaphore,
}

impl Limits {
    async fn fetch(&self, fetcher: &dyn Fetcher, url: &str) -> Result<ContentItem, FetchError> {
        let _permit = self.fetch.acquire().await.expect("semaphore is never closed");
        fetcher.fetch(url).await
    }
}

enum Decoded {
    Schema(ContentLocator),
    NotSchema,
    Failed(String),
}

async fn decode_pseudo(limits: &Limits, bytes: bytes::Bytes) -> Decoded {
    let _permit = limits.decode.acquire().await.expect("semaphore is never closed");
    let result = tokio::task::spawn_blocking(move || {
        let image = PseudoImage::from_png(&bytes)?;
        decode_qr(&image)
    })
    .await;
    match result {
        Ok(Ok(payload)) if payload.media_class == MediaClass::Image => Decoded::Schema(payload.locator),
        Ok(Ok(_)) => Decoded::NotSchema,
        Ok(Err(CodecError::NotAQrSymbol | CodecError::Png(_))) => Decoded::NotSchema,
        Ok(Err(e)) => Decoded::Failed(e.to_string()),
        Err(e) => Decoded::Failed(format!("decode task failed: {e}")),
    }
}

async fn fetch_offsite(limits: &Limits, ctx: &ReadContext<'_>, offsite: ContentLocator, via: Via) -> Outcome {
    match limits.fetch(ctx.fetcher, offsite.as_str()).await {
        Ok(item) => Outcome::Replaced {
            offsite_locator: offsite,
            item,
            via,
        },
        Err(e) => Outcome::Failed(format!("off-site fetch: {e}")),
    }
}

async fn resolve_one(limits: &Limits, ctx: &ReadContext<'_>, element: &ElementDescriptor) -> Outcome {
    if let Decision::Rejected(reason) = is_candidate(element, ctx.filter) {
        return Outcome::NotIndirection { reason: Some(reason) };
    }
    let Ok(pseudo) = ContentLocator::parse(&element.source_url) else {
        return Outcome::Failed(format!("not an absolute locator: {}", element.source_url));
    };
    if let Some(offsite) = ctx.cache.lookup(&pseudo) {
        return fetch_offsite(limits, ctx, offsite, Via::CacheHit).await;
    }
    let bytes = match limits.fetch(ctx.fetcher, pseudo.as_str()).await {
        Ok(item) => item.bytes,
        Err(e) => return Outcome::Failed(format!("pseudo fetch: {e}")),
    };
    let offsite = match decode_pseudo(limits, bytes).await {
        Decoded::Schema(l) => l,
        Decoded::NotSchema => return Outcome::NotIndirection { reason: None },
        Decoded::Failed(e) => return Outcome::Failed(e),
    };
    match MappingEntry::new(pseudo, offsite.clone(), MediaClass::Image) {
        Ok(entry) => ctx.cache.record_resolved(entry),
        Err(e) => return Outcome::Failed(e.to_string()),
    }
    fetch_offsite(limits, ctx, offsite, Via::Decoded).await
}

/// Resolves every element; candidates are processed concurrently. Network
/// fetches overlap freely (up to [`MAX_IN_FLIGHT_FETCHES`]) while decodes are
/// bounded by `ctx.parallelism`.
pub async fn read_path(ctx: &ReadContext<'_>, elements: &[ElementDescriptor]) -> Vec<Resolution> {
    let limits = Limits {
        decode: Semaphore::new(ctx.parallelism.max(1)),
        fetch: Semaphore::new(MAX_IN_FLIGHT_FETCHES),
    };
    let outcomes = join_all(elements.iter().map(|e| resolve_one(&limits, ctx, e))).await;
    elements
        .iter()
        .cloned()
        .zip(outcomes)
        .map(|(element, outcome)| Resolution { element, outcome })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ResolvedPage {
    pub html: Vec<u8>,
    pub resolutions: Vec<Resolution>,
}

impl ResolvedPage {
    pub fn replaced(&self) -> usize {
        self.resolutions.iter().filter(|r| r.is_replaced()).count()
    }
}

/// Fetches a page, resolves its schemata and rewrites them in place.
pub async fn resolve_page(
    ctx: &ReadContext<'_>,
    page_url: &str,
    mode: ReplacementMode,
) -> Result<ResolvedPage, PipelineError> {
    let base = url::Url::parse(page_url).map_err(|e| PipelineError::PageUnreachable(format!("{page_url}: {e}")))?;
    let page = ctx
        .fetcher
        .fetch(page_url)
        .await
        .map_err(|e| PipelineError::PageUnreachable(e.to_string()))?;
    let scan = scan_html(&page.bytes);
    let elements: Vec<ElementDescriptor> = scan
        .elements
        .iter()
        .map(|s| {
            let mut d = s.descriptor.clone();
            if let Ok(abs) = base.join(&crate::html::unescape(&d.source_url)) {
                d.source_url = abs.into();
            }
            d
        })
        .collect();
    let resolutions = read_path(ctx, &elements).await;
    let replacements: Vec<Replacement> = scan
        .elements
        .iter()
        .zip(&resolutions)
        .filter_map(|(scanned, r)| match &r.outcome {
            Outcome::Replaced {
                offsite_locator, item, ..
            } => {
                let src = match mode {
                    ReplacementMode::SrcSwap => offsite_locator.to_string(),
                    ReplacementMode::Inline => data_url(item),
                };
                Some(Replacement::for_element(scanned, &src))
            }
            _ => None,
        })
        .collect();
    let html = rewrite_html(&page.bytes, &replacements)?;
    Ok(ResolvedPage { html, resolutions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::CacheConfig;
    use crate::firstparty::{FirstParty, RecordingFirstParty};
    use crate::store::MemoryStore;
    use std::collections::HashMap;
    use std::time::Duration;

    /// Serves in-process first-party photos and provider objects without HTTP.
    struct LocalFetcher {
        fp: Arc<FirstParty>,
        provider: Provider,
        extra: HashMap<String, ContentItem>,
    }

    #[async_trait]
    impl Fetcher for LocalFetcher {
        async fn fetch(&self, url: &str) -> Result<ContentItem, FetchError> {
            if let Some(item) = self.extra.get(url) {
                return Ok(item.clone());
            }
            if let Some(rest) = url.strip_prefix(&format!("{}/fp/", self.fp.base_url())) {
                if let Some(album) = rest.strip_prefix("albums/").and_then(|r| r.strip_suffix("/page")) {
                    return self
                        .fp
                        .render_album_page(&AlbumId(album.to_owned()))
                        .map(|h| ContentItem::new(h.into_bytes(), "text/html"))
                        .map_err(|_| FetchError::NotFound(url.into()));
                }
                let id = rest
                    .strip_prefix("photos/")
                    .and_then(|r| r.strip_suffix(".png"))
                    .ok_or_else(|| FetchError::NotFound(url.into()))?;
                return self
                    .fp
                    .photo(&PhotoId(id.to_owned()))
                    .map(|p| p.image)
                    .ok_or_else(|| FetchError::NotFound(url.into()));
            }
            let loc = ContentLocator::parse(url).map_err(|_| FetchError::NotFound(url.into()))?;
            self.provider
                .fetch(&loc)
                .await
                .map_err(|e| FetchError::Unreachable(e.to_string()))
        }
    }

    fn provider() -> Provider {
        Provider::new("mem", "http://offsite.example", Arc::new(MemoryStore::seeded(7)))
    }

    fn original() -> ContentItem {
        let img = crate::codec::encode_locator_qr("http://unrelated.example/x", &QrConfig::default()).unwrap();
        let mut bytes = img.to_png();
        bytes.extend_from_slice(b"trailing bytes that make this unique");
        ContentItem::new(bytes, "image/png")
    }

    struct Fixture {
        fp: Arc<FirstParty>,
        provider: Provider,
        writer_cache: MappingsCache,
        qr: QrConfig,
        filter: FilterConfig,
    }

    impl Fixture {
        fn new() -> Self {
            Self {
                fp: Arc::new(FirstParty::new("http://fp.example", Duration::ZERO)),
                provider: provider(),
                writer_cache: MappingsCache::new(CacheConfig::default()),
                qr: QrConfig::default(),
                filter: FilterConfig::default(),
            }
        }

        fn fetcher(&self) -> LocalFetcher {
            LocalFetcher {
                fp: self.fp.clone(),
                provider: self.provider.clone(),
                extra: HashMap::new(),
            }
        }

        async fn write(&self, album: &AlbumId, item: ContentItem) -> WriteReceipt {
            let ctx = WriteContext::new(&self.provider, &*self.fp, &self.qr, &self.filter, &self.writer_cache);
            write_path(&ctx, item, Some("hello"), album).await.unwrap()
        }
    }

    #[tokio::test]
    async fn write_then_read_round_trip() {
        let fx = Fixture::new();
        let album = fx.fp.create_album("a");
        let item = original();
        let receipt = fx.write(&album, item.clone()).await;
        assert_ne!(receipt.offsite_locator, receipt.pseudo_locator);
        assert_eq!(fx.provider.fetch(&receipt.offsite_locator).await.unwrap().bytes, item.bytes);
        assert_eq!(fx.writer_cache.lookup(&receipt.pseudo_locator), Some(receipt.offsite_locator.clone()));

        let photo = fx.fp.photo(&receipt.photo_id).unwrap();
        let decoded = decode_qr(&PseudoImage::from_png(&photo.image.bytes).unwrap()).unwrap();
        assert_eq!(decoded.locator, receipt.offsite_locator);
        assert_eq!(photo.caption, "r2o:1 hello");

        let reader_cache = MappingsCache::new(CacheConfig::default());
        let fetcher = RecordingFetcher::new(fx.fetcher());
        let ctx = ReadContext::new(&fx.filter, &reader_cache, &fetcher);
        let url = fx.fp.album_page_url(&album);
        let cold = resolve_page(&ctx, &url, ReplacementMode::SrcSwap).await.unwrap();
        assert_eq!(cold.resolutions[0].via(), Some(Via::Decoded));
        let html = String::from_utf8(cold.html).unwrap();
        assert!(html.contains(&format!("src=\"{}\"", receipt.offsite_locator)));

        fetcher.clear();
        let warm = resolve_page(&ctx, &url, ReplacementMode::SrcSwap).await.unwrap();
        assert_eq!(warm.resolutions[0].via(), Some(Via::CacheHit));
        assert_eq!(fetcher.count_for(receipt.pseudo_locator.as_str()), 0);

        let inline = resolve_page(&ctx, &url, ReplacementMode::Inline).await.unwrap();
        assert!(String::from_utf8(inline.html).unwrap().contains(&data_url(&item)));
    }

    #[tokio::test]
    async fn first_party_never_sees_original_bytes() {
        let fx = Fixture::new();
        let rec = RecordingFirstParty::new(FirstParty::new("http://fp.example", Duration::ZERO));
        let album = rec.create_album("a").await.unwrap();
        let item = original();
        let ctx = WriteContext::new(&fx.provider, &rec, &fx.qr, &fx.filter, &fx.writer_cache);
        let receipt = write_path(&ctx, item.clone(), None, &album).await.unwrap();
        assert!(!rec.saw_bytes(&item.bytes));
        assert_eq!(fx.provider.fetch(&receipt.offsite_locator).await.unwrap().bytes, item.bytes);
    }

    #[tokio::test]
    async fn failed_placement_deletes_offsite_object() {
        let fx = Fixture::new();
        let store = Arc::new(MemoryStore::seeded(1));
        let provider = Provider::new("mem", "http://offsite.example", store.clone());
        let ctx = WriteContext::new(&provider, &*fx.fp, &fx.qr, &fx.filter, &fx.writer_cache);
        let err = write_path(&ctx, original(), None, &AlbumId("missing".into())).await.unwrap_err();
        assert!(matches!(err, PipelineError::FirstParty(FirstPartyError::AlbumNotFound)));
        assert_eq!(store.len(), 0);
    }

    #[tokio::test]
    async fn preview_comment_and_border() {
        let fx = Fixture::new();
        let album = fx.fp.create_album("a");
        let mut ctx = WriteContext::new(&fx.provider, &*fx.fp, &fx.qr, &fx.filter, &fx.writer_cache);
        ctx.preview_comment = true;
        ctx.border_target = Some((800, 800));
        let r = write_path(&ctx, original(), None, &album).await.unwrap();
        let photo = fx.fp.photo(&r.photo_id).unwrap();
        assert_eq!((photo.width, photo.height), (800, 800));
        assert_eq!(photo.comments[0].preview_locator.as_ref(), Some(&r.offsite_locator));
    }

    #[tokio::test]
    async fn rejected_elements_issue_no_fetch() {
        let fx = Fixture::new();
        let cache = MappingsCache::new(CacheConfig::default());
        let fetcher = RecordingFetcher::new(fx.fetcher());
        let ctx = ReadContext::new(&fx.filter, &cache, &fetcher);
        let e = ElementDescriptor::new("http://fp.example/fp/photos/1.png", 512, 300, "png").with_caption("r2o:1");
        let r = read_path(&ctx, &[e]).await;
        assert_eq!(r[0].outcome, Outcome::NotIndirection { reason: Some(RejectReason::AspectRatio) });
        assert!(fetcher.requests().is_empty());
    }

    #[tokio::test]
    async fn non_schema_and_failures_are_isolated() {
        let fx = Fixture::new();
        let album = fx.fp.create_album("a");
        let good = fx.write(&album, original()).await;
        let plain = fx
            .fp
            .upload_photo(&album, ContentItem::new(original().bytes, "image/png"), "r2o:1")
            .unwrap();
        let cache = MappingsCache::new(CacheConfig::default());
        let fetcher = fx.fetcher();
        let ctx = ReadContext::new(&fx.filter, &cache, &fetcher);
        let mk = |u: &str| ElementDescriptor::new(u, 512, 512, "png").with_caption("r2o:1");
        let elements = [
            mk("http://fp.example/fp/photos/999.png"),
            mk(plain.static_url.as_str()),
            mk(good.pseudo_locator.as_str()),
        ];
        let r = read_path(&ctx, &elements).await;
        assert!(matches!(r[0].outcome, Outcome::Failed(_)));
        // The "plain" photo is itself a QR of an unrelated URL, which is a schema
        // pointing at an unreachable store.
        assert!(matches!(r[1].outcome, Outcome::Failed(_)));
        assert!(r[2].is_replaced());
        assert_eq!(cache.stats().recent, 2);
    }

    #[tokio::test]
    async fn non_qr_png_is_not_indirection() {
        let fx = Fixture::new();
        let mut fetcher = fx.fetcher();
        let blank = PseudoImage {
            width: 512,
            height: 512,
            pixels: vec![255; 512 * 512],
            quiet_zone: 0,
            symbol_bounds: None,
        };
        let url = "http://fp.example/fp/photos/blank.png";
        fetcher.extra.insert(url.into(), ContentItem::new(blank.to_png(), "image/png"));
        let cache = MappingsCache::new(CacheConfig::default());
        let ctx = ReadContext::new(&fx.filter, &cache, &fetcher);
        let e = ElementDescriptor::new(url, 512, 512, "png").with_caption("r2o:1");
        assert_eq!(read_path(&ctx, &[e]).await[0].outcome, Outcome::NotIndirection { reason: None });
    }
}
