//! A simulated first-party social service: albums of PNG photos with
//! captions and comments, rendered as HTML pages.
//!
//! HTTP API (all under `/fp`):
//!
//! ```text
//! POST /fp/albums                  body = title          -> 201 album_id
//! POST /fp/albums/{a}/photos       body = PNG, X-Caption -> 201 "photo_id\nstatic_url\n"
//! GET  /fp/photos/{id}.png                               -> 200 image/png
//! GET  /fp/albums/{a}/page                               -> 200 text/html
//! POST /fp/photos/{id}/comments    body = text, X-Author -> 201 comment index
//! ```
//!
//! `X-Caption` and `X-Author` carry percent-encoded UTF-8.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use parking_lot::{Mutex, RwLock};
use percent_encoding::{percent_decode_str, utf8_percent_encode, NON_ALPHANUMERIC};
use regex::Regex;
use thiserror::Error;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::html::escape;
use crate::locator::ContentLocator;
use crate::store::ContentItem;

/// Author name used for automatically generated preview comments.
pub const PREVIEW_AUTHOR: &str = "r2o";

/// Default delay before serving a photo, matching the Facebook CDN row of the latency table.
pub const DEFAULT_PHOTO_DELAY: Duration = Duration::from_millis(11);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FirstPartyError {
    #[error("album not found")]
    AlbumNotFound,
    #[error("photo not found")]
    PhotoNotFound,
    #[error("unsupported media type: {0}")]
    UnsupportedMediaType(String),
    #[error("first party unavailable: {0}")]
    Unavailable(String),
    #[error("failed to bind {addr}: {reason}")]
    BindFailure { addr: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AlbumId(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhotoId(pub String);

impl std::fmt::Display for AlbumId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for PhotoId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Album {
    pub album_id: AlbumId,
    pub title: String,
    pub photo_ids: Vec<PhotoId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comment {
    pub author: String,
    pub body: String,
    pub preview_locator: Option<ContentLocator>,
}

impl Comment {
    pub fn new(author: &str, body: &str) -> Self {
        Self {
            author: author.to_owned(),
            body: body.to_owned(),
            preview_locator: first_url(body),
        }
    }
}

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"https?://[^\s<>"']+"#).expect("static regex"));

fn first_url(body: &str) -> Option<ContentLocator> {
    URL_RE
        .find_iter(body)
        .find_map(|m| ContentLocator::parse(m.as_str()).ok())
}

#[derive(Debug, Clone)]
pub struct PhotoObject {
    pub photo_id: PhotoId,
    pub image: ContentItem,
    pub width: u32,
    pub height: u32,
    pub caption: String,
    pub comments: Vec<Comment>,
    pub static_url: ContentLocator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UploadedPhoto {
    pub photo_id: PhotoId,
    pub static_url: ContentLocator,
}

/// Width and height from a PNG header; `None` if the bytes are not a PNG.
pub fn png_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    let decoder = png::Decoder::new(bytes);
    let reader = decoder.read_info().ok()?;
    let info = reader.info();
    Some((info.width, info.height))
}

#[derive(Debug, Default)]
struct State_ {
    next_album: u64,
    next_photo: u64,
    albums: HashMap<AlbumId, Album>,
    photos: HashMap<PhotoId, PhotoObject>,
}

/// In-process service state.
#[derive(Debug)]
pub struct FirstParty {
    base_url: String,
    photo_delay: Duration,
    state: RwLock<State_>,
}

impl FirstParty {
    pub fn new(base_url: &str, photo_delay: Duration) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_owned(),
            photo_delay,
            state: RwLock::new(State_::default()),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn photo_delay(&self) -> Duration {
        self.photo_delay
    }

    pub fn album_page_url(&self, album: &AlbumId) -> String {
        format!("{}/fp/albums/{album}/page", self.base_url)
    }

    pub fn create_album(&self, title: &str) -> AlbumId {
        let mut s = self.state.write();
        s.next_album += 1;
        let id = AlbumId(format!("a{}", s.next_album));
        s.albums.insert(
            id.clone(),
            Album {
                album_id: id.clone(),
                title: title.to_owned(),
                photo_ids: Vec::new(),
            },
        );
        id
    }

    pub fn upload_photo(
        &self,
        album: &AlbumId,
        image: ContentItem,
        caption: &str,
    ) -> Result<UploadedPhoto, FirstPartyError> {
        if image.media_type != "image/png" {
            return Err(FirstPartyError::UnsupportedMediaType(image.media_type));
        }
        let (width, height) = png_dimensions(&image.bytes)
            .ok_or_else(|| FirstPartyError::UnsupportedMediaType("body is not a PNG".into()))?;
        let mut s = self.state.write();
        if !s.albums.contains_key(album) {
            return Err(FirstPartyError::AlbumNotFound);
        }
        s.next_photo += 1;
        let photo_id = PhotoId(format!("{}", s.next_photo));
        let static_url = ContentLocator::parse(&format!("{}/fp/photos/{photo_id}.png", self.base_url))
            .expect("service base URL yields valid locators");
        s.photos.insert(
            photo_id.clone(),
            PhotoObject {
                photo_id: photo_id.clone(),
                image,
                width,
                height,
                caption: caption.to_owned(),
                comments: Vec::new(),
                static_url: static_url.clone(),
            },
        );
        s.albums
            .get_mut(album)
            .expect("checked above")
            .photo_ids
            .push(photo_id.clone());
        Ok(UploadedPhoto {
            photo_id,
            static_url,
        })
    }

    /// Appends a comment; returns its index on the photo.
    pub fn add_comment(
        &self,
        photo: &PhotoId,
        author: &str,
        body: &str,
    ) -> Result<(usize, Comment), FirstPartyError> {
        let mut s = self.state.write();
        let p = s.photos.get_mut(photo).ok_or(FirstPartyError::PhotoNotFound)?;
        let comment = Comment::new(author, body);
        p.comments.push(comment.clone());
        Ok((p.comments.len() - 1, comment))
    }

    pub fn album(&self, album: &AlbumId) -> Option<Album> {
        self.state.read().albums.get(album).cloned()
    }

    pub fn photo(&self, photo: &PhotoId) -> Option<PhotoObject> {
        self.state.read().photos.get(photo).cloned()
    }

    /// Every photo body currently stored.
    pub fn all_photo_bytes(&self) -> Vec<Bytes> {
        self.state
            .read()
            .photos
            .values()
            .map(|p| p.image.bytes.clone())
            .collect()
    }

    pub fn render_album_page(&self, album: &AlbumId) -> Result<String, FirstPartyError> {
        let s = self.state.read();
        let a = s.albums.get(album).ok_or(FirstPartyError::AlbumNotFound)?;
        let mut html = String::new();
        let title = escape(&a.title);
        let _ = write!(
            html,
            "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n</head>\n<body>\n<h1>{title}</h1>\n<div class=\"album\" id=\"album-{}\">\n",
            escape(&a.album_id.0)
        );
        for pid in &a.photo_ids {
            let p = &s.photos[pid];
            let _ = write!(
                html,
                "<figure class=\"photo\" id=\"photo-{}\">\n<img src=\"{}\" width=\"{}\" height=\"{}\" alt=\"\">\n<figcaption class=\"caption\">{}</figcaption>\n",
                escape(&p.photo_id.0),
                escape(p.static_url.as_str()),
                p.width,
                p.height,
                escape(&p.caption)
            );
            if !p.comments.is_empty() {
                html.push_str("<ul class=\"comments\">\n");
                for c in &p.comments {
                    let _ = write!(
                        html,
                        "<li class=\"comment\"><span class=\"author\">{}</span> <span class=\"body\">{}</span>",
                        escape(&c.author),
                        escape(&c.body)
                    );
                    if let Some(l) = &c.preview_locator {
                        let l = escape(l.as_str());
                        let _ = write!(html, " <a rel=\"preview\" href=\"{l}\">{l}</a>");
                    }
                    html.push_str("</li>\n");
                }
                html.push_str("</ul>\n");
            }
            html.push_str("</figure>\n");
        }
        html.push_str("</div>\n</body>\n</html>\n");
        Ok(html)
    }
}

/// Operations a client performs against a first-party service.
#[async_trait]
pub trait FirstPartyApi: Send + Sync {
    async fn create_album(&self, title: &str) -> Result<AlbumId, FirstPartyError>;
    async fn upload_photo(
        &self,
        album: &AlbumId,
        image: ContentItem,
        caption: &str,
    ) -> Result<UploadedPhoto, FirstPartyError>;
    async fn add_comment(
        &self,
        photo: &PhotoId,
        author: &str,
        body: &str,
    ) -> Result<usize, FirstPartyError>;
}

#[async_trait]
impl FirstPartyApi for FirstParty {
    async fn create_album(&self, title: &str) -> Result<AlbumId, FirstPartyError> {
        Ok(FirstParty::create_album(self, title))
    }

    async fn upload_photo(
        &self,
        album: &AlbumId,
        image: ContentItem,
        caption: &str,
    ) -> Result<UploadedPhoto, FirstPartyError> {
        FirstParty::upload_photo(self, album, image, caption)
    }

    async fn add_comment(
        &self,
        photo: &PhotoId,
        author: &str,
        body: &str,
    ) -> Result<usize, FirstPartyError> {
        FirstParty::add_comment(self, photo, author, body).map(|(i, _)| i)
    }
}

/// Posts `original: <locator>` as a preview comment so viewers without a
/// resolver can still reach the content.
pub async fn generate_preview_comment(
    api: &dyn FirstPartyApi,
    photo: &PhotoId,
    offsite: &ContentLocator,
) -> Result<Comment, FirstPartyError> {
    let body = format!("original: {offsite}");
    api.add_comment(photo, PREVIEW_AUTHOR, &body).await?;
    Ok(Comment::new(PREVIEW_AUTHOR, &body))
}

/// HTTP client for the `/fp` API.
#[derive(Debug, Clone)]
pub struct HttpFirstParty {
    base_url: String,
    client: reqwest::Client,
}

impl HttpFirstParty {
    pub fn new(base_url: &str) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_owned(),
            client: crate::store::http_client(),
        }
    }

    pub fn album_page_url(&self, album: &AlbumId) -> String {
        format!("{}/fp/albums/{album}/page", self.base_url)
    }
}

fn fp_unavailable(e: reqwest::Error) -> FirstPartyError {
    FirstPartyError::Unavailable(e.to_string())
}

fn status_error(status: StatusCode, body: String) -> FirstPartyError {
    match status {
        StatusCode::UNSUPPORTED_MEDIA_TYPE => FirstPartyError::UnsupportedMediaType(body),
        StatusCode::NOT_FOUND if body.contains("album") => FirstPartyError::AlbumNotFound,
        StatusCode::NOT_FOUND => FirstPartyError::PhotoNotFound,
        s => FirstPartyError::Unavailable(format!("unexpected status {s}")),
    }
}

async fn expect_created(resp: reqwest::Response) -> Result<String, FirstPartyError> {
    let status = resp.status();
    let body = resp.text().await.map_err(fp_unavailable)?;
    if status == StatusCode::CREATED {
        Ok(body)
    } else {
        Err(status_error(status, body))
    }
}

#[async_trait]
impl FirstPartyApi for HttpFirstParty {
    async fn create_album(&self, title: &str) -> Result<AlbumId, FirstPartyError> {
        let resp = self
            .client
            .post(format!("{}/fp/albums", self.base_url))
            .body(title.to_owned())
            .send()
            .await
            .map_err(fp_unavailable)?;
        Ok(AlbumId(expect_created(resp).await?.trim().to_owned()))
    }

    async fn upload_photo(
        &self,
        album: &AlbumId,
        image: ContentItem,
        caption: &str,
    ) -> Result<UploadedPhoto, FirstPartyError> {
        let resp = self
            .client
            .post(format!("{}/fp/albums/{album}/photos", self.base_url))
            .header(header::CONTENT_TYPE, &image.media_type)
            .header("X-Caption", utf8_percent_encode(caption, NON_ALPHANUMERIC).to_string())
            .body(image.bytes)
            .send()
            .await
            .map_err(fp_unavailable)?;
        let body = expect_created(resp).await?;
        let mut lines = body.lines();
        let photo_id = lines.next().map(|s| PhotoId(s.to_owned()));
        let static_url = lines.next().and_then(|s| ContentLocator::parse(s).ok());
        match (photo_id, static_url) {
            (Some(photo_id), Some(static_url)) => Ok(UploadedPhoto {
                photo_id,
                static_url,
            }),
            _ => Err(FirstPartyError::Unavailable("malformed upload response".into())),
        }
    }

    async fn add_comment(
        &self,
        photo: &PhotoId,
        author: &str,
        body: &str,
    ) -> Result<usize, FirstPartyError> {
        let resp = self
            .client
            .post(format!("{}/fp/photos/{photo}/comments", self.base_url))
            .header("X-Author", utf8_percent_encode(author, NON_ALPHANUMERIC).to_string())
            .body(body.to_owned())
            .send()
            .await
            .map_err(fp_unavailable)?;
        expect_created(resp)
            .await?
            .trim()
            .parse()
            .map_err(|_| FirstPartyError::Unavailable("malformed comment response".into()))
    }
}

/// One request observed by [`RecordingFirstParty`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub operation: &'static str,
    /// Every byte the request carried (body plus text fields).
    pub payload: Vec<u8>,
}

/// Test double that records what is sent before forwarding to `inner`.
pub struct RecordingFirstParty<A> {
    inner: A,
    log: Mutex<Vec<RecordedRequest>>,
}

impl<A: FirstPartyApi> RecordingFirstParty<A> {
    pub fn new(inner: A) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.log.lock().clone()
    }

    /// Whether `needle` occurs inside any recorded payload.
    pub fn saw_bytes(&self, needle: &[u8]) -> bool {
        if needle.is_empty() {
            return false;
        }
        self.log
            .lock()
            .iter()
            .any(|r| r.payload.windows(needle.len()).any(|w| w == needle))
    }

    fn record(&self, operation: &'static str, parts: &[&[u8]]) {
        self.log.lock().push(RecordedRequest {
            operation,
            payload: parts.concat(),
        });
    }
}

#[async_trait]
impl<A: FirstPartyApi> FirstPartyApi for RecordingFirstParty<A> {
    async fn create_album(&self, title: &str) -> Result<AlbumId, FirstPartyError> {
        self.record("create_album", &[title.as_bytes()]);
        self.inner.create_album(title).await
    }

    async fn upload_photo(
        &self,
        album: &AlbumId,
        image: ContentItem,
        caption: &str,
    ) -> Result<UploadedPhoto, FirstPartyError> {
        self.record(
            "upload_photo",
            &[album.0.as_bytes(), &image.bytes, caption.as_bytes()],
        );
        self.inner.upload_photo(album, image, caption).await
    }

    async fn add_comment(
        &self,
        photo: &PhotoId,
        author: &str,
        body: &str,
    ) -> Result<usize, FirstPartyError> {
        self.record(
            "add_comment",
            &[photo.0.as_bytes(), author.as_bytes(), body.as_bytes()],
        );
        self.inner.add_comment(photo, author, body).await
    }
}

/// Handle to a running first-party server.
#[derive(Debug)]
pub struct FirstPartyServer {
    addr: SocketAddr,
    service: Arc<FirstParty>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl FirstPartyServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> &str {
        self.service.base_url()
    }

    pub fn service(&self) -> &Arc<FirstParty> {
        &self.service
    }

    pub fn client(&self) -> HttpFirstParty {
        HttpFirstParty::new(self.base_url())
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }

    pub async fn wait(mut self) {
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for FirstPartyServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Binds `bind` and serves a fresh service whose base URL is the bound address.
pub async fn serve_firstparty(
    bind: &str,
    photo_delay: Duration,
) -> Result<FirstPartyServer, FirstPartyError> {
    let bind_err = |e: std::io::Error| FirstPartyError::BindFailure {
        addr: bind.to_owned(),
        reason: e.to_string(),
    };
    let listener = tokio::net::TcpListener::bind(bind).await.map_err(bind_err)?;
    let addr = listener.local_addr().map_err(bind_err)?;
    let service = Arc::new(FirstParty::new(&format!("http://{addr}"), photo_delay));
    let app = Router::new()
        .route("/fp/albums", post(http_create_album))
        .route("/fp/albums/{album}/photos", post(http_upload_photo))
        .route("/fp/albums/{album}/page", get(http_album_page))
        .route("/fp/photos/{file}", get(http_photo))
        .route("/fp/photos/{photo}/comments", post(http_add_comment))
        .layer(axum::extract::DefaultBodyLimit::max(crate::store::DEFAULT_MAX_PAYLOAD))
        .with_state(service.clone());
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(FirstPartyServer {
        addr,
        service,
        shutdown: Some(tx),
        task: Some(task),
    })
}

fn fp_error_response(e: FirstPartyError) -> Response {
    let status = match e {
        FirstPartyError::AlbumNotFound | FirstPartyError::PhotoNotFound => StatusCode::NOT_FOUND,
        FirstPartyError::UnsupportedMediaType(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
        _ => StatusCode::SERVICE_UNAVAILABLE,
    };
    (status, e.to_string()).into_response()
}

fn header_text(headers: &HeaderMap, name: &str) -> String {
    headers
        .get(name)
        .and_then(|v| v.to_str().ok())
        .map(|v| percent_decode_str(v).decode_utf8_lossy().into_owned())
        .unwrap_or_default()
}

async fn http_create_album(State(s): State<Arc<FirstParty>>, body: Bytes) -> Response {
    let title = String::from_utf8_lossy(&body);
    let id = s.create_album(&title);
    (StatusCode::CREATED, id.0).into_response()
}

async fn http_upload_photo(
    State(s): State<Arc<FirstParty>>,
    Path(album): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let media_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("image/png")
        .to_owned();
    let caption = header_text(&headers, "X-Caption");
    match s.upload_photo(&AlbumId(album), ContentItem::new(body, media_type), &caption) {
        Ok(u) => (
            StatusCode::CREATED,
            format!("{}\n{}\n", u.photo_id, u.static_url),
        )
            .into_response(),
        Err(e) => fp_error_response(e),
    }
}

async fn http_album_page(State(s): State<Arc<FirstParty>>, Path(album): Path<String>) -> Response {
    match s.render_album_page(&AlbumId(album)) {
        Ok(html) => (
            StatusCode::OK,
            [(header::CONTENT_TYPE, "text/html; charset=utf-8")],
            html,
        )
            .into_response(),
        Err(e) => fp_error_response(e),
    }
}

async fn http_photo(State(s): State<Arc<FirstParty>>, Path(file): Path<String>) -> Response {
    let Some(id) = file.strip_suffix(".png") else {
        return fp_error_response(FirstPartyError::PhotoNotFound);
    };
    let Some(photo) = s.photo(&PhotoId(id.to_owned())) else {
        return fp_error_response(FirstPartyError::PhotoNotFound);
    };
    if !s.photo_delay.is_zero() {
        tokio::time::sleep(s.photo_delay).await;
    }
    (
        StatusCode::OK,
        [(header::CONTENT_TYPE, "image/png")],
        photo.image.bytes,
    )
        .into_response()
}

async fn http_add_comment(
    State(s): State<Arc<FirstParty>>,
    Path(photo): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let author = header_text(&headers, "X-Author");
    let text = String::from_utf8_lossy(&body);
    match s.add_comment(&PhotoId(photo), &author, &text) {
        Ok((index, _)) => (StatusCode::CREATED, index.to_string()).into_response(),
        Err(e) => fp_error_response(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{encode_qr, IndirectionPayload, QrConfig};

    fn qr_png() -> ContentItem {
        let p = IndirectionPayload::image(
            ContentLocator::parse("https://offsite.example/v1/objects/ab12").unwrap(),
        );
        ContentItem::new(encode_qr(&p, &QrConfig::default()).unwrap().to_png(), "image/png")
    }

    fn service() -> FirstParty {
        FirstParty::new("http://fp.example", Duration::ZERO)
    }

    #[test]
    fn albums_are_fresh() {
        let fp = service();
        let a = fp.create_album("Vacation");
        let b = fp.create_album("");
        assert_ne!(a, b);
        assert_eq!(fp.album(&a).unwrap().photo_ids.len(), 0);
        assert_eq!(fp.album(&b).unwrap().title, "");
    }

    #[test]
    fn upload_photo_rules() {
        let fp = service();
        let a = fp.create_album("x");
        let img = qr_png();
        let up = fp.upload_photo(&a, img.clone(), "r2o:1").unwrap();
        assert_eq!(up.static_url.path(), format!("/fp/photos/{}.png", up.photo_id));
        let stored = fp.photo(&up.photo_id).unwrap();
        assert_eq!(stored.image.bytes, img.bytes);
        assert_eq!((stored.width, stored.height), (512, 512));

        assert!(matches!(
            fp.upload_photo(&a, ContentItem::new(vec![0xff, 0xd8, 0xff], "image/jpeg"), ""),
            Err(FirstPartyError::UnsupportedMediaType(_))
        ));
        assert!(matches!(
            fp.upload_photo(&a, ContentItem::new(vec![1u8, 2, 3], "image/png"), ""),
            Err(FirstPartyError::UnsupportedMediaType(_))
        ));
        assert_eq!(
            fp.upload_photo(&AlbumId("nope".into()), img, ""),
            Err(FirstPartyError::AlbumNotFound)
        );
    }

    #[test]
    fn comments_detect_urls() {
        let fp = service();
        let a = fp.create_album("x");
        let up = fp.upload_photo(&a, qr_png(), "").unwrap();
        let (_, c) = fp.add_comment(&up.photo_id, "bob", "nice pic").unwrap();
        assert_eq!(c.preview_locator, None);
        let (i, c) = fp
            .add_comment(&up.photo_id, "bob", "original: https://offsite.example/v1/objects/ab12cd")
            .unwrap();
        assert_eq!(i, 1);
        assert_eq!(
            c.preview_locator.unwrap().as_str(),
            "https://offsite.example/v1/objects/ab12cd"
        );
        assert_eq!(
            fp.add_comment(&PhotoId("99".into()), "bob", "x"),
            Err(FirstPartyError::PhotoNotFound)
        );
    }

    #[test]
    fn page_lists_photos_in_order_with_previews() {
        let fp = service();
        let a = fp.create_album("Trip & <friends>");
        let p1 = fp.upload_photo(&a, qr_png(), "r2o:1 first").unwrap();
        let p2 = fp.upload_photo(&a, qr_png(), "r2o:1 second").unwrap();
        fp.add_comment(&p2.photo_id, "r2o", "original: https://o.example/v1/objects/0123456789abcdef")
            .unwrap();
        let html = fp.render_album_page(&a).unwrap();
        assert_eq!(html.matches("<img ").count(), 2);
        let i1 = html.find(p1.static_url.as_str()).unwrap();
        let i2 = html.find(p2.static_url.as_str()).unwrap();
        assert!(i1 < i2);
        assert!(html.contains("Trip &amp; &lt;friends&gt;"));
        assert!(html.contains(
            "<a rel=\"preview\" href=\"https://o.example/v1/objects/0123456789abcdef\">"
        ));
        assert!(html.contains("width=\"512\" height=\"512\""));
        assert_eq!(html, fp.render_album_page(&a).unwrap());
    }

    #[test]
    fn empty_album_page() {
        let fp = service();
        let a = fp.create_album("empty");
        let html = fp.render_album_page(&a).unwrap();
        assert!(html.starts_with("<!DOCTYPE html>"));
        assert_eq!(html.matches("<img").count(), 0);
        assert_eq!(
            fp.render_album_page(&AlbumId("zz".into())),
            Err(FirstPartyError::AlbumNotFound)
        );
    }

    #[tokio::test]
    async fn preview_comment_wrapper() {
        let fp = service();
        let a = fp.create_album("x");
        let up = fp.upload_photo(&a, qr_png(), "").unwrap();
        let o = ContentLocator::parse("https://o.example/v1/objects/0123456789abcdef").unwrap();
        let c = generate_preview_comment(&fp, &up.photo_id, &o).await.unwrap();
        assert_eq!(c.author, PREVIEW_AUTHOR);
        assert_eq!(c.preview_locator.as_ref(), Some(&o));
        let html = fp.render_album_page(&a).unwrap();
        assert!(html.contains(&format!("<a rel=\"preview\" href=\"{o}\">")));
        assert_eq!(
            generate_preview_comment(&fp, &PhotoId("404".into()), &o).await,
            Err(FirstPartyError::PhotoNotFound)
        );
    }

    #[tokio::test]
    async fn recording_double_sees_payloads() {
        let rec = RecordingFirstParty::new(service());
        let a = rec.create_album("t").await.unwrap();
        let img = qr_png();
        rec.upload_photo(&a, img.clone(), "cap").await.unwrap();
        assert!(rec.saw_bytes(&img.bytes));
        assert!(!rec.saw_bytes(b"never sent"));
        assert_eq!(rec.requests().len(), 2);
    }
}
