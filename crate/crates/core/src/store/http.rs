//! HTTP object-store protocol (v1), server and client.
//!
//! ```text
//! POST   /v1/objects        body = bytes, Content-Type stored verbatim
//!                           -> 201, Location: /v1/objects/{id}, body = absolute locator
//! GET    /v1/objects/{id}   -> 200 bytes + stored Content-Type | 404
//! DELETE /v1/objects/{id}   -> 204 | 404
//! ```

use std::net::SocketAddr;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use super::{ContentItem, ObjectId, ObjectStore, Provider, StoreError, OBJECTS_PATH};

/// Client side of the protocol.
#[derive(Debug, Clone)]
pub struct HttpStore {
    base_url: String,
    client: reqwest::Client,
}

pub(crate) fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .no_proxy()
        .pool_max_idle_per_host(64)
        .build()
        .expect("HTTP client configuration is static")
}

fn unavailable(e: reqwest::Error) -> StoreError {
    StoreError::StoreUnavailable(e.to_string())
}

impl HttpStore {
    pub fn new(base_url: &str) -> Result<Self, StoreError> {
        url::Url::parse(base_url)
            .map_err(|e| StoreError::InvalidArgument(format!("bad base URL {base_url:?}: {e}")))?;
        Ok(Self {
            base_url: base_url.trim_end_matches('/').to_owned(),
            client: http_client(),
        })
    }

    fn object_url(&self, id: &ObjectId) -> String {
        format!("{}{OBJECTS_PATH}{id}", self.base_url)
    }
}

#[async_trait]
impl ObjectStore for HttpStore {
    async fn put(&self, item: ContentItem) -> Result<ObjectId, StoreError> {
        let resp = self
            .client
            .post(format!("{}/v1/objects", self.base_url))
            .header(header::CONTENT_TYPE, &item.media_type)
            .body(item.bytes)
            .send()
            .await
            .map_err(unavailable)?;
        match resp.status() {
            StatusCode::CREATED => {}
            StatusCode::PAYLOAD_TOO_LARGE => {
                return Err(StoreError::PayloadTooLarge {
                    size: 0,
                    limit: 0,
                })
            }
            s => return Err(StoreError::StoreUnavailable(format!("unexpected status {s}"))),
        }
        resp.headers()
            .get(header::LOCATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|l| l.strip_prefix(OBJECTS_PATH))
            .and_then(ObjectId::parse)
            .ok_or_else(|| StoreError::StoreUnavailable("malformed Location header".into()))
    }

    async fn get(&self, id: &ObjectId) -> Result<ContentItem, StoreError> {
        let resp = self
            .client
            .get(self.object_url(id))
            .send()
            .await
            .map_err(unavailable)?;
        match resp.status() {
            StatusCode::OK => {}
            StatusCode::NOT_FOUND => return Err(StoreError::NotFound),
            s => return Err(StoreError::StoreUnavailable(format!("unexpected status {s}"))),
        }
        let media_type = resp
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("application/octet-stream")
            .to_owned();
        let bytes = resp.bytes().await.map_err(unavailable)?;
        Ok(ContentItem::new(bytes, media_type))
    }

    async fn delete(&self, id: &ObjectId) -> Result<(), StoreError> {
        let resp = self
            .client
            .delete(self.object_url(id))
            .send()
            .await
            .map_err(unavailable)?;
        match resp.status() {
            StatusCode::NO_CONTENT | StatusCode::OK => Ok(()),
            StatusCode::NOT_FOUND => Err(StoreError::NotFound),
            s => Err(StoreError::StoreUnavailable(format!("unexpected status {s}"))),
        }
    }
}

#[derive(Clone)]
struct ServerState {
    backing: Provider,
    base_url: String,
}

/// Handle to a running store server.
#[derive(Debug)]
pub struct StoreServer {
    addr: SocketAddr,
    base_url: String,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl StoreServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// A client provider pointed at this server.
    pub fn client_provider(&self, name: &str) -> Provider {
        let store = HttpStore::new(&self.base_url).expect("server base URL is valid");
        Provider::new(name, &self.base_url, std::sync::Arc::new(store))
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub async fn shutdown(mut self) {
        self.stop().await;
    }

    async fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }

    /// Resolves when the server stops on its own (never, unless it fails).
    pub async fn wait(mut self) {
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for StoreServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Serves the v1 protocol on `bind`, backed by `backing`.
pub async fn serve_store(bind: &str, backing: Provider) -> Result<StoreServer, StoreError> {
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| StoreError::BindFailure {
            addr: bind.to_owned(),
            reason: e.to_string(),
        })?;
    let addr = listener.local_addr().map_err(|e| StoreError::BindFailure {
        addr: bind.to_owned(),
        reason: e.to_string(),
    })?;
    let base_url = format!("http://{addr}");
    let limit = backing.max_payload();
    let state = ServerState {
        backing,
        base_url: base_url.clone(),
    };
    let app = Router::new()
        .route("/v1/objects", post(create))
        .route("/v1/objects/{id}", get(read).delete(remove))
        .layer(DefaultBodyLimit::max(limit.saturating_add(1)))
        .with_state(state);
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let _ = axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await;
    });
    Ok(StoreServer {
        addr,
        base_url,
        shutdown: Some(tx),
        task: Some(task),
    })
}

fn error_response(e: StoreError) -> Response {
    let status = match e {
        StoreError::NotFound | StoreError::ForeignLocator(_) => StatusCode::NOT_FOUND,
        StoreError::PayloadTooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
        StoreError::InvalidItem(_) | StoreError::InvalidArgument(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::SERVICE_UNAVAILABLE,
    };
    (status, e.to_string()).into_response()
}

async fn create(State(s): State<ServerState>, headers: HeaderMap, body: Bytes) -> Response {
    let media_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/octet-stream")
        .to_owned();
    let stored = match s.backing.upload(ContentItem::new(body, media_type)).await {
        Ok(l) => l,
        Err(e) => return error_response(e),
    };
    let id = match s.backing.id_of(&stored) {
        Ok(id) => id,
        Err(e) => return error_response(e),
    };
    let path = format!("{OBJECTS_PATH}{id}");
    (
        StatusCode::CREATED,
        [(header::LOCATION, path.clone())],
        format!("{}{path}", s.base_url),
    )
        .into_response()
}

async fn read(State(s): State<ServerState>, Path(id): Path<String>) -> Response {
    let Some(id) = ObjectId::parse(&id) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    match s.backing.fetch(&s.backing.locator_for(&id)).await {
        Ok(item) => (
            StatusCode::OK,
            [(header::CONTENT_TYPE, item.media_type)],
            item.bytes,
        )
            .into_response(),
        Err(e) => error_response(e),
    }
}

async fn remove(State(s): State<ServerState>, Path(id): Path<String>) -> Response {
    let Some(id) = ObjectId::parse(&id) else {
        return StatusCode::NOT_FOUND.into_response();
    };
    match s.backing.delete(&s.backing.locator_for(&id)).await {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => error_response(e),
    }
}
