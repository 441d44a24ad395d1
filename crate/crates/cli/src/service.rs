//! JSON-over-HTTP API used by the web client.
//!
//! | route                         | purpose                                   |
//! |-------------------------------|-------------------------------------------|
//! | `POST /videos`                | register a video and its transcript       |
//! | `POST /videos/{id}/anchors`   | upload an anchor crop, get its description|
//! | `POST /questions`             | answer a question under a condition       |
//! | `POST /corpus/reindex`        | rebuild and swap the corpus index         |
//! | `GET /health`                 | liveness and what is loaded               |

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context as _;
use aqua_core::clients::ClientSet;
use aqua_core::engine::{answer, Answer, Condition, Deps, EngineError, Question, Trace};
use aqua_core::icon_db::{load_manifest, IconManifest, MANIFEST_FILE};
use aqua_core::imaging::content_hash;
use aqua_core::retrieval::{build_index_from_dir, load_index, save_index, CorpusIndex, RetrievalError, WhitespaceTokenCounter};
use aqua_core::video_context::{parse_webvtt, Sentence, Transcript};
use aqua_core::vision::{describe_anchor, AnchorDescription, BoundingBox, VisualAnchor};
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::trace::TraceLayer;

use crate::config::ServiceConfig;
use crate::store::{safe_id, AnchorRecord, Store, StoreError, VideoRecord};

pub const CORRELATION_HEADER: &str = "x-correlation-id";
const DEFAULT_SESSION: &str = "default";

pub struct AppState {
    pub config: ServiceConfig,
    pub clients: ClientSet,
    pub store: Store,
    manifest: RwLock<Option<Arc<IconManifest>>>,
    index: RwLock<Option<Arc<CorpusIndex>>>,
    video_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    reindex_lock: tokio::sync::Mutex<()>,
}

impl AppState {
    /// Prepares `data_dir` and loads whatever icon database and index are
    /// already stored there.
    pub fn open(config: ServiceConfig) -> anyhow::Result<Arc<Self>> {
        config.prepare_data_dir()?;
        let clients = ClientSet::from_endpoints(&config.client_endpoints()).context("configuring model clients")?;
        Self::with_clients(config, clients)
    }

    pub fn with_clients(config: ServiceConfig, clients: ClientSet) -> anyhow::Result<Arc<Self>> {
        config.prepare_data_dir()?;
        let manifest = if config.icon_db_dir().join(MANIFEST_FILE).exists() {
            Some(Arc::new(load_manifest(&config.icon_db_dir()).context("loading icon database")?))
        } else {
            None
        };
        let index = if config.index_path().exists() {
            Some(Arc::new(load_index(&config.index_path()).context("loading corpus index")?))
        } else {
            None
        };
        Ok(Arc::new(Self {
            store: Store::new(&config.data_dir),
            config,
            clients,
            manifest: RwLock::new(manifest),
            index: RwLock::new(index),
            video_locks: Mutex::new(HashMap::new()),
            reindex_lock: tokio::sync::Mutex::new(()),
        }))
    }

    pub fn manifest(&self) -> Option<Arc<IconManifest>> {
        self.manifest.read().clone()
    }

    pub fn index(&self) -> Option<Arc<CorpusIndex>> {
        self.index.read().clone()
    }

    /// Readers holding the previous `Arc` keep using it until they finish.
    pub fn swap_index(&self, index: CorpusIndex) {
        *self.index.write() = Some(Arc::new(index));
    }

    fn video_lock(&self, video_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.video_locks.lock().entry(video_id.to_string()).or_default().clone()
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    trace: Option<Box<Trace>>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into(), trace: None }
    }
    fn bad_request(m: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, m)
    }
    fn not_found(m: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, m)
    }
    fn conflict(m: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, m)
    }
    fn unprocessable(m: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, m)
    }
    fn internal(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, m)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::internal(e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Contract(_) | EngineError::InvalidQuestion(_) => Self::unprocessable(e.to_string()),
            EngineError::MissingDependency(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()),
            EngineError::Upstream { message, trace } => Self {
                status: StatusCode::BAD_GATEWAY,
                message: format!("chat model failed: {message}"),
                trace: Some(trace),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(trace) = self.trace {
            body["trace"] = serde_json::to_value(trace).unwrap_or_default();
        }
        (self.status, Json(body)).into_response()
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

fn short_hash(prefix: &str, parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    format!("{prefix}{}", &hex::encode(h.finalize())[..16])
}

// ---- videos ----------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum TranscriptInput {
    Sentences(Vec<Sentence>),
    Object { sentences: Vec<Sentence> },
    WebVtt(String),
}

#[derive(Debug, Deserialize)]
pub struct NewVideo {
    #[serde(default)]
    pub video_id: Option<String>,
    pub title: String,
    pub transcript: TranscriptInput,
    pub frame_size: (u32, u32),
    #[serde(default)]
    pub source_uri: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VideoCreated {
    pub video_id: String,
}

async fn create_video(
    State(state): State<Arc<AppState>>,
    body: Result<Json<NewVideo>, JsonRejection>,
) -> Result<(StatusCode, Json<VideoCreated>), ApiError> {
    let Json(req) = body?;
    let sentences = match req.transcript {
        TranscriptInput::Sentences(s) | TranscriptInput::Object { sentences: s } => s,
        TranscriptInput::WebVtt(raw) => {
            parse_webvtt(&raw, "upload").map_err(|e| ApiError::bad_request(e.to_string()))?.sentences
        }
    };
    if req.frame_size.0 == 0 || req.frame_size.1 == 0 {
        return Err(ApiError::bad_request("frame_size must be positive"));
    }
    let video_id = match req.video_id {
        Some(id) if !safe_id(&id) => {
            return Err(ApiError::bad_request("video_id may only contain letters, digits, '-' and '_'"))
        }
        Some(id) => id,
        None => VideoRecord::content_id(&req.title, &sentences, req.source_uri.as_deref(), req.frame_size),
    };
    let transcript = Transcript { video_id: video_id.clone(), title: req.title.clone(), sentences };
    transcript.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
    let record = VideoRecord {
        video_id: video_id.clone(),
        title: req.title,
        transcript,
        source_uri: req.source_uri,
        frame_size: req.frame_size,
    };

    let lock = state.video_lock(&video_id);
    let _guard = lock.lock().await;
    match state.store.get_video(&video_id)? {
        Some(existing) if existing.same_payload(&record) => Ok((StatusCode::OK, Json(VideoCreated { video_id }))),
        Some(_) => Err(ApiError::conflict(format!("video {video_id} exists with different content"))),
        None => {
            state.store.put_video(&record)?;
            tracing::info!(%video_id, sentences = record.transcript.sentences.len(), "video stored");
            Ok((StatusCode::CREATED, Json(VideoCreated { video_id })))
        }
    }
}

// ---- anchors ---------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct AnchorCreated {
    pub anchor_id: String,
    pub description: AnchorDescription,
}

/// `{"x":..,"y":..,"w":..,"h":..}` or `x,y,w,h`.
fn parse_bbox(raw: &str) -> Result<BoundingBox, ApiError> {
    let raw = raw.trim();
    if raw.starts_with('{') {
        return serde_json::from_str(raw).map_err(|e| ApiError::bad_request(format!("bad bbox: {e}")));
    }
    let nums: Vec<u32> = raw
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .map_err(|e| ApiError::bad_request(format!("bad bbox {raw:?}: {e}")))?;
    match nums[..] {
        [x, y, w, h] => Ok(BoundingBox { x, y, w, h }),
        _ => Err(ApiError::bad_request(format!("bad bbox {raw:?}: expected x,y,w,h"))),
    }
}

#[derive(Default)]
struct AnchorForm {
    image: Option<Vec<u8>>,
    timestamp_s: Option<String>,
    bbox: Option<String>,
    label: Option<String>,
    session: Option<String>,
}

async fn read_anchor_form(mut multipart: Multipart, max_image_bytes: usize) -> Result<AnchorForm, ApiError> {
    let mut form = AnchorForm::default();
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => return Err(ApiError::new(e.status(), e.body_text())),
        };
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field.bytes().await.map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        let text = || String::from_utf8_lossy(&bytes).into_owned();
        match name.as_str() {
            "image" => {
                if bytes.len() > max_image_bytes {
                    return Err(ApiError::new(
                        StatusCode::PAYLOAD_TOO_LARGE,
                        format!("image is {} bytes, limit is {max_image_bytes}", bytes.len()),
                    ));
                }
                form.image = Some(bytes.to_vec());
            }
            "timestamp_s" => form.timestamp_s = Some(text()),
            "bbox" => form.bbox = Some(text()),
            "label" => form.label = Some(text()),
            "session" => form.session = Some(text()),
            _ => {}
        }
    }
    Ok(form)
}

async fn create_anchor(
    State(state): State<Arc<AppState>>,
    Path(video_id): Path<String>,
    multipart: Multipart,
) -> Result<(StatusCode, Json<AnchorCreated>), ApiError> {
    let video = state.store.get_video(&video_id)?.ok_or_else(|| ApiError::not_found(format!("unknown video {video_id}")))?;
    let form = read_anchor_form(multipart, state.config.max_image_bytes).await?;

    let missing = |f: &str| ApiError::bad_request(format!("missing field {f}"));
    let bytes = form.image.ok_or_else(|| missing("image"))?;
    let timestamp_s: f64 = form
        .timestamp_s
        .ok_or_else(|| missing("timestamp_s"))?
        .trim()
        .parse()
        .map_err(|e| ApiError::bad_request(format!("bad timestamp_s: {e}")))?;
    let bbox = parse_bbox(&form.bbox.ok_or_else(|| missing("bbox"))?)?;
    let label = form.label.ok_or_else(|| missing("label"))?.trim().to_string();
    if label.is_empty() || label.chars().any(char::is_whitespace) {
        return Err(ApiError::bad_request("label must be a single non-empty token"));
    }
    let session = form.session.map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
    let session = session.unwrap_or_else(|| DEFAULT_SESSION.to_string());

    let (fw, fh) = video.frame_size;
    if !bbox.fits_within(fw, fh) || bbox.w == 0 || bbox.h == 0 {
        return Err(ApiError::bad_request(format!("bbox {bbox:?} is outside the {fw}x{fh} frame")));
    }
    let image = image::load_from_memory(&bytes).map_err(|e| ApiError::unprocessable(format!("undecodable image: {e}")))?;
    let hash = content_hash(&image);
    let anchor_id = short_hash(
        "a",
        &[
            video_id.as_bytes(),
            session.as_bytes(),
            label.as_bytes(),
            &timestamp_s.to_bits().to_le_bytes(),
            format!("{},{},{},{}", bbox.x, bbox.y, bbox.w, bbox.h).as_bytes(),
            hash.as_bytes(),
        ],
    );
    let anchor = VisualAnchor {
        id: anchor_id.clone(),
        video_id: video_id.clone(),
        timestamp_s,
        bbox,
        label: label.clone(),
        image,
        anchor_type: None,
        anchor_role: None,
    };
    anchor.validate(Some(video.frame_size)).map_err(|e| ApiError::bad_request(e.to_string()))?;

    let lock = state.video_lock(&video_id);
    let _guard = lock.lock().await;
    let taken = state.store.list_anchors(&video_id)?.into_iter().any(|a| a.session == session && a.label == label);
    if taken {
        return Err(ApiError::conflict(format!("label {label} already used in session {session}")));
    }

    let st = state.clone();
    let (anchor, description) = blocking(move || {
        let manifest = st.manifest();
        let d = describe_anchor(
            &anchor,
            manifest.as_deref(),
            st.clients.caption.as_ref(),
            st.clients.ocr.as_ref(),
            &st.config.pipeline.software_profile,
            &st.config.pipeline.recognition(),
        );
        (anchor, d)
    })
    .await?;
    let record = AnchorRecord {
        anchor_id: anchor_id.clone(),
        video_id: video_id.clone(),
        session,
        label,
        timestamp_s,
        bbox,
        content_hash: hash,
        description: description.clone(),
    };
    state.store.put_anchor(&record, &anchor.image)?;
    tracing::info!(%video_id, %anchor_id, tools = ?description.tool_names, "anchor stored");
    Ok((StatusCode::CREATED, Json(AnchorCreated { anchor_id, description })))
}

// ---- questions -------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionRequest {
    pub video_id: String,
    pub text: String,
    #[serde(default)]
    pub anchor_ids: Vec<String>,
    pub condition: String,
    #[serde(default)]
    pub asked_at_s: Option<f64>,
    #[serde(default)]
    pub question_id: Option<String>,
}

async fn ask_question(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    body: Result<Json<QuestionRequest>, JsonRejection>,
) -> Response {
    let correlation = headers
        .get(CORRELATION_HEADER)
        .and_then(|v| v.to_str().ok())
        .filter(|v| !v.is_empty() && v.len() <= 128)
        .map(str::to_string)
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let result = match body {
        Ok(Json(req)) => answer_request(state, req, &correlation).await,
        Err(e) => Err(e.into()),
    };
    let mut response = match result {
        Ok(a) => {
            tracing::info!(correlation = %correlation, question = %a.question_id, condition = %a.condition,
                tokens = a.trace.tokens.prompt_tokens, "answered");
            Json(a).into_response()
        }
        Err(e) => {
            tracing::warn!(correlation = %correlation, status = %e.status, error = %e.message, "question failed");
            e.into_response()
        }
    };
    if let Ok(v) = HeaderValue::from_str(&correlation) {
        response.headers_mut().insert(CORRELATION_HEADER, v);
    }
    response
}

async fn answer_request(state: Arc<AppState>, req: QuestionRequest, correlation: &str) -> Result<Answer, ApiError> {
    tracing::info!(correlation = %correlation, video = %req.video_id, condition = %req.condition,
        anchors = req.anchor_ids.len(), "question received");
    let condition: Condition = req.condition.parse().map_err(ApiError::unprocessable)?;
    let video = state
        .store
        .get_video(&req.video_id)?
        .ok_or_else(|| ApiError::not_found(format!("unknown video {}", req.video_id)))?;
    let mut anchors = Vec::with_capacity(req.anchor_ids.len());
    let mut cached = HashMap::new();
    for id in &req.anchor_ids {
        let record = state
            .store
            .get_anchor(&req.video_id, id)?
            .ok_or_else(|| ApiError::not_found(format!("unknown anchor {id} for video {}", req.video_id)))?;
        anchors.push(state.store.load_visual_anchor(&record)?);
        cached.insert(record.anchor_id.clone(), record.description);
    }
    let question_id = req.question_id.clone().unwrap_or_else(|| {
        let ids = req.anchor_ids.join(",");
        short_hash("q", &[req.video_id.as_bytes(), req.text.as_bytes(), ids.as_bytes(), condition.as_str().as_bytes()])
    });
    let question = Question { id: question_id, video_id: req.video_id, text: req.text, anchors, asked_at_s: req.asked_at_s };

    let manifest = state.manifest();
    let index = state.index();
    let st = state.clone();
    blocking(move || {
        let deps = Deps {
            manifest: manifest.as_deref(),
            index: index.as_deref(),
            transcript: Some(&video.transcript),
            clients: &st.clients,
            counter: &WhitespaceTokenCounter,
            config: &st.config.pipeline,
            cached_descriptions: Some(&cached),
        };
        answer(&question, condition, &deps)
    })
    .await?
    .map_err(ApiError::from)
}

// ---- corpus ----------------------------------------------------------------

#[derive(Debug, Deserialize)]
pub struct ReindexRequest {
    pub corpus_dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ReindexResult {
    pub chunks: usize,
    pub dim: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

fn built_at() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

async fn reindex(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ReindexRequest>, JsonRejection>,
) -> Result<Json<ReindexResult>, ApiError> {
    let Json(req) = body?;
    let _guard = state.reindex_lock.lock().await;
    let st = state.clone();
    let build = blocking(move || {
        build_index_from_dir(
            &req.corpus_dir,
            &WhitespaceTokenCounter,
            st.clients.embed.as_ref(),
            st.config.pipeline.chunk_limit_tokens,
            built_at(),
        )
    })
    .await?
    .map_err(|e| match e {
        RetrievalError::MissingCorpus(_) => ApiError::bad_request(e.to_string()),
        other => ApiError::internal(format!("index build failed, previous index kept: {other}")),
    })?;
    let mut warnings = build.warnings;
    if build.index.is_empty() {
        warnings.push("corpus produced no chunks".into());
    }
    let path = state.config.index_path();
    let index = build.index;
    let index = blocking(move || save_index(&index, &path).map(|_| index))
        .await?
        .map_err(|e| ApiError::internal(format!("saving index failed, previous index kept: {e}")))?;
    let result = ReindexResult { chunks: index.len(), dim: index.dim, warnings };
    state.swap_index(index);
    tracing::info!(chunks = result.chunks, "index swapped");
    Ok(Json(result))
}

// ---- health ----------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub index_loaded: bool,
    pub manifest_loaded: bool,
    pub index_chunks: usize,
    pub manifest_records: usize,
    pub fixture_mode: bool,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let index = state.index();
    let manifest = state.manifest();
    Json(Health {
        status: "ok".into(),
        index_loaded: index.is_some(),
        manifest_loaded: manifest.is_some(),
        index_chunks: index.map_or(0, |i| i.len()),
        manifest_records: manifest.map_or(0, |m| m.len()),
        fixture_mode: state.clients.fixture_mode,
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = if state.config.cors_origins.is_empty() {
        CorsLayer::permissive()
    } else {
        let origins: Vec<HeaderValue> =
            state.config.cors_origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
        CorsLayer::permissive().allow_origin(AllowOrigin::list(origins))
    };
    // Leave room for the multipart framing and the small text fields, so an
    // oversize image is reported by the size check rather than as a
    // truncated body.
    let anchor_body_limit = state.config.max_image_bytes.saturating_add(1024 * 1024);
    Router::new()
        .route("/health", get(health))
        .route("/videos", post(create_video))
        .route("/videos/{id}/anchors", post(create_anchor).layer(DefaultBodyLimit::max(anchor_body_limit)))
        .route("/questions", post(ask_question))
        .route("/corpus/reindex", post(reindex))
        .layer(TraceLayer::new_for_http())
        .layer(cors)
        .with_state(state)
}

/// Binds `addr` and serves in the background. Returns the bound address
/// (useful with port 0) and the server task.
pub async fn start(
    state: Arc<AppState>,
    addr: &str,
) -> anyhow::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr()?;
    let app = router(state);
    let handle = tokio::spawn(async move { axum::serve(listener, app).await });
    Ok((local, handle))
}

/// Serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let addr = config.listen.clone();
    let state = AppState::open(config)?;
    let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
    tracing::info!(addr = %listener.local_addr()?, index_loaded = state.index().is_some(),
        manifest_loaded = state.manifest().is_some(), "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_forms() {
        assert_eq!(parse_bbox("1, 2,3,4").unwrap(), BoundingBox { x: 1, y: 2, w: 3, h: 4 });
        assert_eq!(parse_bbox(r#"{"x":1,"y":2,"w":3,"h":4}"#).unwrap(), BoundingBox { x: 1, y: 2, w: 3, h: 4 });
        assert!(parse_bbox("1,2,3").is_err());
        assert!(parse_bbox("-1,2,3,4").is_err());
    }

    #[test]
    fn engine_errors_map_to_status() {
        let s = |e: EngineError| ApiError::from(e).status;
        assert_eq!(s(EngineError::Contract("x")), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(s(EngineError::MissingDependency("corpus index")), StatusCode::SERVICE_UNAVAILABLE);
        assert_eq!(
            s(EngineError::Upstream { message: "down".into(), trace: Box::default() }),
            StatusCode::BAD_GATEWAY
        );
    }
}
