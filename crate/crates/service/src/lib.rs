//! HTTP editing sessions over the `rsf-core` renderer: upload an image (and
//! optionally masks, a recipe or a target to fit), then patch filter
//! arguments and fetch previews.
//!
//! | route | |
//! |---|---|
//! | `POST /sessions` | create; returns id, recipe and a base64 preview |
//! | `GET /sessions/{id}/preview?rev=` | PNG preview; 409 if `rev` is stale |
//! | `PATCH /sessions/{id}/recipe` | `{patches:[{layer,kind,theta}\|{layer,sigma}]}` |
//! | `GET /sessions/{id}/recipe` | recipe JSON |
//! | `GET /sessions/{id}/masks?full=` | mask PNGs (preview size unless `full=1`) |
//! | `POST /sessions/{id}/undo` | 409 when there is nothing to undo |
//! | `GET /sessions/{id}/export?full=1` | PNG, full resolution with `full=1` |
//!
//! Errors are JSON `{code, message, field?}`.

pub mod api;
mod error;
mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::sync::Mutex;

use api::{CreateSession, EditResponse, MaskImage, MaskList, PatchRequest, SessionCreated};
pub use error::{ApiError, ApiResult, ErrorBody};
use session::{NewSession, Session};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Long edge of previews, in pixels.
    pub preview_cap: usize,
    pub undo_limit: usize,
    pub max_pixels: usize,
    pub max_body_bytes: usize,
    pub theta_bound: f64,
    pub max_sigma: f64,
    /// Session persistence directory.
    pub root: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            preview_cap: 480,
            undo_limit: 64,
            max_pixels: 24_000_000,
            max_body_bytes: 256 << 20,
            theta_bound: rsf_core::recipe_file::DEFAULT_THETA_BOUND,
            max_sigma: 25.0,
            root: None,
        }
    }
}

type SessionHandle = Arc<Mutex<Session>>;

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<RwLock<HashMap<String, SessionHandle>>>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            sessions: Arc::default(),
            config: Arc::new(config),
        }
    }

    /// Reloads every session directory under `config.root`. Directories that
    /// fail to load are skipped with a warning.
    pub fn restore(&self) -> usize {
        let Some(root) = &self.config.root else {
            return 0;
        };
        let Ok(entries) = std::fs::read_dir(root) else {
            return 0;
        };
        let mut restored = 0;
        for entry in entries.flatten() {
            let dir = entry.path();
            if !dir.join("recipe.json").is_file() {
                continue;
            }
            let id = entry.file_name().to_string_lossy().into_owned();
            match Session::restore(id.clone(), &dir, &self.config) {
                Ok(s) => {
                    self.insert(s);
                    restored += 1;
                }
                Err(e) => tracing::warn!(session = %id, error = %e.body.message, "skipping stored session"),
            }
        }
        restored
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    fn insert(&self, session: Session) {
        let id = session.id.clone();
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(session)));
    }

    fn get(&self, id: &str) -> ApiResult<SessionHandle> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn persist(&self, session: &Session) -> ApiResult<()> {
        if let Some(root) = &self.config.root {
            session.persist(&root.join(&session.id))?;
        }
        Ok(())
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_body_bytes;
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/preview", get(preview))
        .route("/sessions/{id}/recipe", get(get_recipe).patch(patch_recipe))
        .route("/sessions/{id}/masks", get(masks))
        .route("/sessions/{id}/undo", post(undo))
        .route("/sessions/{id}/export", get(export))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config);
    let restored = state.restore();
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, restored, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// JSON bodies are parsed by hand so that syntax errors map to 400 and
/// shape errors to 422.
fn parse_json<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    let value: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed JSON: {e}")))?;
    serde_json::from_value(value).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_field", e.to_string()))
}

fn decode_b64(field: &str, text: &str) -> ApiResult<Vec<u8>> {
    B64.decode(text.trim())
        .map_err(|e| ApiError::bad_request(format!("`{field}` is not valid base64: {e}")).with_field(field))
}

/// Runs CPU-bound work off the async executor.
async fn blocking<R: Send + 'static>(f: impl FnOnce() -> ApiResult<R> + Send + 'static) -> ApiResult<R> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn png_response(png: &[u8], revision: u64) -> Response {
    let mut res = (StatusCode::OK, png.to_vec()).into_response();
    let headers = res.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("image/png"));
    headers.insert("x-revision", HeaderValue::from(revision));
    res
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let req: CreateSession = parse_json(&body)?;
    let image = decode_b64("image", &req.image)?;
    let masks = req
        .masks
        .iter()
        .enumerate()
        .map(|(i, m)| decode_b64(&format!("masks[{i}]"), m))
        .collect::<ApiResult<Vec<_>>>()?;
    let fit = match req.fit {
        Some(f) => {
            let target = decode_b64("fit.target", &f.target)?;
            Some((f, target))
        }
        None => None,
    };
    let new = NewSession {
        image,
        masks,
        palette_k: req.palette_k,
        seed: req.seed,
        recipe: req.recipe,
        fit,
    };
    let id = uuid::Uuid::new_v4().simple().to_string();
    let config = state.config.clone();
    let (session, created) = blocking(move || {
        let (mut session, fit) = Session::create(id, new, &config)?;
        let png = session.preview_png()?;
        let created = SessionCreated {
            id: session.id.clone(),
            revision: session.revision,
            width: session.source.width(),
            height: session.source.height(),
            preview_width: session.preview_source.width(),
            preview_height: session.preview_source.height(),
            masks: session.mask_info(),
            recipe: session.recipe_file(),
            preview_png: B64.encode(png.as_slice()),
            fit,
        };
        Ok((session, created))
    })
    .await?;
    state.persist(&session)?;
    tracing::info!(session = %session.id, w = created.width, h = created.height, "session created");
    state.insert(session);
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

#[derive(Debug, Deserialize)]
struct PreviewQuery {
    rev: Option<u64>,
}

async fn preview(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Response> {
    let handle = state.get(&id)?;
    let mut session = handle.clone().lock_owned().await;
    if let Some(rev) = q.rev {
        if rev != session.revision {
            return Err(ApiError::conflict(
                "stale_revision",
                format!("revision {rev} requested, current is {}", session.revision),
            ));
        }
    }
    let (png, revision) = blocking(move || Ok((session.preview_png()?, session.revision))).await?;
    Ok(png_response(&png, revision))
}

async fn get_recipe(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = state.get(&id)?;
    let session = handle.lock().await;
    let mut res = Json(session.recipe_file()).into_response();
    res.headers_mut().insert("x-revision", HeaderValue::from(session.revision));
    Ok(res)
}

async fn patch_recipe(State(state): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<EditResponse>> {
    let handle = state.get(&id)?;
    let req: PatchRequest = parse_json(&body)?;
    let session = handle.clone().lock_owned().await;
    let config = state.config.clone();
    let (session, resp) = blocking(move || {
        let mut session = session;
        session.apply_patches(&req.patches, &config)?;
        let png = session.preview_png()?;
        let resp = EditResponse {
            revision: session.revision,
            recipe: session.recipe_file(),
            preview_png: B64.encode(png.as_slice()),
        };
        Ok((session, resp))
    })
    .await?;
    state.persist(&session)?;
    Ok(Json(resp))
}

async fn undo(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<EditResponse>> {
    let handle = state.get(&id)?;
    let mut session = handle.clone().lock_owned().await;
    session.undo()?;
    let (session, resp) = blocking(move || {
        let png = session.preview_png()?;
        let resp = EditResponse {
            revision: session.revision,
            recipe: session.recipe_file(),
            preview_png: B64.encode(png.as_slice()),
        };
        Ok((session, resp))
    })
    .await?;
    state.persist(&session)?;
    Ok(Json(resp))
}

#[derive(Debug, Deserialize)]
struct FullQuery {
    #[serde(default)]
    full: Option<u8>,
}

impl FullQuery {
    fn full(&self) -> bool {
        self.full.unwrap_or(0) != 0
    }
}

async fn masks(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FullQuery>,
) -> ApiResult<Json<MaskList>> {
    let handle = state.get(&id)?;
    let session = handle.clone().lock_owned().await;
    let full = q.full();
    blocking(move || {
        let (w, h) = if full {
            session.source.dims()
        } else {
            session.preview_source.dims()
        };
        let masks = session
            .mask_info()
            .into_iter()
            .zip(&session.masks)
            .map(|(info, m)| {
                let m = if m.dims() == (w, h) { m.clone() } else { m.resize_bilinear(w, h) };
                MaskImage {
                    id: info.id,
                    name: info.name,
                    layer: info.layer,
                    width: w,
                    height: h,
                    png: B64.encode(rsf_core::io::encode_mask_png(&m)),
                }
            })
            .collect();
        Ok(Json(MaskList { masks }))
    })
    .await
}

async fn export(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FullQuery>,
) -> ApiResult<Response> {
    let handle = state.get(&id)?;
    let mut session = handle.clone().lock_owned().await;
    let full = q.full();
    let (png, revision) = blocking(move || {
        let png = if full {
            session.export_png()?
        } else {
            session.preview_png()?.to_vec()
        };
        Ok((png, session.revision))
    })
    .await?;
    Ok(png_response(&png, revision))
}
