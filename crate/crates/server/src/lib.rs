//! HTTP JSON API over an annotation session.
//!
//! | route                               | response                        |
//! |-------------------------------------|---------------------------------|
//! | `GET /api/clusters/next?after=<id>` | `{"cluster": ClusterView \| null, "remaining": n}` |
//! | `GET /api/clusters/{id}`            | `ClusterView`                   |
//! | `POST /api/clusters/{id}/decision`  | `Progress`                      |
//! | `GET /api/thumbnail/{mask_id}`      | PNG                             |
//! | `GET /api/progress`                 | `Progress`                      |
//! | `GET /api/export/sparse.png`        | PNG label raster                |
//!
//! Static UI assets are served from `/`. Errors are
//! `{"error": code, "message": text}` with 409 when no session is open,
//! 404 for unknown ids, 422 for invalid payloads and 503 when the session
//! has no readable imagery.
//!
//! Reads take a shared lock on the session. All writes go through one
//! writer thread that owns the decision log; a handler returns only after
//! its decision is on disk.

mod error;
mod state;

use std::net::SocketAddr;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use mcae_core::annotation::{ClusterDecision, Progress, VerdictKind};
use mcae_core::clustering::{ClusterCandidate, Stage};
use mcae_core::raster::{global_frame, BBox, TileId};

pub use error::ApiError;
pub use state::AppState;

type ApiResult<T> = std::result::Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestedClass {
    pub id: u8,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberSummary {
    pub id: u64,
    pub tile: TileId,
    /// Mosaic-frame bounding box `[x0, y0, w, h]`.
    pub bbox: BBox,
    pub area: u32,
    pub thumbnail_url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterView {
    pub cluster_id: u64,
    pub stage: Stage,
    pub suggested_class: SuggestedClass,
    pub purity: f64,
    /// Members in ascending id order.
    pub members: Vec<MemberSummary>,
    /// Effective decision, if any.
    pub decided: Option<ClusterDecision>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextResponse {
    pub cluster: Option<ClusterView>,
    /// Undecided clusters in the whole session.
    pub remaining: usize,
}

/// Decision payload: `{"verdict": "labeled", "class": 5, "excluded": [3]}`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub verdict: VerdictKind,
    #[serde(default)]
    pub class: Option<u8>,
    #[serde(default, alias = "excluded_member_ids")]
    pub excluded: Vec<u64>,
    #[serde(default)]
    pub annotator: Option<String>,
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    after: Option<u64>,
}

const PLACEHOLDER_INDEX: &str = "<!doctype html>\n<meta charset=\"utf-8\">\n<title>mcae</title>\n\
<p>Annotation API is running under <code>/api</code>. No UI bundle is configured.</p>\n";

pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/clusters/next", get(next_cluster))
        .route("/api/clusters/{id}", get(cluster_view))
        .route("/api/clusters/{id}/decision", post(decide))
        .route("/api/thumbnail/{mask_id}", get(thumbnail))
        .route("/api/progress", get(progress))
        .route("/api/export/sparse.png", get(export_sparse_png))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER_INDEX) })),
    }
}

pub async fn serve(
    addr: SocketAddr,
    state: AppState,
    ui_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, ui_dir)).await
}

fn view(state: &state::Session, c: &ClusterCandidate) -> ApiResult<ClusterView> {
    let store = state.read();
    let name = store
        .schema()
        .class(c.dominant_class)
        .map_or_else(|| "ignore".to_string(), |k| k.name.clone());
    let mut members = Vec::with_capacity(c.member_ids.len());
    let mut ids = c.member_ids.clone();
    ids.sort_unstable();
    for id in ids {
        let m = store.mask(id).ok_or(mcae_core::Error::UnknownMask(id))?;
        members.push(MemberSummary {
            id,
            tile: m.tile,
            bbox: global_frame(m, store.grid())?.bbox(),
            area: m.area_px(),
            thumbnail_url: format!("/api/thumbnail/{id}"),
        });
    }
    Ok(ClusterView {
        cluster_id: c.id,
        stage: c.stage,
        suggested_class: SuggestedClass {
            id: c.dominant_class,
            name,
        },
        purity: c.purity,
        members,
        decided: store.decision(c.id).cloned(),
    })
}

async fn next_cluster(
    State(state): State<AppState>,
    Query(q): Query<NextQuery>,
) -> ApiResult<Json<NextResponse>> {
    let s = state.session()?;
    let (next, remaining) = {
        let store = s.read();
        (
            store.next_undecided(q.after).cloned(),
            store.progress().remaining,
        )
    };
    let cluster = next.map(|c| view(&s, &c)).transpose()?;
    Ok(Json(NextResponse { cluster, remaining }))
}

async fn cluster_view(
    State(state): State<AppState>,
    Path(id): Path<u64>,
) -> ApiResult<Json<ClusterView>> {
    let s = state.session()?;
    let c = s
        .read()
        .cluster(id)
        .cloned()
        .ok_or(mcae_core::Error::UnknownCluster(id))?;
    Ok(Json(view(&s, &c)?))
}

async fn decide(
    State(state): State<AppState>,
    Path(id): Path<u64>,
    body: Bytes,
) -> ApiResult<Json<Progress>> {
    let s = state.session()?;
    if s.read().cluster(id).is_none() {
        return Err(mcae_core::Error::UnknownCluster(id).into());
    }
    let req: DecisionRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::invalid(format!("decision payload: {e}")))?;
    let d = match (req.verdict, req.class) {
        (VerdictKind::Labeled, Some(class)) => ClusterDecision::labeled(id, class),
        (VerdictKind::Labeled, None) => {
            return Err(ApiError::invalid("labeled verdict needs a class"))
        }
        (VerdictKind::Rejected, None) => ClusterDecision::rejected(id),
        (VerdictKind::Rejected, Some(_)) => {
            return Err(ApiError::invalid("rejected verdict takes no class"))
        }
    };
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let d = d
        .excluding(req.excluded)
        .by(req.annotator.unwrap_or_else(|| "annotator".into()), now);
    Ok(Json(s.submit(d).await?))
}

async fn thumbnail(State(state): State<AppState>, Path(mask_id): Path<u64>) -> ApiResult<Response> {
    let s = state.session()?;
    let png = tokio::task::spawn_blocking(move || s.thumbnail(mask_id))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn progress(State(state): State<AppState>) -> ApiResult<Json<Progress>> {
    Ok(Json(state.session()?.read().progress()))
}

async fn export_sparse_png(State(state): State<AppState>) -> ApiResult<Response> {
    let s = state.session()?;
    let png = tokio::task::spawn_blocking(move || s.export_png())
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
