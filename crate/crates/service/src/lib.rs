//! HTTP API for refinement sessions.
//!
//! There is no authentication: this is a single-operator desk tool. Bind it
//! to localhost or put it behind something that authenticates.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/health` | liveness |
//! | POST | `/sessions` | create from a dataset reference, 201 |
//! | GET | `/sessions` | list |
//! | GET | `/sessions/{id}` | snapshot |
//! | POST | `/sessions/{id}/actions` | apply a refinement action |
//! | POST | `/sessions/{id}/iterations` | train, explain, guard; 201 |
//! | GET | `/sessions/{id}/iterations/{n}` | full iteration record |
//! | GET | `/sessions/{id}/iterations/{n}/shap?scope=global\|topk&k=` | attributions |
//! | GET | `/sessions/{id}/history` | metrics and guard results per iteration |
//! | GET | `/sessions/{id}/compare?a=&b=` | diff of two iterations |

pub mod api;
pub mod dataset;
pub mod error;
pub mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use ntl_core::session::{IterationRecord, RefinementAction};
use tower_http::compression::CompressionLayer;
use tower_http::cors::{Any, CorsLayer};

use api::*;
pub use error::{ApiError, ErrorEnvelope};
pub use state::{AppState, ServiceConfig};

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<T, ApiError>;

/// Largest accepted request body (CSV uploads).
const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    let cors = match state.config.cors_origin.as_deref().and_then(|o| o.parse::<HeaderValue>().ok()) {
        Some(origin) => cors.allow_origin(origin),
        None => cors.allow_origin(Any),
    };
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/actions", post(apply_action))
        .route("/sessions/{id}/iterations", post(run_iteration))
        .route("/sessions/{id}/iterations/{n}", get(get_iteration))
        .route("/sessions/{id}/iterations/{n}/shap", get(get_shap))
        .route("/sessions/{id}/history", get(history))
        .route("/sessions/{id}/compare", get(compare))
        .fallback(|| async {
            let e = ErrorEnvelope { error_code: "unknown_route", message: "no such route".into(), detail: Default::default() };
            (StatusCode::NOT_FOUND, Json(e))
        })
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(CompressionLayer::new())
        .layer(cors)
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let state = Arc::new(AppState::open(config)?);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Runs session work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await?
}

async fn health(State(app): Shared) -> Json<Health> {
    Json(Health { v: SCHEMA_VERSION, status: "ok", sessions: app.list().len() })
}

async fn create_session(
    State(app): Shared,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionSnapshot>)> {
    let Json(req) = body?;
    let snapshot = blocking(move || {
        let slot = app.create(req.dataset, req.config)?;
        let session = slot.read()?;
        Ok(SessionSnapshot::of(&slot.meta, &session))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(snapshot)))
}

async fn list_sessions(State(app): Shared) -> ApiResult<Json<SessionList>> {
    let mut sessions = Vec::new();
    for slot in app.list() {
        sessions.push(SessionSnapshot::of(&slot.meta, &*slot.read()?));
    }
    Ok(Json(SessionList { v: SCHEMA_VERSION, sessions }))
}

async fn get_session(State(app): Shared, Path(id): Path<String>) -> ApiResult<Json<SessionSnapshot>> {
    let slot = app.get(&id)?;
    let snapshot = SessionSnapshot::of(&slot.meta, &*slot.read()?);
    Ok(Json(snapshot))
}

async fn apply_action(
    State(app): Shared,
    Path(id): Path<String>,
    body: Result<Json<RefinementAction>, JsonRejection>,
) -> ApiResult<Json<SessionSnapshot>> {
    let slot = app.get(&id)?;
    let Json(action) = body?;
    let writer = slot.claim()?;
    blocking(move || {
        let _writer = writer;
        let mut session = slot.write()?;
        session.apply(action)?;
        Ok(Json(SessionSnapshot::of(&slot.meta, &session)))
    })
    .await
}

/// Plans under a short read lock, trains with no lock held (reads proceed),
/// then commits under a short write lock. The writer slot is held
/// throughout, so a concurrent mutation gets 409. On timeout the response is
/// 503 and the late result is discarded; the slot frees once training ends.
async fn run_iteration(
    State(app): Shared,
    Path(id): Path<String>,
) -> ApiResult<(StatusCode, Json<IterationResponse>)> {
    let slot = app.get(&id)?;
    let writer = slot.claim()?;
    let (plan, dataset) = {
        let session = slot.read()?;
        (session.plan(), session.dataset().clone())
    };
    let training = tokio::task::spawn_blocking(move || (plan.execute(&dataset), writer));
    let timeout = app.config.training_timeout;
    let (outcome, writer) = tokio::time::timeout(timeout, training).await.map_err(|_| ApiError::Timeout(timeout))??;
    let outcome = outcome?;
    let response = blocking(move || {
        let _writer = writer;
        let mut session = slot.write()?;
        let record = session.commit(outcome)?.clone();
        Ok(IterationResponse { v: SCHEMA_VERSION, units: UNITS, cursor: session.state().cursor, record })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(response)))
}

async fn get_iteration(State(app): Shared, Path((id, n)): Path<(String, usize)>) -> ApiResult<Json<IterationResponse>> {
    let slot = app.get(&id)?;
    let session = slot.read()?;
    let record: IterationRecord = session.iteration(n)?.clone();
    Ok(Json(IterationResponse { v: SCHEMA_VERSION, units: UNITS, cursor: session.state().cursor, record }))
}

async fn get_shap(
    State(app): Shared,
    Path((id, n)): Path<(String, usize)>,
    query: Result<Query<ShapQuery>, QueryRejection>,
) -> ApiResult<Json<ShapPayload>> {
    let Query(q) = query?;
    let scope = match q.scope.as_deref() {
        None | Some("global") => Scope::Global,
        Some("topk") => Scope::Topk,
        Some(other) => return Err(ApiError::InvalidScope(other.to_string())),
    };
    let slot = app.get(&id)?;
    blocking(move || {
        let session = slot.read()?;
        let record = session.iteration(n)?;
        let payload = match scope {
            Scope::Global => ShapPayload::of(record, &session.summaries(n)?.0, scope, None),
            Scope::Topk => {
                let k = q.k.unwrap_or(record.metrics.k);
                ShapPayload::of(record, &*session.top_k(n, k)?, scope, Some(k))
            }
        };
        Ok(Json(payload))
    })
    .await
}

async fn history(State(app): Shared, Path(id): Path<String>) -> ApiResult<Json<History>> {
    let slot = app.get(&id)?;
    let history = History::of(&*slot.read()?);
    Ok(Json(history))
}

async fn compare(
    State(app): Shared,
    Path(id): Path<String>,
    query: Result<Query<CompareQuery>, QueryRejection>,
) -> ApiResult<Json<CompareResponse>> {
    let Query(q) = query?;
    let slot = app.get(&id)?;
    let report = slot.read()?.compare(q.a, q.b)?;
    Ok(Json(CompareResponse { v: SCHEMA_VERSION, units: UNITS, report }))
}
