//! HTTP service over [`Pipeline`]. Handlers only decode, delegate and
//! encode; blocking pipeline calls run on the blocking pool.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::oneshot;
use tower_http::services::ServeDir;

use crate::gateway::AgentProfile;
use crate::ids::{CaseId, DocId, FindingId, ProfileId, RunId};
use crate::pipeline::{
    AggregateRequest, CalibrationRequest, ErrorCode, Pipeline, PipelineError, ProfileRevision,
    RecordQuery, RepeatabilityRequest, RunRequest,
};
use crate::store::NewDocument;

/// Error body returned by every failing route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            status: code.http_status(),
            code: code.as_str().to_string(),
            message: message.into(),
            details: None,
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        Self {
            details: e.details(),
            ..Self::new(e.code(), e.to_string())
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(ErrorCode::InvalidRequest, e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::new(ErrorCode::InvalidRequest, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;
type Shared = Arc<Pipeline>;

async fn blocking<T, F>(pipeline: Shared, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Pipeline) -> Result<T, PipelineError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&pipeline))
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))?
        .map_err(ApiError::from)
}

fn parse_id<T: std::str::FromStr>(raw: &str, what: &str) -> ApiResult<T> {
    raw.parse()
        .map_err(|_| ApiError::new(ErrorCode::InvalidRequest, format!("malformed {what} id {raw:?}")))
}

async fn post_document(
    State(p): State<Shared>,
    body: Result<Json<NewDocument>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(doc) = body?;
    let id = blocking(p, move |p| p.ingest(doc)).await?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "docId": id }))))
}

async fn get_document(State(p): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let doc = blocking(p, move |p| p.document(&DocId(id))).await?;
    Ok(Json(doc))
}

async fn post_run(
    State(p): State<Shared>,
    body: Result<Json<RunRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let run = blocking(p, move |p| p.start_run(req)).await?;
    Ok((StatusCode::CREATED, Json(run)))
}

async fn get_run(State(p): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id: RunId = parse_id(&id, "run")?;
    Ok(Json(blocking(p, move |p| p.run(id)).await?))
}

async fn get_run_records(
    State(p): State<Shared>,
    Path(id): Path<String>,
    query: Result<Query<RecordQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let id: RunId = parse_id(&id, "run")?;
    let Query(q) = query?;
    Ok(Json(blocking(p, move |p| p.run_records(id, &q)).await?))
}

async fn post_calibration(
    State(p): State<Shared>,
    body: Result<Json<CalibrationRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    Ok(Json(blocking(p, move |p| p.calibrate(req)).await?))
}

async fn post_repeatability(
    State(p): State<Shared>,
    body: Result<Json<RepeatabilityRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    Ok(Json(blocking(p, move |p| p.repeatability(req)).await?))
}

async fn post_findings(
    State(p): State<Shared>,
    body: Result<Json<AggregateRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    Ok(Json(blocking(p, move |p| p.aggregate_findings(req)).await?))
}

async fn list_findings(State(p): State<Shared>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(p, |p| Ok(p.findings())).await?))
}

async fn get_finding(State(p): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id: FindingId = parse_id(&id, "finding")?;
    Ok(Json(blocking(p, move |p| p.finding(id)).await?))
}

async fn post_profile(
    State(p): State<Shared>,
    body: Result<Json<AgentProfile>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(profile) = body?;
    let stored = blocking(p, move |p| p.create_profile(profile)).await?;
    Ok((StatusCode::CREATED, Json(stored)))
}

async fn get_profile(State(p): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(blocking(p, move |p| p.profile_lineage(&ProfileId(id))).await?))
}

async fn post_profile_revision(
    State(p): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<ProfileRevision>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(edit) = body?;
    let stored = blocking(p, move |p| p.revise_profile(&ProfileId(id), edit)).await?;
    Ok((StatusCode::CREATED, Json(stored)))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct OpenCase {
    finding_id: FindingId,
}

async fn post_arbitration(
    State(p): State<Shared>,
    body: Result<Json<OpenCase>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let case = blocking(p, move |p| p.open_arbitration(req.finding_id)).await?;
    Ok((StatusCode::CREATED, Json(case)))
}

async fn get_arbitration(State(p): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id: CaseId = parse_id(&id, "case")?;
    Ok(Json(blocking(p, move |p| p.case(id)).await?))
}

async fn post_advance(State(p): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id: CaseId = parse_id(&id, "case")?;
    Ok(Json(blocking(p, move |p| p.advance_case(id)).await?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Complete {
    #[serde(default)]
    max_turns: Option<usize>,
}

async fn post_complete(
    State(p): State<Shared>,
    Path(id): Path<String>,
    body: Option<Json<Complete>>,
) -> ApiResult<impl IntoResponse> {
    let id: CaseId = parse_id(&id, "case")?;
    let max_turns = body.and_then(|Json(c)| c.max_turns);
    Ok(Json(blocking(p, move |p| p.complete_case(id, max_turns)).await?))
}

async fn get_transcript(State(p): State<Shared>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let id: CaseId = parse_id(&id, "case")?;
    Ok(Json(blocking(p, move |p| p.transcript(id)).await?))
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ExportQuery {
    run_id: String,
}

async fn get_export_csv(
    State(p): State<Shared>,
    query: Result<Query<ExportQuery>, QueryRejection>,
) -> ApiResult<impl IntoResponse> {
    let Query(q) = query?;
    let id: RunId = parse_id(&q.run_id, "run")?;
    let csv = blocking(p, move |p| p.export_csv(id)).await?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv))
}

async fn route_not_found() -> ApiError {
    ApiError::new(ErrorCode::RouteNotFound, "no such route")
}

/// The route table. `ui_dir`, when given, is served under `/ui`.
pub fn router(pipeline: Arc<Pipeline>, ui_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/documents", post(post_document))
        .route("/documents/{id}", get(get_document))
        .route("/runs", post(post_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/records", get(get_run_records))
        .route("/calibrations", post(post_calibration))
        .route("/repeatability", post(post_repeatability))
        .route("/aggregate/findings", post(post_findings))
        .route("/findings", get(list_findings))
        .route("/findings/{id}", get(get_finding))
        .route("/profiles", post(post_profile))
        .route("/profiles/{id}", get(get_profile))
        .route("/profiles/{id}/revisions", post(post_profile_revision))
        .route("/arbitrations", post(post_arbitration))
        .route("/arbitrations/{id}", get(get_arbitration))
        .route("/arbitrations/{id}/advance", post(post_advance))
        .route("/arbitrations/{id}/complete", post(post_complete))
        .route("/arbitrations/{id}/transcript", get(get_transcript))
        .route("/export/csv", get(get_export_csv));
    if let Some(dir) = ui_dir {
        app = app.nest_service("/ui", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app.fallback(route_not_found).with_state(pipeline)
}

pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    axum::serve(listener, app).await
}

/// A server running on its own runtime thread; stops when dropped.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// Blocks until the server exits.
    pub fn join(mut self) -> std::io::Result<()> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves on a background thread.
pub fn start(pipeline: Arc<Pipeline>, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let addr = listener.local_addr()?;
    let app = router(pipeline, ui_dir);
    let (tx, rx) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        })
    });
    tracing::info!(%addr, "listening");
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
