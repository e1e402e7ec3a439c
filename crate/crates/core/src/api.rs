//! JSON-over-HTTP interface to a [`Workbench`].
//!
//! Errors share one envelope, `{"code": ..., "message": ...}`: 400 for
//! malformed requests, 401 for a missing or wrong bearer token, 404 for unknown
//! ids, 409 for version and session-state conflicts, 422 for content that
//! fails validation, 502 when the model provider fails.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationError, AnnotationRecord, IcrError, UnitMode};
use crate::dialogue::{Aspect, DialogueError, DialogueSession, SessionState, Turn};
use crate::generation::GenerationError;
use crate::merge::MergeError;
use crate::service::{TaxRef, Workbench, WorkbenchError};
use crate::store::StoreError;
use crate::taxonomy::DiffError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

const UNPROCESSABLE: StatusCode = StatusCode::UNPROCESSABLE_ENTITY;

impl From<WorkbenchError> for ApiError {
    fn from(e: WorkbenchError) -> Self {
        let message = e.to_string();
        let (status, code) = match &e {
            WorkbenchError::Store(s) => match s {
                StoreError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
                StoreError::BadId(_) => (StatusCode::BAD_REQUEST, "bad_request"),
                StoreError::VersionConflict { .. } => (StatusCode::CONFLICT, "version_conflict"),
                StoreError::ActiveSession { .. } => (StatusCode::CONFLICT, "session_active"),
                StoreError::Codec(_) => (UNPROCESSABLE, "validation_failed"),
                StoreError::Corrupt { .. } | StoreError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            },
            WorkbenchError::Generation(g) => match g.root_cause() {
                GenerationError::Gateway { .. } => (StatusCode::BAD_GATEWAY, "gateway_error"),
                GenerationError::InvalidContext(_) => (StatusCode::BAD_REQUEST, "bad_request"),
                _ => (UNPROCESSABLE, "generation_failed"),
            },
            WorkbenchError::Dialogue(d) => match d {
                DialogueError::InvalidTaxonomy(_) => (UNPROCESSABLE, "validation_failed"),
                DialogueError::SessionFinalized | DialogueError::NoPendingQuestion | DialogueError::PendingAspects { .. } => {
                    (StatusCode::CONFLICT, "session_state")
                }
                DialogueError::EmptyReply => (StatusCode::BAD_REQUEST, "bad_request"),
                DialogueError::CreatorParse(_) => (UNPROCESSABLE, "creator_output_rejected"),
                DialogueError::Gateway(_) => (StatusCode::BAD_GATEWAY, "gateway_error"),
                DialogueError::Mismatch(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            },
            WorkbenchError::Merge(m) => match m.as_ref() {
                MergeError::NoInputs => (StatusCode::BAD_REQUEST, "bad_request"),
                MergeError::Gateway(_) => (StatusCode::BAD_GATEWAY, "gateway_error"),
                _ => (UNPROCESSABLE, "validation_failed"),
            },
            WorkbenchError::Annotation(a) => match a {
                AnnotationError::Gateway(_) => (StatusCode::BAD_GATEWAY, "gateway_error"),
                _ => (UNPROCESSABLE, "validation_failed"),
            },
            WorkbenchError::Icr(i) => match i {
                IcrError::FewerThanTwoCoders(_) | IcrError::EmptyInput => (UNPROCESSABLE, "insufficient_annotations"),
                _ => (UNPROCESSABLE, "validation_failed"),
            },
            WorkbenchError::Diff(DiffError::MismatchedTaxonomy { .. } | DiffError::DoesNotApply(_)) => (UNPROCESSABLE, "validation_failed"),
            WorkbenchError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
        };
        ApiError::new(status, code, message)
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub status: JobState,
    pub taxonomy_id: Option<String>,
    pub version: Option<u32>,
    pub error: Option<ErrorBody>,
}

struct ApiState {
    wb: Arc<Workbench>,
    jobs: Mutex<BTreeMap<String, JobStatus>>,
    next_job: AtomicU64,
    token: Option<String>,
}

/// Builds the router. With `token` set, every request needs
/// `Authorization: Bearer <token>`.
pub fn router(wb: Arc<Workbench>, token: Option<String>) -> Router {
    let state = Arc::new(ApiState {
        wb,
        jobs: Mutex::new(BTreeMap::new()),
        next_job: AtomicU64::new(1),
        token,
    });
    Router::new()
        .route("/api/taxonomies", get(list_taxonomies))
        .route("/api/taxonomies/generate", post(generate))
        .route("/api/taxonomies/{id}/versions/{version}", get(get_version))
        .route("/api/taxonomies/{id}/diff", get(get_diff))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/reply", post(reply))
        .route("/api/sessions/{id}/finalize", post(finalize))
        .route("/api/merge", post(merge))
        .route("/api/templates", post(create_template))
        .route("/api/templates/{id}/edits", get(template_edits))
        .route("/api/annotations", post(annotations))
        .route("/api/icr/{template_id}", get(icr))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") })
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

/// Serves `router` on an already bound listener until the future is dropped.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    axum::serve(listener, router).await
}

async fn auth(State(state): State<Arc<ApiState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let expected = format!("Bearer {token}");
        let given = req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token").into_response();
        }
    }
    next.run(req).await
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T, F>(state: &Arc<ApiState>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Workbench) -> Result<T, WorkbenchError> + Send + 'static,
{
    let wb = state.wb.clone();
    tokio::task::spawn_blocking(move || f(&wb))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn parse_version(raw: &str) -> ApiResult<u32> {
    raw.strip_prefix('v')
        .unwrap_or(raw)
        .parse()
        .map_err(|_| ApiError::bad_request(format!("bad version {raw:?}")))
}

fn parse_ref(raw: &str) -> ApiResult<TaxRef> {
    raw.parse().map_err(ApiError::bad_request)
}

async fn list_taxonomies(State(state): State<Arc<ApiState>>) -> ApiResult<Response> {
    let list = blocking(&state, |wb| Ok(wb.store.list_taxonomies()?)).await?;
    Ok(Json(list).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateBody {
    domain: String,
    task: String,
    min_intentions: Option<usize>,
    taxonomy_id: Option<String>,
}

async fn generate(State(state): State<Arc<ApiState>>, body: Bytes) -> ApiResult<Response> {
    let body: GenerateBody = parse_body(&body)?;
    if body.domain.trim().is_empty() || body.task.trim().is_empty() {
        return Err(ApiError::bad_request("domain and task must be non-empty"));
    }
    let job_id = format!("job-{}", state.next_job.fetch_add(1, Ordering::Relaxed));
    let status = JobStatus {
        job_id: job_id.clone(),
        status: JobState::Running,
        taxonomy_id: None,
        version: None,
        error: None,
    };
    state.jobs.lock().unwrap_or_else(|e| e.into_inner()).insert(job_id.clone(), status.clone());
    let worker = state.clone();
    tokio::task::spawn_blocking(move || {
        let result = worker.wb.generate(&body.domain, &body.task, body.min_intentions, body.taxonomy_id.as_deref());
        let mut jobs = worker.jobs.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(job) = jobs.get_mut(&job_id) {
            match result {
                Ok(tax) => {
                    job.status = JobState::Succeeded;
                    job.taxonomy_id = Some(tax.taxonomy_id);
                    job.version = Some(tax.version);
                }
                Err(e) => {
                    let e = ApiError::from(e);
                    job.status = JobState::Failed;
                    job.error = Some(ErrorBody {
                        code: e.code.to_string(),
                        message: e.message,
                    });
                }
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn get_job(State(state): State<Arc<ApiState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let jobs = state.jobs.lock().unwrap_or_else(|e| e.into_inner());
    let job = jobs
        .get(&id)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "not_found", format!("job {id} not found")))?;
    Ok(Json(job).into_response())
}

async fn get_version(State(state): State<Arc<ApiState>>, Path((id, version)): Path<(String, String)>) -> ApiResult<Response> {
    let v = parse_version(&version)?;
    let bytes = blocking(&state, move |wb| Ok(wb.store.get_taxonomy_bytes(&id, v)?)).await?;
    let mut resp = bytes.into_response();
    resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    Ok(resp)
}

async fn get_diff(
    State(state): State<Arc<ApiState>>,
    Path(id): Path<String>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Response> {
    let from = parse_version(q.get("from").ok_or_else(|| ApiError::bad_request("missing query parameter `from`"))?)?;
    let to = parse_version(q.get("to").ok_or_else(|| ApiError::bad_request("missing query parameter `to`"))?)?;
    let diff = blocking(&state, move |wb| wb.diff(&id, from, to)).await?;
    Ok(Json(diff).into_response())
}

/// Session as seen by clients: the export fields plus what to show next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub expert_id: String,
    pub taxonomy_id: String,
    pub start_version: u32,
    pub current_version: u32,
    pub state: SessionState,
    pub pending_question: Option<String>,
    pub current_aspect: Option<Aspect>,
    pub remaining_aspects: Vec<Aspect>,
    pub turns: Vec<Turn>,
}

impl From<&DialogueSession> for SessionView {
    fn from(s: &DialogueSession) -> Self {
        SessionView {
            session_id: s.session_id.clone(),
            expert_id: s.expert_id.clone(),
            taxonomy_id: s.taxonomy_id().to_string(),
            start_version: s.start_version,
            current_version: s.current_version(),
            state: s.state(),
            pending_question: s.next_question().ok().map(str::to_string),
            current_aspect: s.current_aspect(),
            remaining_aspects: s.aspect_queue(),
            turns: s.transcript().to_vec(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionBody {
    taxonomy_id: String,
    expert_id: String,
}

async fn create_session(State(state): State<Arc<ApiState>>, body: Bytes) -> ApiResult<Response> {
    let body: SessionBody = parse_body(&body)?;
    let r = parse_ref(&body.taxonomy_id)?;
    let session = blocking(&state, move |wb| wb.start_session(&r, &body.expert_id)).await?;
    Ok(Json(SessionView::from(&session)).into_response())
}

async fn get_session(State(state): State<Arc<ApiState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let session = blocking(&state, move |wb| wb.load_session(&id)).await?;
    Ok(Json(SessionView::from(&session)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ReplyBody {
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyView {
    pub no_change: bool,
    pub follow_up: bool,
    pub change_rationale: String,
    pub version_after: Option<u32>,
    pub session: SessionView,
}

async fn reply(State(state): State<Arc<ApiState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let body: ReplyBody = parse_body(&body)?;
    let (outcome, session) = blocking(&state, move |wb| wb.reply(&id, &body.text)).await?;
    Ok(Json(ReplyView {
        no_change: outcome.no_change,
        follow_up: outcome.follow_up,
        change_rationale: outcome.change_rationale,
        version_after: outcome.revised.map(|t| t.version),
        session: SessionView::from(&session),
    })
    .into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FinalizeBody {
    #[serde(default)]
    force: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalizeView {
    pub taxonomy_id: String,
    pub version: u32,
    pub session: SessionView,
}

async fn finalize(State(state): State<Arc<ApiState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let body: FinalizeBody = if body.is_empty() { FinalizeBody::default() } else { parse_body(&body)? };
    let (tax, session) = blocking(&state, move |wb| wb.finalize(&id, body.force)).await?;
    Ok(Json(FinalizeView {
        taxonomy_id: tax.taxonomy_id,
        version: tax.version,
        session: SessionView::from(&session),
    })
    .into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MergeBody {
    taxonomies: Vec<String>,
    taxonomy_id: Option<String>,
    #[serde(default)]
    semantic: bool,
}

async fn merge(State(state): State<Arc<ApiState>>, body: Bytes) -> ApiResult<Response> {
    let body: MergeBody = parse_body(&body)?;
    let refs = body.taxonomies.iter().map(|r| parse_ref(r)).collect::<ApiResult<Vec<_>>>()?;
    let (tax, report) = blocking(&state, move |wb| wb.merge(&refs, body.taxonomy_id, body.semantic)).await?;
    Ok(Json(serde_json::json!({
        "taxonomy_id": tax.taxonomy_id,
        "version": tax.version,
        "report": report,
    }))
    .into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateBody {
    original: String,
    revised: String,
}

async fn create_template(State(state): State<Arc<ApiState>>, body: Bytes) -> ApiResult<Response> {
    let body: TemplateBody = parse_body(&body)?;
    let tpl = blocking(&state, move |wb| wb.add_template(&body.original, &body.revised)).await?;
    Ok(Json(serde_json::json!({ "template_id": tpl.template_id })).into_response())
}

async fn template_edits(
    State(state): State<Arc<ApiState>>,
    Path(id): Path<String>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Response> {
    let mode = unit_mode(q.get("units").map(String::as_str))?;
    let edits = blocking(&state, move |wb| wb.template_edits(&id, mode)).await?;
    Ok(Json(edits).into_response())
}

fn unit_mode(raw: Option<&str>) -> ApiResult<UnitMode> {
    match raw {
        None | Some("edit") => Ok(UnitMode::Edit),
        Some("sentence") => Ok(UnitMode::Sentence),
        Some(other) => Err(ApiError::bad_request(format!("unknown unit mode {other:?}"))),
    }
}

/// Either explicit records, or a request for model annotation of one template.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationsBody {
    taxonomy: String,
    #[serde(default)]
    records: Vec<AnnotationRecord>,
    #[serde(default)]
    llm: bool,
    template_id: Option<String>,
    coder_id: Option<String>,
    units: Option<String>,
}

async fn annotations(State(state): State<Arc<ApiState>>, body: Bytes) -> ApiResult<Response> {
    let body: AnnotationsBody = parse_body(&body)?;
    let r = parse_ref(&body.taxonomy)?;
    let records = if body.llm {
        let template_id = body.template_id.ok_or_else(|| ApiError::bad_request("`template_id` is required with `llm`"))?;
        let coder_id = body.coder_id.ok_or_else(|| ApiError::bad_request("`coder_id` is required with `llm`"))?;
        let mode = unit_mode(body.units.as_deref())?;
        blocking(&state, move |wb| wb.llm_annotate(&template_id, &r, &coder_id, mode)).await?
    } else {
        let records = body.records;
        blocking(&state, move |wb| wb.add_annotations(&r, &records)).await?
    };
    Ok(Json(serde_json::json!({ "stored": records.len(), "records": records })).into_response())
}

async fn icr(State(state): State<Arc<ApiState>>, Path(template_id): Path<String>) -> ApiResult<Response> {
    let report = blocking(&state, move |wb| wb.icr(&template_id)).await?;
    Ok(Json(report).into_response())
}
