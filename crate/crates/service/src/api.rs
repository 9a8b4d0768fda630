//! JSON HTTP API over the store, search index, workspace, analysis jobs and
//! evaluation report.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Extension, Json, Router};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use mrvs_core::descriptors::DescriptorProfile;
use mrvs_core::eval::{evaluate, report, Aggregation, EvalConfig};
use mrvs_core::ingest::{GroundTruthEvent, PatrolSession, Period};
use mrvs_core::pipeline::{Engine, SegmentFailure};
use mrvs_core::pipeline::CardStatus;
use mrvs_core::search::{DescriptorIndex, DescriptorQuery, SearchError};
use mrvs_core::store::{EventFilter, EventStore, GeoBox, Scope, StoreError};
use mrvs_core::PriorityLevel;

use crate::auth::{bearer, ApiSession, AuthError, TokenTable};
use crate::setup::failed_spans;

pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 1000;

type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub state: JobState,
    pub sessions: Vec<String>,
    pub cards_written: usize,
    pub failed_segments: usize,
    pub error: Option<String>,
}

pub struct AppState {
    store: RwLock<EventStore>,
    profiles: RwLock<Vec<DescriptorProfile>>,
    index: RwLock<Arc<DescriptorIndex>>,
    pub tokens: TokenTable,
    truth: Option<Vec<GroundTruthEvent>>,
    failures: Mutex<Vec<SegmentFailure>>,
    jobs: Mutex<BTreeMap<String, JobStatus>>,
    engine: Option<Arc<Engine>>,
    clock: Clock,
}

impl AppState {
    /// Token holders are registered as store users so workspace rules can
    /// resolve their team.
    pub fn new(mut store: EventStore, tokens: Vec<ApiSession>) -> Result<AppState, String> {
        for t in &tokens {
            store.add_user(t.user()).map_err(|e| e.to_string())?;
        }
        Ok(AppState {
            store: RwLock::new(store),
            profiles: RwLock::new(Vec::new()),
            index: RwLock::new(Arc::new(DescriptorIndex::default())),
            tokens: TokenTable::new(tokens),
            truth: None,
            failures: Mutex::new(Vec::new()),
            jobs: Mutex::new(BTreeMap::new()),
            engine: None,
            clock: Box::new(Utc::now),
        })
    }

    /// Registers `user` and mints a token for them.
    pub fn issue_token(&self, user: &mrvs_core::store::User, ttl: chrono::Duration) -> Result<ApiSession, StoreError> {
        self.store_mut().add_user(user.clone())?;
        Ok(self.tokens.issue(user, ttl, self.now()))
    }

    pub fn with_truth(mut self, truth: Vec<GroundTruthEvent>) -> AppState {
        self.truth = Some(truth);
        self
    }

    pub fn with_engine(mut self, engine: Engine) -> AppState {
        self.engine = Some(Arc::new(engine));
        self
    }

    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> AppState {
        self.clock = Box::new(clock);
        self
    }

    pub fn with_failures(self, failures: Vec<SegmentFailure>) -> AppState {
        *self.failures.lock().expect("failures lock") = failures;
        self
    }

    pub fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    pub fn store(&self) -> std::sync::RwLockReadGuard<'_, EventStore> {
        self.store.read().expect("store lock")
    }

    pub fn store_mut(&self) -> std::sync::RwLockWriteGuard<'_, EventStore> {
        self.store.write().expect("store lock")
    }

    pub fn index(&self) -> Arc<DescriptorIndex> {
        self.index.read().expect("index lock").clone()
    }

    /// Replaces the profile set and swaps in a rebuilt index.
    pub fn set_profiles(&self, profiles: Vec<DescriptorProfile>) -> Result<(), SearchError> {
        *self.profiles.write().expect("profiles lock") = profiles;
        self.refresh_index()
    }

    fn refresh_index(&self) -> Result<(), SearchError> {
        let profiles = self.profiles.read().expect("profiles lock").clone();
        let cards: Vec<_> = self.store().all_cards().cloned().collect();
        let idx = DescriptorIndex::build(profiles, &cards)?;
        *self.index.write().expect("index lock") = Arc::new(idx);
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> ApiError {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> ApiError {
        ApiError::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn unauthorized(e: AuthError) -> ApiError {
        let code = match e {
            AuthError::Expired => "token_expired",
            _ => "unauthorized",
        };
        ApiError::new(StatusCode::UNAUTHORIZED, code, e.message())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> ApiError {
        let (status, code) = match &e {
            StoreError::UnknownCard(_) | StoreError::UnknownItem(_) | StoreError::UnknownUser(_) => {
                (StatusCode::NOT_FOUND, "not_found")
            }
            StoreError::Forbidden { .. } => (StatusCode::FORBIDDEN, "forbidden"),
            StoreError::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
            _ => (StatusCode::BAD_REQUEST, "bad_request"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> ApiError {
        match e {
            SearchError::UnknownEntity(_) => ApiError::not_found(e.to_string()),
            SearchError::Unconstrained => ApiError::new(StatusCode::BAD_REQUEST, "unconstrained_query", e.to_string()),
            _ => ApiError::bad_request(e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Who is calling; `None` for anonymous reads.
#[derive(Debug, Clone)]
pub struct Caller(pub Option<ApiSession>);

impl Caller {
    fn require(&self) -> ApiResult<&ApiSession> {
        self.0.as_ref().ok_or(ApiError::unauthorized(AuthError::Missing))
    }
}

/// Any presented token must be valid and unexpired, on every route.
async fn authenticate(State(state): State<Arc<AppState>>, mut req: Request, next: Next) -> Response {
    let header = req
        .headers()
        .get(header::AUTHORIZATION)
        .map(|v| v.to_str().unwrap_or_default().to_owned());
    let caller = match header {
        None => Caller(None),
        Some(h) => {
            let Some(token) = bearer(&h) else {
                return ApiError::unauthorized(AuthError::Unknown).into_response();
            };
            match state.tokens.check(token, state.now()) {
                Ok(s) => Caller(Some(s)),
                Err(e) => return ApiError::unauthorized(e).into_response(),
            }
        }
    };
    req.extensions_mut().insert(caller);
    next.run(req).await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub next_cursor: Option<String>,
}

/// Cursors are opaque offsets into the deterministic result order.
pub fn paginate<T>(items: Vec<T>, cursor: Option<&str>, limit: Option<usize>) -> ApiResult<Page<T>> {
    let offset = match cursor {
        None | Some("") => 0,
        Some(c) => c
            .parse::<usize>()
            .map_err(|_| ApiError::bad_request(format!("invalid cursor {c:?}")))?,
    };
    let limit = limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::bad_request(format!("limit must be in 1..={MAX_PAGE}")));
    }
    let total = items.len();
    let end = offset.saturating_add(limit).min(total);
    let next_cursor = (end < total).then(|| end.to_string());
    let items = items.into_iter().skip(offset).take(limit).collect();
    Ok(Page { items, next_cursor })
}

#[derive(Debug, Default, Deserialize)]
pub struct ListParams {
    pub priority: Option<String>,
    pub session: Option<String>,
    pub eoi_type: Option<String>,
    pub status: Option<String>,
    pub period: Option<String>,
    pub start_ms: Option<i64>,
    pub end_ms: Option<i64>,
    pub bbox: Option<String>,
    pub scope: Option<String>,
    pub cursor: Option<String>,
    pub limit: Option<usize>,
}

fn csv_set<T: Ord>(raw: &Option<String>, parse: impl Fn(&str) -> Result<T, String>) -> ApiResult<Option<BTreeSet<T>>> {
    let Some(raw) = raw else { return Ok(None) };
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(s.trim()).map_err(ApiError::bad_request))
        .collect::<ApiResult<BTreeSet<T>>>()
        .map(Some)
}

fn parse_priority(s: &str) -> Result<PriorityLevel, String> {
    s.parse()
}

/// Query-string form of [`EventFilter`]; list values are comma-separated.
pub fn filter_from_params(p: &ListParams) -> ApiResult<EventFilter> {
    let time_range = match (p.start_ms, p.end_ms) {
        (None, None) => None,
        (Some(s), Some(e)) if s <= e => Some((s, e)),
        (Some(s), Some(e)) => return Err(ApiError::bad_request(format!("inverted time range [{s}, {e})"))),
        _ => return Err(ApiError::bad_request("start_ms and end_ms go together")),
    };
    Ok(EventFilter {
        time_range,
        sessions: csv_set(&p.session, |s| Ok(s.to_owned()))?,
        priorities: csv_set(&p.priority, parse_priority)?,
        eoi_types: csv_set(&p.eoi_type, |s| s.parse::<u8>().map_err(|_| format!("bad eoi_type {s:?}")))?,
        statuses: csv_set(&p.status, |s| s.parse::<CardStatus>())?,
        period: p.period.as_deref().map(str::parse::<Period>).transpose().map_err(ApiError::bad_request)?,
    })
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_json", e.to_string()))
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn list_sessions(State(st): State<Arc<AppState>>, Query(p): Query<ListParams>) -> ApiResult<Json<Page<PatrolSession>>> {
    let sessions: Vec<PatrolSession> = st.store().sessions().into_iter().cloned().collect();
    Ok(Json(paginate(sessions, p.cursor.as_deref(), p.limit)?))
}

async fn list_events(State(st): State<Arc<AppState>>, Query(p): Query<ListParams>) -> ApiResult<Response> {
    let filter = filter_from_params(&p)?;
    let cards = st.store().query_events(&filter);
    Ok(Json(paginate(cards, p.cursor.as_deref(), p.limit)?).into_response())
}

async fn get_event(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let store = st.store();
    let card = store.card(&id).ok_or_else(|| ApiError::not_found(format!("unknown card {id:?}")))?;
    Ok(Json(card).into_response())
}

async fn timeline(State(st): State<Arc<AppState>>, Query(p): Query<ListParams>) -> ApiResult<Response> {
    let filter = filter_from_params(&p)?;
    let lanes = st.store().timeline(&filter);
    Ok(Json(paginate(lanes, p.cursor.as_deref(), p.limit)?).into_response())
}

async fn map(State(st): State<Arc<AppState>>, Query(p): Query<ListParams>) -> ApiResult<Response> {
    let raw = p.bbox.as_deref().ok_or_else(|| ApiError::bad_request("bbox is required"))?;
    let geo = GeoBox::parse(raw)?;
    let filter = filter_from_params(&p)?;
    let pins = st.store().query_region(&geo, &filter);
    Ok(Json(paginate(pins, p.cursor.as_deref(), p.limit)?).into_response())
}

async fn search(State(st): State<Arc<AppState>>, Query(p): Query<ListParams>, body: Bytes) -> ApiResult<Response> {
    let q: DescriptorQuery = parse_body(&body)?;
    let matches = st.index().query(&q)?;
    Ok(Json(paginate(matches, p.cursor.as_deref(), p.limit)?).into_response())
}

async fn similar(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(p): Query<ListParams>,
) -> ApiResult<Response> {
    let matches = st.index().find_similar(&id)?;
    Ok(Json(paginate(matches, p.cursor.as_deref(), p.limit)?).into_response())
}

#[derive(Debug, Deserialize)]
struct SaveBody {
    card_id: String,
    #[serde(default)]
    scope: Option<String>,
    #[serde(default)]
    note: String,
}

async fn save_item(
    State(st): State<Arc<AppState>>,
    Extension(caller): Extension<Caller>,
    body: Bytes,
) -> ApiResult<Response> {
    let who = caller.require()?;
    let b: SaveBody = parse_body(&body)?;
    let scope = match b.scope.as_deref() {
        None => Scope::Personal,
        Some(s) => s.parse().map_err(ApiError::bad_request)?,
    };
    let item = st.store_mut().workspace_save(&b.card_id, &who.user_id, scope, &b.note, st.now())?;
    Ok((StatusCode::CREATED, Json(item)).into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchBody {
    status: Option<String>,
    note: Option<String>,
    #[serde(default, with = "double_option")]
    assignee: Option<Option<String>>,
    #[serde(default, with = "double_option")]
    case_number: Option<Option<String>>,
}

/// Distinguishes an absent field from an explicit `null`.
mod double_option {
    use serde::{Deserialize, Deserializer};

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<String>>, D::Error> {
        Option::<String>::deserialize(d).map(Some)
    }
}

async fn patch_item(
    State(st): State<Arc<AppState>>,
    Extension(caller): Extension<Caller>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let who = caller.require()?;
    let b: PatchBody = parse_body(&body)?;
    let status = match &b.status {
        Some(s) => Some(
            s.parse::<CardStatus>()
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "illegal_status", e))?,
        ),
        None => None,
    };
    if status.is_none() && b.note.is_none() && b.assignee.is_none() && b.case_number.is_none() {
        return Err(ApiError::bad_request("patch changes nothing"));
    }
    let now = st.now();
    let mut store = st.store_mut();
    let mut item = store.item(&id)?.clone();
    if let Some(s) = status {
        item = store.workspace_set_status(&id, &who.user_id, s, now)?;
    }
    if let Some(n) = &b.note {
        item = store.workspace_annotate(&id, &who.user_id, n, now)?;
    }
    if let Some(a) = &b.assignee {
        item = store.workspace_assign(&id, &who.user_id, a.as_deref(), now)?;
    }
    if let Some(c) = &b.case_number {
        item = store.workspace_set_case_number(&id, &who.user_id, c.as_deref(), now)?;
    }
    Ok(Json(item).into_response())
}

async fn list_workspace(
    State(st): State<Arc<AppState>>,
    Extension(caller): Extension<Caller>,
    Query(p): Query<ListParams>,
) -> ApiResult<Response> {
    let who = caller.require()?;
    let scope = match p.scope.as_deref() {
        None => Scope::Personal,
        Some(s) => s.parse().map_err(ApiError::bad_request)?,
    };
    let statuses = csv_set(&p.status, |s| s.parse::<CardStatus>())?;
    let items = st.store().workspace_list(&who.user_id, scope, statuses.as_ref())?;
    Ok(Json(paginate(items, p.cursor.as_deref(), p.limit)?).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct AnalyzeBody {
    #[serde(default)]
    sessions: Option<Vec<String>>,
}

fn run_job(st: &AppState, job_id: &str, sessions: Vec<PatrolSession>, engine: &Engine) {
    let set = |f: &dyn Fn(&mut JobStatus)| {
        if let Some(j) = st.jobs.lock().expect("jobs lock").get_mut(job_id) {
            f(j);
        }
    };
    set(&|j| j.state = JobState::Running);
    let result = engine.analyze_sessions(&sessions).map_err(|e| e.to_string()).and_then(|outcomes| {
        let cards: Vec<_> = outcomes.iter().flat_map(|o| o.cards.iter().cloned()).collect();
        let failures: Vec<_> = outcomes.iter().flat_map(|o| o.failures.iter().cloned()).collect();
        st.store_mut().put_cards(&cards).map_err(|e| e.to_string())?;
        let n_failed = failures.len();
        {
            let mut all = st.failures.lock().expect("failures lock");
            let ids: BTreeSet<&str> = sessions.iter().map(|s| s.session_id.as_str()).collect();
            all.retain(|f| !ids.contains(f.session_id.as_str()));
            all.extend(failures);
        }
        st.refresh_index().map_err(|e| e.to_string())?;
        Ok((cards.len(), n_failed))
    });
    match result {
        Ok((cards, failed)) => set(&|j| {
            j.state = JobState::Done;
            j.cards_written = cards;
            j.failed_segments = failed;
        }),
        Err(e) => set(&|j| {
            j.state = JobState::Failed;
            j.error = Some(e.clone());
        }),
    }
}

async fn start_analysis(
    State(st): State<Arc<AppState>>,
    Extension(caller): Extension<Caller>,
    body: Bytes,
) -> ApiResult<Response> {
    caller.require()?;
    let b: AnalyzeBody = if body.is_empty() { AnalyzeBody::default() } else { parse_body(&body)? };
    let engine = st
        .engine
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "analysis_unavailable", "no analysis providers configured"))?;
    let sessions: Vec<PatrolSession> = {
        let store = st.store();
        match &b.sessions {
            None => store.sessions().into_iter().cloned().collect(),
            Some(ids) => ids
                .iter()
                .map(|id| {
                    store
                        .session(id)
                        .cloned()
                        .ok_or_else(|| ApiError::bad_request(format!("unknown session {id:?}")))
                })
                .collect::<ApiResult<_>>()?,
        }
    };
    let status = {
        let mut jobs = st.jobs.lock().expect("jobs lock");
        let job_id = format!("job-{:06}", jobs.len() + 1);
        let status = JobStatus {
            job_id: job_id.clone(),
            state: JobState::Queued,
            sessions: sessions.iter().map(|s| s.session_id.clone()).collect(),
            cards_written: 0,
            failed_segments: 0,
            error: None,
        };
        jobs.insert(job_id, status.clone());
        status
    };
    let job_id = status.job_id.clone();
    let state = st.clone();
    tokio::task::spawn_blocking(move || run_job(&state, &job_id, sessions, &engine));
    Ok((StatusCode::ACCEPTED, Json(status)).into_response())
}

async fn get_job(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let jobs = st.jobs.lock().expect("jobs lock");
    let job = jobs.get(&id).ok_or_else(|| ApiError::not_found(format!("unknown job {id:?}")))?;
    Ok(Json(job).into_response())
}

#[derive(Debug, Default, Deserialize)]
struct ReportParams {
    #[serde(default, rename = "macro")]
    macro_avg: bool,
    period: Option<String>,
}

async fn eval_report(State(st): State<Arc<AppState>>, Query(p): Query<ReportParams>) -> ApiResult<Response> {
    let truth = st
        .truth
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "missing_truth", "no ground-truth file loaded"))?;
    let period = match p.period.as_deref() {
        None | Some("all") => None,
        Some(s) => Some(s.parse::<Period>().map_err(ApiError::bad_request)?),
    };
    let (sessions, cards) = {
        let store = st.store();
        let sessions: Vec<PatrolSession> = store
            .sessions()
            .into_iter()
            .filter(|s| period.is_none_or(|p| s.period == p))
            .cloned()
            .collect();
        let ids: BTreeSet<&str> = sessions.iter().map(|s| s.session_id.as_str()).collect();
        let cards: Vec<_> = store.all_cards().filter(|c| ids.contains(c.session_id.as_str())).cloned().collect();
        (sessions, cards)
    };
    let ids: BTreeSet<&str> = sessions.iter().map(|s| s.session_id.as_str()).collect();
    let truth: Vec<GroundTruthEvent> = truth.iter().filter(|t| ids.contains(t.session_id.as_str())).cloned().collect();
    let failed = failed_spans(&st.failures.lock().expect("failures lock"));
    let failed: Vec<_> = failed.into_iter().filter(|(s, _)| ids.contains(s.as_str())).collect();
    let agg = if p.macro_avg { Aggregation::Macro } else { Aggregation::Micro };
    let segs = evaluate(&sessions, &cards, &truth, &failed, &EvalConfig::default())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let rep = report(&sessions, &segs, agg).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(Json(rep).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", get(list_sessions))
        .route("/events", get(list_events))
        .route("/events/{id}", get(get_event))
        .route("/timeline", get(timeline))
        .route("/map", get(map))
        .route("/search", post(search))
        .route("/entities/{id}/similar", get(similar))
        .route("/workspace", get(list_workspace))
        .route("/workspace/items", post(save_item))
        .route("/workspace/items/{id}", patch(patch_item))
        .route("/analyze", post(start_analysis))
        .route("/jobs/{id}", get(get_job))
        .route("/eval/report", get(eval_report))
        .layer(middleware::from_fn_with_state(state.clone(), authenticate))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: &str) -> Result<(), String> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| format!("cannot bind {addr}: {e}"))?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}
