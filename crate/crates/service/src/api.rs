use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sortflow::error::FieldError;
use sortflow::learn::{Checkpoint, FactorizedPolicy};
use sortflow::prefgen::{DatasetHeader, PrefParams, PreferenceDataset, DATASET_SCHEMA_VERSION};
use sortflow::sim::{generate_scenario, ScenarioParams, SimConfig};
use sortflow::{agents::DEFAULT_TASK, Error};

use crate::session::{HumanPreference, Session, SessionError, SubmitRequest, HUMAN_SOURCE};
use crate::ServiceConfig;

/// JSON error body `{code, message, details}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
            details: Value::Null,
        }
    }

    fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session_not_found", format!("no session {id:?}"))
    }

    fn bad_json(e: serde_json::Error) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_request", e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match &e {
            Error::InvalidConfig(fields) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e.to_string()).with_details(json!(fields))
            }
            Error::InvalidAction(v) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_action", e.to_string())
                .with_details(json!(v.iter().map(|x| x.to_string()).collect::<Vec<_>>())),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Done => Self::new(StatusCode::CONFLICT, "session_done", "the episode has ended"),
            SessionError::NoSuggestions => Self::new(
                StatusCode::CONFLICT,
                "no_suggestions",
                "request suggestions for this tick before choosing one",
            ),
            SessionError::UnknownLabel(l) => Self::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "unknown_choice",
                format!("no suggestion labelled {l:?}"),
            ),
            SessionError::BadRequest(m) => Self::new(StatusCode::BAD_REQUEST, "malformed_request", m),
            SessionError::Core(e) => e.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Shared service state. Sessions are independent; each one is locked for
/// the duration of a request, so mutations on one session never interleave.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServiceConfig,
    trained: Option<FactorizedPolicy>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    preferences: Mutex<Vec<HumanPreference>>,
}

impl AppState {
    /// Loads the checkpoint named in `config`, if any.
    pub fn new(config: ServiceConfig) -> sortflow::Result<Self> {
        config.sim.validate()?;
        let trained = match &config.checkpoint {
            Some(p) => Some(Checkpoint::load(p)?.policy),
            None => None,
        };
        Ok(Self::with_policy(config, trained))
    }

    pub fn with_policy(config: ServiceConfig, trained: Option<FactorizedPolicy>) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                trained,
                sessions: RwLock::new(BTreeMap::new()),
                next_id: AtomicU64::new(1),
                preferences: Mutex::new(Vec::new()),
            }),
        }
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
        self.inner
            .sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    /// Every recorded human preference, in recording order.
    pub fn preferences(&self) -> Vec<HumanPreference> {
        self.inner.preferences.lock().expect("preference lock").clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/state", get(get_state))
        .route("/sessions/{id}/suggestions", get(get_suggestions))
        .route("/sessions/{id}/action", post(submit_action))
        .route("/sessions/{id}/trace", get(get_trace))
        .route("/preferences/export", get(export_preferences))
        .with_state(state)
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    #[serde(default)]
    config: Option<Value>,
    #[serde(default)]
    scenario: Option<ScenarioParams>,
    #[serde(default)]
    seed: u64,
}

fn state_view(s: &Session) -> ApiResult<Value> {
    Ok(json!({
        "session_id": s.id,
        "tick": s.tick(),
        "done": s.done(),
        "state_json": serde_json::to_value(s.state()).map_err(Error::from)?,
        "state_text": s.state_text(),
    }))
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(ApiError::bad_json)?
    };
    let config = match req.config {
        None => app.inner.config.sim.clone(),
        Some(v) => serde_json::from_value::<SimConfig>(v)
            .map_err(|e| Error::InvalidConfig(vec![FieldError::new("config", e.to_string())]))?,
    };
    config.validate()?;
    let scenario = req.scenario.unwrap_or_else(|| app.inner.config.scenario.clone());
    let (config, initial) = generate_scenario(&config, &scenario, req.seed);
    let id = format!("s{:06}", app.inner.next_id.fetch_add(1, Ordering::Relaxed));
    let session = Session::new(id.clone(), config, initial, req.seed);
    let view = state_view(&session)?;
    app.inner
        .sessions
        .write()
        .expect("session map lock")
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_state(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = app.session(&id)?;
    let s = s.lock().expect("session lock");
    Ok(Json(state_view(&s)?))
}

async fn get_suggestions(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = app.session(&id)?;
    let mut s = s.lock().expect("session lock");
    let sug = s.suggest(
        app.inner.trained.as_ref(),
        app.inner.config.horizon,
        app.inner.config.continuation,
    )?;
    Ok(Json(serde_json::to_value(sug).map_err(Error::from)?))
}

async fn submit_action(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let s = app.session(&id)?;
    let req: SubmitRequest = serde_json::from_slice(&body).map_err(ApiError::bad_json)?;
    let mut s = s.lock().expect("session lock");
    let resp = s.submit(req, app.inner.config.continuation)?;
    if !resp.preferences.is_empty() {
        let mut log = app.inner.preferences.lock().expect("preference lock");
        log.extend(resp.preferences.iter().map(|p| HumanPreference {
            session_id: s.id.clone(),
            pair: p.clone(),
        }));
    }
    Ok(Json(serde_json::to_value(resp).map_err(Error::from)?))
}

#[derive(Debug, Default, Deserialize)]
struct TraceQuery {
    #[serde(default)]
    format: Option<String>,
}

fn ndjson(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

/// The session's episode as a shift log (JSON Lines, replayable), or with
/// `?format=json` a structured view including recorded preferences.
async fn get_trace(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TraceQuery>,
) -> ApiResult<Response> {
    let s = app.session(&id)?;
    let s = s.lock().expect("session lock");
    match q.format.as_deref() {
        None | Some("jsonl") => Ok(ndjson(s.log.to_jsonl())),
        Some("json") => Ok(Json(json!({
            "session_id": s.id,
            "tick": s.tick(),
            "done": s.done(),
            "seed": s.log.seed,
            "records": s.log.records,
            "preferences": s.preferences,
        }))
        .into_response()),
        Some(other) => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "malformed_request",
            format!("unknown trace format {other:?}"),
        )),
    }
}

#[derive(Debug, Default, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    session_id: Option<String>,
}

/// Human preferences in the same JSON-Lines dataset format as simulator
/// preferences, optionally restricted to one session.
async fn export_preferences(State(app): State<AppState>, Query(q): Query<ExportQuery>) -> ApiResult<Response> {
    if let Some(id) = &q.session_id {
        app.session(id)?;
    }
    let pairs: Vec<HumanPreference> = app
        .preferences()
        .into_iter()
        .filter(|p| q.session_id.as_ref().is_none_or(|id| &p.session_id == id))
        .collect();
    let states: BTreeSet<(&str, usize)> = pairs
        .iter()
        .map(|p| (p.session_id.as_str(), p.pair.provenance.state_index))
        .collect();
    let cfg = &app.inner.config;
    let ds = PreferenceDataset {
        header: DatasetHeader {
            kind: "header".into(),
            schema_version: DATASET_SCHEMA_VERSION,
            task: DEFAULT_TASK.into(),
            source: HUMAN_SOURCE.into(),
            params: PrefParams {
                horizon: cfg.horizon,
                margin: 0.0,
                continuation: cfg.continuation,
                iteration: 0,
                seed: 0,
            },
            n_states: states.len(),
            n_pairs: pairs.len(),
        },
        pairs: pairs.into_iter().map(|p| p.pair).collect(),
        dropped: Vec::new(),
    };
    Ok(ndjson(ds.to_jsonl()))
}
