//! HTTP API and server-sent event stream.
//!
//! Each project sits behind one async read/write lock: readers share it,
//! writers queue on it, so mutations are totally ordered per project.
//! Stream messages are published while the write lock is still held, which
//! makes their sequence order match the mutation order.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream};
use hakf_core::cep::{EngineError, LoggedEvent};
use hakf_core::definition::{ComplexEventDefinition, DefinitionError};
use hakf_core::event::Context;
use hakf_core::explain::{self, ExplainError};
use hakf_core::graph::{GraphError, KnowledgeGraph};
use hakf_core::palette::{Concept, PaletteError};
use hakf_core::sim::{validate_scenario, ScenarioError};
use hakf_core::tellability::{RegularMarking, TellabilityError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, RwLock};

use crate::project::{Occurrence, Project, ProjectError};
use crate::store::{Store, StoreError};

/// Per-subscriber buffer; a client that falls this far behind is dropped.
pub const STREAM_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMessage {
    pub sequence: u64,
    pub kind: String,
    pub payload: Value,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    error: String,
    details: Vec<String>,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>) -> Self {
        Self {
            status,
            error: error.into(),
            details: Vec::new(),
        }
    }

    fn with_details(mut self, details: Vec<String>) -> Self {
        self.details = details;
        self
    }

    fn bad_request(error: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error)
    }

    fn not_found(error: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, error)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.error, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl From<ProjectError> for ApiError {
    fn from(e: ProjectError) -> Self {
        let message = e.to_string();
        match e {
            ProjectError::Store(e) => e.into(),
            ProjectError::Palette(PaletteError::DuplicateConcept(_) | PaletteError::DuplicateRelation(_)) => {
                Self::new(StatusCode::CONFLICT, message)
            }
            ProjectError::Palette(PaletteError::Conflict(v)) => {
                Self::new(StatusCode::CONFLICT, "palette conflict").with_details(v)
            }
            ProjectError::Definition(DefinitionError::Invalid(v))
            | ProjectError::Engine(EngineError::Definition(DefinitionError::Invalid(v))) => {
                Self::bad_request("invalid definition").with_details(v.iter().map(ToString::to_string).collect())
            }
            ProjectError::Scenario(ScenarioError::Invalid(v)) => Self::bad_request("invalid scenario").with_details(v),
            ProjectError::Engine(EngineError::InvalidEvent(v)) => Self::bad_request("invalid event").with_details(v),
            ProjectError::Engine(EngineError::OutOfOrder { .. })
            | ProjectError::Tellability(TellabilityError::OutOfOrder { .. })
            | ProjectError::Engine(EngineError::Tellability(TellabilityError::OutOfOrder { .. })) => {
                Self::new(StatusCode::CONFLICT, message)
            }
            ProjectError::Engine(EngineError::UnknownDefinition(_))
            | ProjectError::Tellability(TellabilityError::NoSuchMarking { .. } | TellabilityError::UnknownFeed(_)) => {
                Self::not_found(message)
            }
            _ => Self::bad_request(message),
        }
    }
}

impl From<TellabilityError> for ApiError {
    fn from(e: TellabilityError) -> Self {
        ProjectError::from(e).into()
    }
}

impl From<GraphError> for ApiError {
    fn from(e: GraphError) -> Self {
        Self::bad_request(e.to_string())
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let text = std::str::from_utf8(body).map_err(|e| ApiError::bad_request(format!("body is not UTF-8: {e}")))?;
    hakf_core::json::from_str(text).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn valid_project_id(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphanumeric())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

struct ProjectHandle {
    project: RwLock<Project>,
    stream: broadcast::Sender<StreamMessage>,
    sequence: AtomicU64,
}

impl ProjectHandle {
    fn new(project: Project) -> Self {
        Self {
            project: RwLock::new(project),
            stream: broadcast::channel(STREAM_CAPACITY).0,
            sequence: AtomicU64::new(0),
        }
    }

    /// Must be called with the project write lock held.
    fn publish(&self, occurrences: Vec<Occurrence>) {
        for o in occurrences {
            let sequence = self.sequence.fetch_add(1, Ordering::SeqCst) + 1;
            let _ = self.stream.send(StreamMessage {
                sequence,
                kind: o.kind.to_string(),
                payload: o.payload,
            });
        }
    }

    /// Applies `f` under the write lock, publishing its occurrences on
    /// success and resynchronizing from disk when persistence failed.
    async fn mutate<T>(
        &self,
        f: impl FnOnce(&mut Project) -> Result<(T, Vec<Occurrence>), ProjectError>,
    ) -> Result<T, ApiError> {
        let mut project = self.project.write().await;
        match f(&mut project) {
            Ok((value, occurrences)) => {
                self.publish(occurrences);
                Ok(value)
            }
            Err(e) => {
                if matches!(e, ProjectError::Store(_)) {
                    project.reload()?;
                }
                Err(e.into())
            }
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    store: Store,
    projects: Arc<Mutex<HashMap<String, Arc<ProjectHandle>>>>,
}

impl AppState {
    /// Recovers every project on disk; fails naming the first corrupt file.
    pub fn load(store: Store) -> Result<Self, StoreError> {
        let mut projects = HashMap::new();
        for id in store.project_ids()? {
            let project = Project::open(&store, &id)?;
            projects.insert(id, Arc::new(ProjectHandle::new(project)));
        }
        Ok(Self {
            store,
            projects: Arc::new(Mutex::new(projects)),
        })
    }

    fn handle(&self, id: &str) -> Result<Arc<ProjectHandle>, ApiError> {
        if !valid_project_id(id) {
            return Err(ApiError::bad_request(format!("invalid project id `{id}`")));
        }
        let mut projects = self.projects.lock().expect("project table lock");
        if let Some(h) = projects.get(id) {
            return Ok(h.clone());
        }
        let handle = Arc::new(ProjectHandle::new(Project::open(&self.store, id)?));
        projects.insert(id.to_string(), handle.clone());
        Ok(handle)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/projects/{p}/graph", get(get_graph).put(put_graph))
        .route("/api/projects/{p}/palette", get(get_palette))
        .route("/api/projects/{p}/palette/concepts", post(post_concept))
        .route(
            "/api/projects/{p}/definitions",
            get(get_definitions).post(post_definition),
        )
        .route(
            "/api/projects/{p}/feeds/{f}/regular",
            post(post_regular).delete(delete_regular),
        )
        .route("/api/projects/{p}/feeds/{f}/frequencies", get(get_frequencies))
        .route("/api/projects/{p}/detections", get(get_detections))
        .route("/api/projects/{p}/detections/{id}/explanation", get(get_explanation))
        .route("/api/projects/{p}/events/{id}/suppression", get(get_suppression))
        .route("/api/projects/{p}/mapping", get(get_mapping).put(put_mapping))
        .route("/api/projects/{p}/scenario/run", post(post_run))
        .route("/api/projects/{p}/stream", get(get_stream))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

type ApiResult = Result<Response, ApiError>;

fn ok<T: Serialize>(value: T) -> ApiResult {
    Ok(Json(value).into_response())
}

fn created<T: Serialize>(value: T) -> ApiResult {
    Ok((StatusCode::CREATED, Json(value)).into_response())
}

fn raw_json(text: String) -> ApiResult {
    Ok(([(axum::http::header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn health() -> ApiResult {
    ok(json!({ "status": "ok" }))
}

async fn get_graph(State(s): State<AppState>, Path(p): Path<String>) -> ApiResult {
    let h = s.handle(&p)?;
    let project = h.project.read().await;
    raw_json(project.graph().to_json())
}

async fn put_graph(State(s): State<AppState>, Path(p): Path<String>, body: Bytes) -> ApiResult {
    let h = s.handle(&p)?;
    let text = std::str::from_utf8(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let graph = KnowledgeGraph::from_json(text)?;
    if graph.project_id() != p {
        return Err(ApiError::bad_request(format!(
            "graph belongs to project `{}`, not `{p}`",
            graph.project_id()
        )));
    }
    let json = h
        .mutate(|project| {
            let occurrences = project.put_graph(graph)?;
            Ok((project.graph().to_json(), occurrences))
        })
        .await?;
    raw_json(json)
}

async fn get_palette(State(s): State<AppState>, Path(p): Path<String>) -> ApiResult {
    let h = s.handle(&p)?;
    let project = h.project.read().await;
    raw_json(project.palette().to_json())
}

async fn post_concept(State(s): State<AppState>, Path(p): Path<String>, body: Bytes) -> ApiResult {
    let h = s.handle(&p)?;
    let concept: Concept = parse(&body)?;
    let json = h
        .mutate(|project| {
            let occurrences = project.add_concept(concept)?;
            Ok((project.palette().to_json(), occurrences))
        })
        .await?;
    Ok((
        StatusCode::CREATED,
        [(axum::http::header::CONTENT_TYPE, "application/json")],
        json,
    )
        .into_response())
}

async fn get_definitions(State(s): State<AppState>, Path(p): Path<String>) -> ApiResult {
    let h = s.handle(&p)?;
    let project = h.project.read().await;
    ok(project.definition_views())
}

async fn post_definition(State(s): State<AppState>, Path(p): Path<String>, body: Bytes) -> ApiResult {
    let h = s.handle(&p)?;
    let def: ComplexEventDefinition = parse(&body)?;
    let fragment = h.mutate(|project| project.add_definition(&def)).await?;
    created(json!({ "definition": def, "fragment": fragment.text, "checksum": fragment.checksum }))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct MarkingBody {
    class_label: String,
    #[serde(default = "any_context")]
    context: Context,
    #[serde(default = "operator")]
    marked_by: String,
    marked_at: Option<f64>,
}

fn any_context() -> Context {
    Context::Any
}

fn operator() -> String {
    "operator".to_string()
}

async fn post_regular(State(s): State<AppState>, Path((p, f)): Path<(String, String)>, body: Bytes) -> ApiResult {
    let h = s.handle(&p)?;
    let body: MarkingBody = parse(&body)?;
    let (version, marking) = h
        .mutate(|project| {
            let at = body.marked_at.or(project.engine().clock()).unwrap_or(0.0);
            let marking = RegularMarking::new(f, body.class_label, body.context, body.marked_by, at);
            let (version, occurrences) = project.mark_regular(marking.clone())?;
            Ok(((version, marking), occurrences))
        })
        .await?;
    created(json!({ "version": version, "marking": marking }))
}

#[derive(Deserialize)]
struct UnmarkQuery {
    class: String,
    #[serde(default = "any_context")]
    context: Context,
}

async fn delete_regular(
    State(s): State<AppState>,
    Path((p, f)): Path<(String, String)>,
    Query(q): Query<UnmarkQuery>,
) -> ApiResult {
    let h = s.handle(&p)?;
    let version = h
        .mutate(|project| project.unmark_regular(&f, &q.class, q.context))
        .await?;
    ok(json!({ "version": version }))
}

#[derive(Deserialize)]
struct FrequencyQuery {
    window: Option<f64>,
    #[serde(default = "any_context")]
    context: Context,
}

async fn get_frequencies(
    State(s): State<AppState>,
    Path((p, f)): Path<(String, String)>,
    Query(q): Query<FrequencyQuery>,
) -> ApiResult {
    let h = s.handle(&p)?;
    let project = h.project.read().await;
    let window = q.window.unwrap_or(crate::project::STREAM_FREQUENCY_WINDOW);
    ok(project.engine().tellability().top_classes(&f, window, q.context)?)
}

#[derive(Deserialize)]
struct SinceQuery {
    #[serde(default)]
    since: usize,
}

async fn get_detections(State(s): State<AppState>, Path(p): Path<String>, Query(q): Query<SinceQuery>) -> ApiResult {
    let h = s.handle(&p)?;
    let project = h.project.read().await;
    let all = project.engine().detections();
    let from = q.since.min(all.len());
    ok(json!({ "next": all.len(), "detections": &all[from..] }))
}

async fn get_explanation(State(s): State<AppState>, Path((p, id)): Path<(String, String)>) -> ApiResult {
    let h = s.handle(&p)?;
    let project = h.project.read().await;
    let engine = project.engine();
    let detection = engine
        .detections()
        .iter()
        .find(|d| d.id == id)
        .ok_or_else(|| ApiError::not_found(format!("unknown detection `{id}`")))?;
    let definitions: Vec<_> = engine.definitions().cloned().collect();
    match explain::explain(detection, engine.log(), &definitions) {
        Ok(e) => ok(e),
        Err(e @ ExplainError::UnknownDefinition(_)) => Err(ApiError::not_found(e.to_string())),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn get_suppression(State(s): State<AppState>, Path((p, id)): Path<(String, String)>) -> ApiResult {
    let h = s.handle(&p)?;
    let project = h.project.read().await;
    let log: &[LoggedEvent] = project.engine().log();
    match explain::explain_suppression(&id, log) {
        Ok(trace) => ok(json!({ "eventId": id, "suppressed": trace.is_some(), "trace": trace })),
        Err(e) => Err(ApiError::not_found(e.to_string())),
    }
}

async fn get_mapping(State(s): State<AppState>, Path(p): Path<String>) -> ApiResult {
    let h = s.handle(&p)?;
    let project = h.project.read().await;
    ok(project.engine().tellability().mapping())
}

async fn put_mapping(State(s): State<AppState>, Path(p): Path<String>, body: Bytes) -> ApiResult {
    let h = s.handle(&p)?;
    let entries: BTreeMap<String, String> = parse(&body)?;
    let version = h
        .mutate(|project| Ok((project.replace_mapping(entries)?, Vec::new())))
        .await?;
    ok(json!({ "version": version }))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RunBody {
    scenario_path: Option<PathBuf>,
    scenario: Option<Value>,
    seed: Option<u64>,
}

async fn post_run(State(s): State<AppState>, Path(p): Path<String>, body: Bytes) -> ApiResult {
    let h = s.handle(&p)?;
    let body: RunBody = parse(&body)?;
    let text = match (body.scenario_path, body.scenario) {
        (Some(path), None) => std::fs::read_to_string(&path)
            .map_err(|e| ApiError::bad_request(format!("cannot read {}: {e}", path.display())))?,
        (None, Some(inline)) => inline.to_string(),
        _ => {
            return Err(ApiError::bad_request(
                "give exactly one of `scenarioPath` and `scenario`",
            ))
        }
    };
    let scenario = validate_scenario(&text).map_err(|e| ApiError::from(ProjectError::from(e)))?;
    let summary = h.mutate(|project| project.run_scenario(&scenario, body.seed)).await?;
    ok(summary)
}

async fn get_stream(
    State(s): State<AppState>,
    Path(p): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let h = s.handle(&p)?;
    let rx = h.stream.subscribe();
    let events = stream::unfold(Some(rx), |rx| async move {
        let mut rx = rx?;
        match rx.recv().await {
            Ok(msg) => {
                let data = serde_json::to_string(&msg).expect("stream messages are serializable");
                let event = Event::default().id(msg.sequence.to_string()).event(msg.kind).data(data);
                Some((Ok(event), Some(rx)))
            }
            Err(broadcast::error::RecvError::Lagged(missed)) => {
                let data = json!({ "reason": "client too slow", "missed": missed }).to_string();
                Some((Ok(Event::default().event("dropped").data(data)), None))
            }
            Err(broadcast::error::RecvError::Closed) => None,
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}
