use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use satbot_core::flow::{FlowError, NodeKind};
use satbot_core::model::{new_session_id, Session, Turn};
use satbot_core::teacher::TeacherError;
use satbot_core::{Deployment, Scalar};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::Mutex;

use crate::persistence::{LogDir, PersistError, SessionLog, FORMAT_TAG};

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        tracing::error!(error = %e, "request failed");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a str,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: &self.message })).into_response()
    }
}

impl From<FlowError> for ApiError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Ended => ApiError::new(StatusCode::CONFLICT, "conversation ended"),
            other => ApiError::internal(other),
        }
    }
}

impl From<PersistError> for ApiError {
    fn from(e: PersistError) -> Self {
        ApiError::internal(e)
    }
}

fn not_ready() -> ApiError {
    ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "service not ready")
}

fn parse_body<B: DeserializeOwned + Default>(body: &Bytes) -> Result<B, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(B::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid request body: {e}")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    pub seed: u64,
    pub node_id: String,
    pub greeting: Vec<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageRequest {
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseView {
    pub exercise_id: String,
    pub title: String,
    pub description: String,
    pub steps: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageResponse {
    pub bot_utterances: Vec<String>,
    pub node_id: String,
    pub recommended_exercises: Vec<ExerciseView>,
    pub detected_emotion: Option<String>,
    pub formality: Option<String>,
    pub ended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryResponse {
    pub session_id: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskRequest {
    #[serde(default)]
    pub question: String,
}

/// `answer` and `qa_id` are null when the best match falls under the confidence floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskResponse {
    pub answer: Option<String>,
    pub score: f64,
    pub qa_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub format: String,
    pub sessions: usize,
    /// sha256 over the sorted `role=hash` lines below.
    pub version: String,
    pub assets: BTreeMap<String, String>,
}

/// sha256 of every asset file the deployment was built from, keyed by role.
pub fn asset_hashes<T: Scalar>(d: &Deployment<T>) -> std::io::Result<BTreeMap<String, String>> {
    let mut files = d.config.asset_files();
    let lex_dir = d.config.resolve(&d.config.assets.lexicons);
    for entry in std::fs::read_dir(&lex_dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "toml") {
            let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            files.insert(format!("lexicon:{name}"), path);
        }
    }
    files
        .into_iter()
        .map(|(role, path)| Ok((role, hex::encode(Sha256::digest(std::fs::read(&path)?)))))
        .collect()
}

fn version_of(assets: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (role, hash) in assets {
        h.update(format!("{role}={hash}\n"));
    }
    hex::encode(h.finalize())
}

struct Slot {
    session: Session,
    log: SessionLog,
}

/// A loaded deployment and its live sessions.
pub struct Ready<T: Scalar = f64> {
    deployment: Deployment<T>,
    logs: LogDir,
    sessions: RwLock<HashMap<String, Arc<Mutex<Slot>>>>,
    assets: BTreeMap<String, String>,
    version: String,
}

impl<T: Scalar> Ready<T> {
    /// Opens the persistence directory and reloads its sessions. Sessions
    /// whose current node the graph no longer has are rejected.
    pub fn open(deployment: Deployment<T>) -> Result<Self, ServiceError> {
        let assets = asset_hashes(&deployment).map_err(|e| ServiceError::Assets(e.to_string()))?;
        let version = version_of(&assets);
        let (logs, loaded) = LogDir::open(&deployment.config.persistence_path())?;
        let graph = deployment.engine.graph();
        let mut sessions = HashMap::with_capacity(loaded.len());
        for (session, log) in loaded {
            if graph.node(&session.current_node).is_none() {
                return Err(ServiceError::Assets(format!(
                    "session {} sits at node {:?}, absent from the flow graph",
                    session.session_id, session.current_node
                )));
            }
            sessions.insert(session.session_id.clone(), Arc::new(Mutex::new(Slot { session, log })));
        }
        tracing::info!(sessions = sessions.len(), dir = %logs.dir().display(), "persistence loaded");
        Ok(Ready {
            deployment,
            logs,
            sessions: RwLock::new(sessions),
            assets,
            version,
        })
    }

    pub fn deployment(&self) -> &Deployment<T> {
        &self.deployment
    }

    fn slot(&self, id: &str) -> Result<Arc<Mutex<Slot>>, ApiError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }

    fn exercise_views(&self, ids: &[String]) -> Vec<ExerciseView> {
        let catalog = &self.deployment.engine.graph().exercise_catalog;
        ids.iter()
            .map(|id| {
                let ex = catalog.get(id);
                ExerciseView {
                    exercise_id: id.clone(),
                    title: ex.map(|e| e.title.clone()).unwrap_or_default(),
                    description: ex.map(|e| e.description.clone()).unwrap_or_default(),
                    steps: ex.map(|e| e.steps.clone()).unwrap_or_default(),
                }
            })
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("{0}")]
    Assets(String),
    #[error("server failed: {0}")]
    Server(#[from] std::io::Error),
}

/// Shared handle the router serves from. Starts out not ready until a
/// deployment is installed.
pub struct AppState<T: Scalar = f64> {
    ready: RwLock<Option<Arc<Ready<T>>>>,
}

impl<T: Scalar> AppState<T> {
    pub fn loading() -> Arc<Self> {
        Arc::new(AppState {
            ready: RwLock::new(None),
        })
    }

    pub fn with(ready: Ready<T>) -> Arc<Self> {
        let s = Self::loading();
        s.install(ready);
        s
    }

    pub fn install(&self, ready: Ready<T>) {
        *self.ready.write().expect("state lock") = Some(Arc::new(ready));
    }

    fn get(&self) -> Result<Arc<Ready<T>>, ApiError> {
        self.ready.read().expect("state lock").clone().ok_or_else(not_ready)
    }
}

pub fn router<T: Scalar>(state: Arc<AppState<T>>) -> Router {
    Router::new()
        .route("/api/session", post(create_session::<T>))
        .route("/api/session/{id}/message", post(post_message::<T>))
        .route("/api/session/{id}/history", get(history::<T>))
        .route("/api/teacher/ask", post(ask_teacher::<T>))
        .route("/api/health", get(health::<T>))
        .with_state(state)
}

async fn blocking<R: Send + 'static>(f: impl FnOnce() -> R + Send + 'static) -> Result<R, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)
}

async fn create_session<T: Scalar>(
    State(state): State<Arc<AppState<T>>>,
    body: Bytes,
) -> Result<(StatusCode, Json<CreateSessionResponse>), ApiError> {
    let ready = state.get()?;
    let req: CreateSessionRequest = parse_body(&body)?;
    let seed = req.seed.unwrap_or_else(rand_seed);
    let r = ready.clone();
    let (session, greeting, log) = blocking(move || -> Result<_, ApiError> {
        let (session, greeting) = r.deployment.engine.start_with_id(new_session_id(), seed)?;
        let log = r.logs.create(&session)?;
        Ok((session, greeting, log))
    })
    .await??;
    let resp = CreateSessionResponse {
        session_id: session.session_id.clone(),
        seed,
        node_id: session.current_node.clone(),
        greeting,
    };
    ready
        .sessions
        .write()
        .expect("sessions lock")
        .insert(session.session_id.clone(), Arc::new(Mutex::new(Slot { session, log })));
    Ok((StatusCode::CREATED, Json(resp)))
}

fn rand_seed() -> u64 {
    u64::from_str_radix(&new_session_id()[..16], 16).unwrap_or(0)
}

async fn post_message<T: Scalar>(
    State(state): State<Arc<AppState<T>>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<MessageResponse>, ApiError> {
    let ready = state.get()?;
    let req: MessageRequest = parse_body(&body)?;
    if req.text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty input"));
    }
    let slot = ready.slot(&id)?.lock_owned().await;
    let r = ready.clone();
    blocking(move || -> Result<_, ApiError> {
        let mut slot = slot;
        let mut next = slot.session.clone();
        let prior = next.history.len();
        let outcome = r.deployment.engine.step(&mut next, &req.text)?;
        slot.log.append(&next, prior, Some(&req.text), &outcome.session_delta)?;
        slot.session = next;
        let s = &slot.session;
        let ended = r
            .deployment
            .engine
            .graph()
            .node(&s.current_node)
            .is_some_and(|n| n.kind == NodeKind::Terminal);
        Ok(Json(MessageResponse {
            bot_utterances: outcome.bot_utterances,
            node_id: outcome.next_node,
            recommended_exercises: r.exercise_views(&outcome.recommended_exercises),
            detected_emotion: s.detected_emotion.map(|e| e.as_str().to_owned()),
            formality: s.formality.map(|f| f.as_str().to_owned()),
            ended,
        }))
    })
    .await?
}

async fn history<T: Scalar>(
    State(state): State<Arc<AppState<T>>>,
    Path(id): Path<String>,
) -> Result<Json<HistoryResponse>, ApiError> {
    let ready = state.get()?;
    let slot = ready.slot(&id)?;
    let slot = slot.lock().await;
    Ok(Json(HistoryResponse {
        session_id: id,
        turns: slot.session.history.clone(),
    }))
}

async fn ask_teacher<T: Scalar>(
    State(state): State<Arc<AppState<T>>>,
    body: Bytes,
) -> Result<Json<AskResponse>, ApiError> {
    let ready = state.get()?;
    let req: AskRequest = parse_body(&body)?;
    if req.question.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty question"));
    }
    let r = ready.clone();
    let result = blocking(move || r.deployment.teacher.answer(&req.question)).await?;
    match result {
        Ok(a) => Ok(Json(AskResponse {
            answer: Some(a.answer),
            score: a.score,
            qa_id: Some(a.qa_id),
        })),
        Err(TeacherError::NoConfidentAnswer { best, .. }) => Ok(Json(AskResponse {
            answer: None,
            score: best,
            qa_id: None,
        })),
        Err(TeacherError::EmptyQuestion) => Err(ApiError::new(StatusCode::BAD_REQUEST, "empty question")),
        Err(e) => Err(ApiError::internal(e)),
    }
}

async fn health<T: Scalar>(State(state): State<Arc<AppState<T>>>) -> Result<Json<HealthResponse>, ApiError> {
    let ready = state.get()?;
    let sessions = ready.sessions.read().expect("sessions lock").len();
    Ok(Json(HealthResponse {
        status: "ok".into(),
        format: FORMAT_TAG.into(),
        sessions,
        version: ready.version.clone(),
        assets: ready.assets.clone(),
    }))
}
