use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use selffeed::agent::Agent;
use selffeed::data::{
    load_dataset, CandidatePool, Counters, ExampleKind, ExperienceStore, Record, Task,
};
use selffeed::selffeed::{
    retrain_due, step, ControllerConfig, ConversationState, DeployedModel, Mode,
};
use selffeed::text::Utterance;
use selffeed::train::{train, TaskSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::ServiceError;

/// Produces the next model from the current one and the harvested data.
pub type Retrainer = Arc<dyn Fn(&Agent, &ExperienceStore) -> Result<Agent, String> + Send + Sync>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", e.body_text())
    }
}

struct Session {
    created_at: u64,
    model: Arc<DeployedModel>,
    state: tokio::sync::Mutex<ConversationState>,
    last_active: Mutex<Instant>,
}

pub struct AppState {
    cfg: ServiceConfig,
    controller: ControllerConfig,
    model: RwLock<Arc<DeployedModel>>,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    store: Arc<ExperienceStore>,
    retrainer: Retrainer,
    retraining: AtomicBool,
    next_id: AtomicU64,
    nonce: u64,
}

impl AppState {
    pub fn new(
        cfg: ServiceConfig,
        model: DeployedModel,
        store: ExperienceStore,
        retrainer: Retrainer,
    ) -> Result<Arc<Self>, ServiceError> {
        cfg.validate()?;
        let controller = ControllerConfig {
            t_dialogue: cfg.threshold,
            t_feedback: cfg.threshold,
            retrain_every: cfg.retrain_every,
            history_limit: cfg.history_limit,
            ..ControllerConfig::default()
        };
        let nonce = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64);
        Ok(Arc::new(Self {
            cfg,
            controller,
            model: RwLock::new(Arc::new(model)),
            sessions: Mutex::new(HashMap::new()),
            store: Arc::new(store),
            retrainer,
            retraining: AtomicBool::new(false),
            next_id: AtomicU64::new(0),
            nonce,
        }))
    }

    /// Loads checkpoint, pool, store and base data as configured.
    pub fn from_config(cfg: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        cfg.validate()?;
        let agent = Agent::load(&cfg.checkpoint, cfg.history_limit)?;
        let hh: Vec<Record> = match &cfg.hh_data {
            Some(path) => load_dataset(path, Task::Dialogue)?.data.records,
            None => Vec::new(),
        };
        let pool = match &cfg.pool {
            Some(path) => CandidatePool::load(path)?,
            None if !hh.is_empty() => {
                CandidatePool::from_targets(hh.iter().map(|r| r.target.clone()))
            }
            None => {
                return Err(ServiceError::Config(
                    "need a pool or hh-data to build one".into(),
                ))
            }
        };
        let store = match &cfg.store {
            Some(dir) => ExperienceStore::open(dir)?,
            None => ExperienceStore::in_memory(),
        };
        let model = DeployedModel::new(agent, pool)?;
        let retrainer = default_retrainer(hh, cfg.retrain_epochs, cfg.seed);
        Self::new(cfg, model, store, retrainer)
    }

    pub fn model(&self) -> Arc<DeployedModel> {
        self.model.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn store(&self) -> &ExperienceStore {
        &self.store
    }

    pub fn is_retraining(&self) -> bool {
        self.retraining.load(Ordering::SeqCst)
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let sessions = self.sessions.lock().unwrap_or_else(|e| e.into_inner());
        sessions.get(id).cloned().ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "not_found",
                format!("no session {id}"),
            )
        })
    }

    /// Starts a background retrain unless one is running. Returns whether
    /// a job was started.
    pub fn start_retrain(self: &Arc<Self>) -> bool {
        if self.retraining.swap(true, Ordering::SeqCst) {
            return false;
        }
        let app = self.clone();
        tokio::task::spawn_blocking(move || {
            if let Err(e) = app.retrain_now() {
                log::error!("retrain failed: {e}");
            }
            app.retraining.store(false, Ordering::SeqCst);
        });
        true
    }

    fn retrain_now(&self) -> Result<(), String> {
        let current = self.model();
        self.store.mark_retrained().map_err(|e| e.to_string())?;
        let mut agent = (self.retrainer)(&current.agent, &self.store)?;
        agent.params.version = agent.params.version.max(current.agent.version() + 1);
        let next = DeployedModel::new(agent, current.pool.clone()).map_err(|e| e.to_string())?;
        log::info!("publishing model version {}", next.agent.version());
        *self.model.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(())
    }
}

/// Fine-tunes on the base HH data plus everything the store holds.
pub fn default_retrainer(hh: Vec<Record>, epochs: usize, seed: u64) -> Retrainer {
    Arc::new(move |agent: &Agent, store: &ExperienceStore| {
        let mut dialogue = hh.clone();
        dialogue.extend(store.to_dataset(ExampleKind::HbDialogue).records);
        let tasks = [
            TaskSpec::new(Task::Dialogue, dialogue, 1.0),
            TaskSpec::new(
                Task::Feedback,
                store.to_dataset(ExampleKind::Feedback).records,
                1.0,
            ),
            TaskSpec::new(
                Task::Satisfaction,
                store.to_dataset(ExampleKind::SatisfactionBootstrap).records,
                1.0,
            ),
        ];
        let tasks: Vec<TaskSpec> = tasks
            .into_iter()
            .filter(|t| !t.task.is_ranking() || t.data.len() >= 2)
            .collect();
        let cfg = TrainConfig {
            max_epochs: epochs,
            seed,
            ..TrainConfig::default()
        };
        train(agent, &tasks, None, &cfg)
            .map(|(a, _)| a)
            .map_err(|e| e.to_string())
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub greeting: String,
    pub model_version: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageIn {
    pub text: String,
    /// Optional 1-5 rating of the bot's previous turn; logged only.
    #[serde(default)]
    pub rating: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedSummary {
    pub hb_dialogue: usize,
    pub feedback: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageOut {
    pub reply: String,
    pub mode: Mode,
    pub satisfaction: Option<f64>,
    pub extracted: ExtractedSummary,
    pub model_version: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Transcript {
    pub session_id: String,
    pub created_at: u64,
    pub model_version: u64,
    pub mode: Mode,
    pub transcript: Vec<Utterance>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Stats {
    pub model_version: u64,
    pub counts: Counters,
    pub since_retrain: Counters,
    pub sessions: usize,
    pub retraining: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RetrainStarted {
    pub started: bool,
    pub model_version: u64,
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/stats", get(stats))
        .route("/admin/retrain", post(admin_retrain))
        .with_state(app)
}

async fn create_session(
    State(app): State<Arc<AppState>>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let model = app.model();
    let mut sessions = app.sessions.lock().unwrap_or_else(|e| e.into_inner());
    let timeout = Duration::from_secs(app.cfg.session_idle_timeout_secs);
    sessions.retain(|_, s| {
        s.last_active
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .elapsed()
            < timeout
    });
    if sessions.len() >= app.cfg.max_sessions {
        return Err(ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            "capacity_exceeded",
            format!("{} sessions already open", sessions.len()),
        ));
    }
    let n = app.next_id.fetch_add(1, Ordering::SeqCst);
    let id = format!("{:x}-{n}", app.nonce);
    let created_at = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    sessions.insert(
        id.clone(),
        Arc::new(Session {
            created_at,
            model: model.clone(),
            state: tokio::sync::Mutex::new(ConversationState::new(id.clone())),
            last_active: Mutex::new(Instant::now()),
        }),
    );
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: id,
            greeting: app.cfg.greeting.clone(),
            model_version: model.agent.version(),
        }),
    ))
}

async fn post_message(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<MessageIn>, JsonRejection>,
) -> Result<Json<MessageOut>, ApiError> {
    let session = app.session(&id)?;
    let Json(msg) = body?;
    if msg.text.trim().is_empty() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "empty_text",
            "message text is empty",
        ));
    }
    if let Some(rating) = msg.rating {
        log::info!("session {id} rated previous turn {rating}");
    }
    let mut guard = session.state.lock().await;
    *session
        .last_active
        .lock()
        .unwrap_or_else(|e| e.into_inner()) = Instant::now();
    let mut next = guard.clone();
    let model = session.model.clone();
    let worker = app.clone();
    let (outcome, next) = tokio::task::spawn_blocking(move || {
        let outcome =
            step(&mut next, &msg.text, &*model, &worker.controller).map_err(ApiError::internal)?;
        for ex in &outcome.extracted {
            worker
                .store
                .append(ex.clone())
                .map_err(ApiError::internal)?;
        }
        Ok::<_, ApiError>((outcome, next))
    })
    .await
    .map_err(ApiError::internal)??;
    *guard = next;
    drop(guard);

    if retrain_due(&app.store.since_retrain(), &app.controller) {
        app.start_retrain();
    }
    let count = |k| outcome.extracted.iter().filter(|e| e.kind == k).count();
    Ok(Json(MessageOut {
        extracted: ExtractedSummary {
            hb_dialogue: count(ExampleKind::HbDialogue),
            feedback: count(ExampleKind::Feedback),
        },
        reply: outcome.reply,
        mode: outcome.mode,
        satisfaction: outcome.satisfaction,
        model_version: session.model.agent.version(),
    }))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Transcript>, ApiError> {
    let session = app.session(&id)?;
    let state = session.state.lock().await;
    Ok(Json(Transcript {
        session_id: id,
        created_at: session.created_at,
        model_version: session.model.agent.version(),
        mode: state.mode,
        transcript: state.transcript.clone(),
    }))
}

async fn stats(State(app): State<Arc<AppState>>) -> Json<Stats> {
    let sessions = app.sessions.lock().unwrap_or_else(|e| e.into_inner()).len();
    Json(Stats {
        model_version: app.model().agent.version(),
        counts: app.store.totals(),
        since_retrain: app.store.since_retrain(),
        sessions,
        retraining: app.is_retraining(),
    })
}

async fn admin_retrain(
    State(app): State<Arc<AppState>>,
) -> Result<(StatusCode, Json<RetrainStarted>), ApiError> {
    let version = app.model().agent.version();
    if !app.start_retrain() {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "retrain_in_progress",
            "a retrain is already running",
        ));
    }
    Ok((
        StatusCode::ACCEPTED,
        Json(RetrainStarted {
            started: true,
            model_version: version,
        }),
    ))
}
