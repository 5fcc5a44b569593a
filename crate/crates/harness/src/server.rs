//! HTTP service over the run registry, under `/api/v1`.
//!
//! Runs execute on their own threads and can be paused only between ticks;
//! every mutating route is rejected with 409 unless the run is paused.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use socpilot::agent::profile::AgentId;
use socpilot::experiment::config::ExperimentConfig;
use socpilot::experiment::intervention::Intervention;
use socpilot::experiment::interview::{interview_reply, InterviewSession, Speaker, Turn};
use socpilot::experiment::recorder::{read_csv, LogRow, BEHAVIOR_LOG};
use socpilot::experiment::report::REPORT;
use socpilot::experiment::sim::{RunProgress, CONFIG_SNAPSHOT};
use socpilot::experiment::{SimError, Simulation};

use crate::frames::frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Pending,
    Running,
    Paused,
    Finished,
    Failed,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Finished | RunState::Failed)
    }
}

/// An entry of a run's event feed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub tick: u64,
    pub kind: String,
    pub detail: Value,
}

struct Control {
    state: RunState,
    pause_requested: bool,
}

pub struct RunHandle {
    pub id: String,
    pub name: String,
    pub dir: PathBuf,
    control: Mutex<Control>,
    changed: Condvar,
    /// `None` for runs found on disk
    sim: Mutex<Option<Simulation>>,
    log: RwLock<Vec<LogRow>>,
    events: Mutex<Vec<Event>>,
    progress: RwLock<Option<RunProgress>>,
    error: RwLock<Option<String>>,
    pace: Duration,
}

impl RunHandle {
    fn new(id: String, name: String, dir: PathBuf, state: RunState, sim: Option<Simulation>, pace: Duration) -> Self {
        let progress = sim.as_ref().map(Simulation::progress);
        Self {
            id,
            name,
            dir,
            control: Mutex::new(Control { state, pause_requested: false }),
            changed: Condvar::new(),
            sim: Mutex::new(sim),
            log: RwLock::new(Vec::new()),
            events: Mutex::new(Vec::new()),
            progress: RwLock::new(progress),
            error: RwLock::new(None),
            pace,
        }
    }

    pub fn state(&self) -> RunState {
        self.control.lock().unwrap().state
    }

    fn tick(&self) -> u64 {
        self.progress.read().unwrap().as_ref().map(|p| p.tick).unwrap_or(0)
    }

    fn push_event(&self, kind: &str, detail: Value) -> Event {
        let mut ev = self.events.lock().unwrap();
        let e = Event { seq: ev.len() as u64 + 1, tick: self.tick(), kind: kind.into(), detail };
        ev.push(e.clone());
        tracing::info!(run = %self.id, kind, "event");
        e
    }

    fn set_state(&self, c: &mut Control, s: RunState) {
        if c.state != s {
            tracing::info!(run = %self.id, from = ?c.state, to = ?s, "state");
            c.state = s;
            self.push_event("state", json!({ "state": s }));
            self.changed.notify_all();
        }
    }

    /// Copies log rows the simulation produced since the last call.
    fn sync(&self, sim: &Simulation) {
        let rows = &sim.recorder().log;
        let mut log = self.log.write().unwrap();
        if rows.len() > log.len() {
            let start = log.len();
            log.extend_from_slice(&rows[start..]);
        }
        *self.progress.write().unwrap() = Some(sim.progress());
    }

    /// The run loop: waits at a barrier while paused, then steps.
    fn drive(self: Arc<Self>) {
        {
            let mut c = self.control.lock().unwrap();
            self.set_state(&mut c, RunState::Running);
        }
        loop {
            {
                let mut c = self.control.lock().unwrap();
                while c.pause_requested {
                    self.set_state(&mut c, RunState::Paused);
                    c = self.changed.wait(c).unwrap();
                }
                self.set_state(&mut c, RunState::Running);
            }
            let mut guard = self.sim.lock().unwrap();
            let sim = guard.as_mut().expect("driven runs hold a simulation");
            match sim.step() {
                Ok(true) => {
                    self.sync(sim);
                    drop(guard);
                    if !self.pace.is_zero() {
                        std::thread::sleep(self.pace);
                    }
                }
                Ok(false) => {
                    sim.finish();
                    self.sync(sim);
                    let outcome = sim.write_artifacts(&self.dir);
                    self.sync(sim);
                    drop(guard);
                    let mut c = self.control.lock().unwrap();
                    match outcome {
                        Ok(_) => self.set_state(&mut c, RunState::Finished),
                        Err(e) => {
                            *self.error.write().unwrap() = Some(e.to_string());
                            self.set_state(&mut c, RunState::Failed);
                        }
                    }
                    return;
                }
                Err(e) => {
                    let _ = sim.write_checkpoint(&self.dir);
                    let _ = sim.write_artifacts(&self.dir);
                    self.sync(sim);
                    drop(guard);
                    *self.error.write().unwrap() = Some(e.to_string());
                    let mut c = self.control.lock().unwrap();
                    self.set_state(&mut c, RunState::Failed);
                    return;
                }
            }
        }
    }

    /// Asks the run to stop at the next barrier and waits until it has.
    fn pause(&self) -> Result<RunState, RunState> {
        let mut c = self.control.lock().unwrap();
        match c.state {
            RunState::Running | RunState::Pending => {
                c.pause_requested = true;
                while !(c.state == RunState::Paused || c.state.is_terminal()) {
                    c = self.changed.wait(c).unwrap();
                }
                Ok(c.state)
            }
            s => Err(s),
        }
    }

    fn resume(&self) -> Result<RunState, RunState> {
        let mut c = self.control.lock().unwrap();
        match c.state {
            RunState::Paused => {
                c.pause_requested = false;
                self.set_state(&mut c, RunState::Running);
                Ok(RunState::Running)
            }
            s => Err(s),
        }
    }
}

/// All runs known to this process.
pub struct Registry {
    runs_dir: PathBuf,
    runs: RwLock<BTreeMap<String, Arc<RunHandle>>>,
    next: AtomicU64,
}

impl Registry {
    /// Registers every finished run found under `runs_dir`.
    pub fn open(runs_dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(runs_dir)?;
        let mut runs = BTreeMap::new();
        for e in std::fs::read_dir(runs_dir)?.flatten() {
            let dir = e.path();
            if !dir.join(REPORT).exists() {
                continue;
            }
            let id = e.file_name().to_string_lossy().into_owned();
            let name = std::fs::read_to_string(dir.join(CONFIG_SNAPSHOT))
                .ok()
                .and_then(|t| toml::from_str::<ExperimentConfig>(&t).ok())
                .map(|c| c.name)
                .unwrap_or_else(|| id.clone());
            let h = RunHandle::new(id.clone(), name, dir.clone(), RunState::Finished, None, Duration::ZERO);
            if let Ok(rows) = read_csv::<LogRow>(&dir.join(BEHAVIOR_LOG)) {
                *h.log.write().unwrap() = rows;
            }
            runs.insert(id, Arc::new(h));
        }
        Ok(Self { runs_dir: runs_dir.to_path_buf(), runs: RwLock::new(runs), next: AtomicU64::new(1) })
    }

    pub fn get(&self, id: &str) -> Option<Arc<RunHandle>> {
        self.runs.read().unwrap().get(id).cloned()
    }

    /// Builds a run and starts its thread.
    pub fn start(&self, cfg: ExperimentConfig, start_paused: bool, pace: Duration) -> Result<Arc<RunHandle>, SimError> {
        let name = cfg.name.clone();
        let sim = Simulation::build(cfg)?;
        let id = loop {
            let n = self.next.fetch_add(1, Ordering::SeqCst);
            let id = format!("{name}-{n}");
            if !self.runs.read().unwrap().contains_key(&id) && !self.runs_dir.join(&id).exists() {
                break id;
            }
        };
        let h = Arc::new(RunHandle::new(id.clone(), name, self.runs_dir.join(&id), RunState::Pending, Some(sim), pace));
        h.control.lock().unwrap().pause_requested = start_paused;
        self.runs.write().unwrap().insert(id, h.clone());
        let driver = h.clone();
        std::thread::spawn(move || driver.drive());
        Ok(h)
    }
}

type Shared = Arc<Registry>;

/// A structured error body.
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    fn not_paused(state: RunState) -> Self {
        Self::new(StatusCode::CONFLICT, "run_not_paused", format!("the run is {}; pause it first", json!(state).as_str().unwrap_or("")))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        tracing::info!(status = %self.status, code = self.code, message = %self.message, "rejected");
        (self.status, Json(json!({ "error": { "code": self.code, "message": self.message } }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn run(reg: &Registry, id: &str) -> ApiResult<Arc<RunHandle>> {
    reg.get(id).ok_or_else(|| ApiError::not_found(format!("no run `{id}`")))
}

fn status_body(h: &RunHandle) -> Value {
    let base = format!("/api/v1/runs/{}", h.id);
    let state = h.state();
    let mut links = json!({ "log": format!("{base}/log"), "events": format!("{base}/events") });
    if state == RunState::Finished {
        links["report"] = json!(format!("{base}/report"));
        links["files"] = json!(format!("{base}/files"));
    }
    json!({
        "run_id": h.id,
        "name": h.name,
        "state": state,
        "progress": *h.progress.read().unwrap(),
        "error": *h.error.read().unwrap(),
        "dir": h.dir,
        "artifacts": links,
    })
}

async fn list_runs(State(reg): State<Shared>) -> Json<Value> {
    let runs: Vec<Value> = reg.runs.read().unwrap().values().map(|h| status_body(h)).collect();
    Json(json!({ "runs": runs }))
}

#[derive(Debug, Deserialize)]
pub struct CreateRun {
    pub config_path: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub start_paused: bool,
    /// milliseconds to wait between ticks, for watching a run live
    #[serde(default)]
    pub pace_ms: u64,
}

async fn create_run(State(reg): State<Shared>, Json(req): Json<CreateRun>) -> ApiResult<(StatusCode, Json<Value>)> {
    let mut cfg = ExperimentConfig::load(&req.config_path).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e.to_string()))?;
    if let Some(s) = req.seed {
        cfg.seed = s;
    }
    let reg2 = reg.clone();
    let h = tokio::task::spawn_blocking(move || reg2.start(cfg, req.start_paused, Duration::from_millis(req.pace_ms)))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_config", e.to_string()))?;
    Ok((StatusCode::CREATED, Json(status_body(&h))))
}

async fn run_status(State(reg): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let h = run(&reg, &id)?;
    Ok(Json(status_body(&h)))
}

async fn pause_run(State(reg): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let h = run(&reg, &id)?;
    let h2 = h.clone();
    let r = tokio::task::spawn_blocking(move || h2.pause()).await.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    match r {
        Ok(_) => Ok(Json(status_body(&h))),
        Err(s) => Err(ApiError::new(StatusCode::CONFLICT, "invalid_transition", format!("cannot pause a run that is {}", json!(s).as_str().unwrap_or("")))),
    }
}

async fn resume_run(State(reg): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let h = run(&reg, &id)?;
    match h.resume() {
        Ok(_) => Ok(Json(status_body(&h))),
        Err(s) => Err(ApiError::new(StatusCode::CONFLICT, "invalid_transition", format!("cannot resume a run that is {}", json!(s).as_str().unwrap_or("")))),
    }
}

async fn list_events(State(reg): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let h = run(&reg, &id)?;
    let events = h.events.lock().unwrap().clone();
    Ok(Json(json!({ "events": events })))
}

#[derive(Debug, Deserialize)]
pub struct InterventionRequest {
    pub group: String,
    pub intervention: Intervention,
}

async fn list_interventions(State(reg): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let h = run(&reg, &id)?;
    let guard = h.sim.lock().unwrap();
    let Some(sim) = guard.as_ref() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "not_live", "the run is not held by this server"));
    };
    let configured: Vec<Value> = sim.config().groups.iter().map(|g| json!({ "group": g.id, "interventions": g.interventions })).collect();
    Ok(Json(json!({ "groups": configured, "applied": sim.recorder().interventions })))
}

async fn intervene(State(reg): State<Shared>, UrlPath(id): UrlPath<String>, Json(req): Json<InterventionRequest>) -> ApiResult<Json<Value>> {
    let h = run(&reg, &id)?;
    let state = h.state();
    if state != RunState::Paused {
        return Err(ApiError::not_paused(state));
    }
    let mut guard = h.sim.lock().unwrap();
    let sim = guard.as_mut().ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "not_live", "the run is not held by this server"))?;
    sim.apply_intervention(&req.group, req.intervention.clone()).map_err(|e| match e {
        SimError::UnknownGroup(g) => ApiError::not_found(format!("unknown group `{g}`")),
        other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_intervention", other.to_string()),
    })?;
    drop(guard);
    let ev = h.push_event("intervention", json!({ "group": req.group, "intervention": req.intervention }));
    Ok(Json(json!({ "acknowledged": true, "event": ev })))
}

async fn agent_card(State(reg): State<Shared>, UrlPath((id, agent)): UrlPath<(String, AgentId)>) -> ApiResult<Json<Value>> {
    let h = run(&reg, &id)?;
    let card = tokio::task::spawn_blocking(move || {
        let guard = h.sim.lock().unwrap();
        let sim = guard.as_ref().ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "not_live", "the run is not held by this server"))?;
        let a = sim.agent(agent).map_err(|e| ApiError::not_found(e.to_string()))?;
        Ok::<_, ApiError>(json!({
            "agent_id": a.id(),
            "group": a.group,
            "profile": a.profile,
            "need": a.needs.current.as_str(),
            "emotion": a.emotion.word.to_string(),
            "thought": a.thought.or_placeholder(),
            "attitudes": a.attitudes,
            "location": a.status.location.describe(),
        }))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(card))
}

async fn get_report(State(reg): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let h = run(&reg, &id)?;
    if h.state() != RunState::Finished {
        return Err(ApiError::new(StatusCode::CONFLICT, "not_finished", "the report exists once the run has finished"));
    }
    let text = std::fs::read_to_string(h.dir.join(REPORT)).map_err(|e| ApiError::not_found(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn list_files(State(reg): State<Shared>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let h = run(&reg, &id)?;
    let files: Vec<String> = crate::cli::artifact_paths(&h.dir)
        .iter()
        .filter_map(|p| p.strip_prefix(&h.dir).ok())
        .map(|p| p.to_string_lossy().into_owned())
        .collect();
    Ok(Json(json!({ "files": files })))
}

async fn get_file(State(reg): State<Shared>, UrlPath((id, name)): UrlPath<(String, String)>) -> ApiResult<Response> {
    let h = run(&reg, &id)?;
    if name.contains("..") {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_path", "path escapes the run directory"));
    }
    let p = h.dir.join(&name);
    let bytes = std::fs::read(&p).map_err(|_| ApiError::not_found(format!("no file `{name}`")))?;
    Ok(bytes.into_response())
}

#[derive(Debug, Deserialize)]
pub struct LogQuery {
    #[serde(default)]
    pub from: usize,
}

/// Streams behavioral-log rows as frames, following a live run until it
/// ends; the last frame is an `end` record.
async fn stream_log(State(reg): State<Shared>, UrlPath(id): UrlPath<String>, Query(q): Query<LogQuery>) -> ApiResult<Response> {
    let h = run(&reg, &id)?;
    let stream = futures::stream::unfold((h, q.from, false), |(h, cursor, done)| async move {
        if done {
            return None;
        }
        loop {
            let terminal = h.state().is_terminal();
            let batch: Vec<LogRow> = {
                let log = h.log.read().unwrap();
                log.get(cursor..).map(|s| s.iter().take(500).cloned().collect()).unwrap_or_default()
            };
            if !batch.is_empty() {
                let mut out = Vec::new();
                for row in &batch {
                    out.extend_from_slice(&frame(&json!({ "kind": "log", "row": row })));
                }
                let next = cursor + batch.len();
                return Some((Ok::<Bytes, std::io::Error>(Bytes::from(out)), (h, next, false)));
            }
            if terminal {
                let end = frame(&json!({ "kind": "end", "state": h.state(), "rows": cursor }));
                return Some((Ok(Bytes::from(end)), (h, cursor, true)));
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    });
    Ok(([(header::CONTENT_TYPE, crate::frames::CONTENT_TYPE)], Body::from_stream(stream)).into_response())
}

async fn interview_ws(State(reg): State<Shared>, UrlPath((id, agent)): UrlPath<(String, AgentId)>, ws: WebSocketUpgrade) -> ApiResult<Response> {
    let h = run(&reg, &id)?;
    let state = h.state();
    if !matches!(state, RunState::Paused | RunState::Finished) {
        return Err(ApiError::not_paused(state));
    }
    {
        let guard = h.sim.lock().unwrap();
        let sim = guard.as_ref().ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "not_live", "the run is not held by this server"))?;
        sim.agent(agent).map_err(|e| ApiError::not_found(e.to_string()))?;
    }
    Ok(ws.on_upgrade(move |socket| interview_session(h, agent, socket)))
}

/// One question per text message; each answer comes back as a JSON turn.
/// The transcript is written to the run's interview directory on close.
async fn interview_session(h: Arc<RunHandle>, agent: AgentId, mut socket: WebSocket) {
    let (before, now) = {
        let guard = h.sim.lock().unwrap();
        let sim = guard.as_ref().expect("checked before upgrade");
        (sim.agent(agent).expect("checked before upgrade").state_hash(), sim.progress().sim_time)
    };
    let session = Arc::new(Mutex::new(InterviewSession::new(agent, now)));
    while let Some(Ok(msg)) = socket.recv().await {
        let question = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        let state = h.state();
        if !matches!(state, RunState::Paused | RunState::Finished) {
            let _ = socket.send(Message::Text(json!({ "error": { "code": "run_not_paused" } }).to_string().into())).await;
            continue;
        }
        let (h2, s2, q2) = (h.clone(), session.clone(), question.clone());
        let answer = tokio::task::spawn_blocking(move || {
            let guard = h2.sim.lock().unwrap();
            let sim = guard.as_ref().expect("live run");
            let a = sim.agent(agent).expect("checked before upgrade");
            let s = s2.lock().unwrap();
            interview_reply(a, sim.gateway(), &s, &q2, now)
        })
        .await;
        let reply = {
            let mut s = session.lock().unwrap();
            s.turns.push(Turn { speaker: Speaker::Interviewer, text: question });
            match answer {
                Ok(Ok(text)) => {
                    s.turns.push(Turn { speaker: Speaker::Agent, text: text.clone() });
                    json!({ "speaker": "agent", "text": text })
                }
                Ok(Err(e)) => {
                    s.ended_by = Some(format!("no answer: {e}"));
                    json!({ "error": { "code": "no_answer", "message": e.to_string() } })
                }
                Err(e) => json!({ "error": { "code": "internal", "message": e.to_string() } }),
            }
        };
        if socket.send(Message::Text(reply.to_string().into())).await.is_err() {
            break;
        }
    }
    let session = session.lock().unwrap().clone();
    let after = {
        let guard = h.sim.lock().unwrap();
        guard.as_ref().and_then(|sim| sim.agent(agent).ok().map(|a| a.state_hash()))
    };
    let path = crate::cli::persist_interview(&h.dir, "live", &session).ok();
    h.push_event(
        "interview",
        json!({ "agent_id": agent, "turns": session.turns.len(), "transcript": path, "isolated": after.as_deref() == Some(before.as_str()) }),
    );
}

pub fn router(reg: Shared) -> Router {
    let api = Router::new()
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{id}", get(run_status))
        .route("/runs/{id}/pause", post(pause_run))
        .route("/runs/{id}/resume", post(resume_run))
        .route("/runs/{id}/events", get(list_events))
        .route("/runs/{id}/log", get(stream_log))
        .route("/runs/{id}/interventions", get(list_interventions).post(intervene))
        .route("/runs/{id}/agents/{agent}", get(agent_card))
        .route("/runs/{id}/agents/{agent}/interview", get(interview_ws))
        .route("/runs/{id}/report", get(get_report))
        .route("/runs/{id}/files", get(list_files))
        .route("/runs/{id}/files/{*name}", get(get_file));
    Router::new().nest("/api/v1", api).with_state(reg)
}

pub async fn serve(listener: tokio::net::TcpListener, reg: Shared) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "serving");
    axum::serve(listener, router(reg)).await
}

pub fn serve_blocking(addr: &str, runs: &Path) -> std::io::Result<()> {
    let reg = Arc::new(Registry::open(runs)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on http://{}/api/v1", listener.local_addr()?);
        serve(listener, reg).await
    })
}
