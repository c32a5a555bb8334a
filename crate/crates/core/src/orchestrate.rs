//! Suite execution: partitioning, in-process and bridged workers, result
//! aggregation and report rendering.
//!
//! Every episode gets its seed from `derive_seed(base, task_id)`, so a report
//! does not depend on how tasks were spread over workers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::sync::{mpsc, Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agent::{
    EpisodeConfig, EpisodeResult, EpisodeSession, Policy, PromptBundle, RandomPolicy, RemotePolicy, ScriptedPolicy,
    StepOutcome, Transcript, PROTOCOL_HEADER,
};
use crate::canonical::derive_seed;
use crate::envsim::World;
use crate::evaluate::{EvalContext, EvaluatorRegistry, GetterRegistry, RewardKind, Termination};
use crate::observe::Observation;
use crate::taskspec::{task_from_value, task_to_value, validate, Domain, StepRegistry, TaskSpec, TaskSuite,
    UNSPECIFIED_CATEGORY};

pub const BRIDGE_PROTOCOL: &str = "waa-bridge/1";

/// Rewards at or above this count as a success for continuous evaluators.
pub const CONTINUOUS_SUCCESS_THRESHOLD: f64 = 0.5;

// ---------------------------------------------------------------------------
// Partitioning

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub assignments: Vec<Vec<String>>,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }
}

/// Round-robin: task `i` goes to worker `i % workers`. Zero workers is
/// treated as one.
pub fn partition(task_ids: &[String], workers: usize) -> Partition {
    let workers = workers.max(1);
    let mut assignments = vec![Vec::new(); workers];
    for (i, id) in task_ids.iter().enumerate() {
        assignments[i % workers].push(id.clone());
    }
    Partition { assignments }
}

// ---------------------------------------------------------------------------
// Policies and backends

#[derive(Debug, Clone)]
pub enum PolicySpec {
    /// Canned responses per task id; tasks without a script fail at once.
    Scripted(BTreeMap<String, Vec<String>>),
    /// Seeded with the episode seed.
    Random,
    Remote {
        endpoint: String,
        timeout: Duration,
        retries: usize,
    },
}

impl PolicySpec {
    pub fn instantiate(&self, task_id: &str, episode_seed: u64) -> Box<dyn Policy> {
        match self {
            PolicySpec::Scripted(scripts) => Box::new(ScriptedPolicy::new(scripts.get(task_id).cloned().unwrap_or_default())),
            PolicySpec::Random => Box::new(RandomPolicy::new(episode_seed)),
            PolicySpec::Remote {
                endpoint,
                timeout,
                retries,
            } => Box::new(RemotePolicy::new(endpoint, *timeout, *retries)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Backend {
    InProcess { workers: usize },
    /// One worker per bridge endpoint (`http://host:port`).
    Bridge { endpoints: Vec<String>, timeout: Duration },
}

impl Backend {
    pub fn worker_count(&self) -> usize {
        match self {
            Backend::InProcess { workers } => (*workers).max(1),
            Backend::Bridge { endpoints, .. } => endpoints.len().max(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub backend: Backend,
    /// Template for every episode; `seed` is the base seed.
    pub episode: EpisodeConfig,
}

pub fn episode_seed(base: u64, task_id: &str) -> u64 {
    derive_seed(base, task_id)
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub reward: f64,
    pub reward_kind: RewardKind,
    pub success: bool,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_digest: Option<String>,
    #[serde(default)]
    pub errored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn is_success(value: f64, kind: RewardKind) -> bool {
    match kind {
        RewardKind::Binary => value == 1.0,
        RewardKind::Continuous => value >= CONTINUOUS_SUCCESS_THRESHOLD,
    }
}

impl TaskSummary {
    pub fn from_result(r: &EpisodeResult) -> Self {
        Self {
            task_id: r.task_id.clone(),
            reward: r.reward.value,
            reward_kind: r.reward.kind,
            success: is_success(r.reward.value, r.reward.kind),
            steps: r.steps,
            termination: Some(r.termination.termination),
            fail_reason: r.termination.fail_reason.clone(),
            final_digest: Some(r.final_digest.clone()),
            errored: false,
            error: None,
        }
    }

    /// Summary of a finished transcript, or `None` without a result line.
    pub fn from_transcript(t: &Transcript) -> Option<Self> {
        let f = t.footer.as_ref()?;
        let task_id = t.header.task.get("id")?.as_str()?.to_string();
        Some(Self {
            task_id,
            reward: f.reward.value,
            reward_kind: f.reward.kind,
            success: is_success(f.reward.value, f.reward.kind),
            steps: f.steps,
            termination: Some(f.outcome.termination),
            fail_reason: f.outcome.fail_reason.clone(),
            final_digest: Some(f.final_digest.clone()),
            errored: false,
            error: None,
        })
    }

    pub fn errored(task_id: &str, error: &str) -> Self {
        Self {
            task_id: task_id.to_string(),
            reward: 0.0,
            reward_kind: RewardKind::Binary,
            success: false,
            steps: 0,
            termination: None,
            fail_reason: None,
            final_digest: None,
            errored: true,
            error: Some(error.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub successes: usize,
    pub attempts: usize,
    /// Fraction in `[0, 1]`; zero when there were no attempts.
    pub success_rate: f64,
    /// Mean steps over successful episodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_steps: Option<f64>,
}

impl CategoryStats {
    fn from_summaries<'a>(items: impl Iterator<Item = &'a TaskSummary>) -> Self {
        let (mut successes, mut attempts, mut steps) = (0usize, 0usize, 0usize);
        for s in items {
            attempts += 1;
            if s.success {
                successes += 1;
                steps += s.steps;
            }
        }
        Self {
            successes,
            attempts,
            success_rate: if attempts == 0 { 0.0 } else { successes as f64 / attempts as f64 },
            avg_steps: (successes > 0).then(|| steps as f64 / successes as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub per_task: BTreeMap<String, TaskSummary>,
    /// Keyed by column label.
    pub per_category: BTreeMap<String, CategoryStats>,
    pub overall: CategoryStats,
    /// Wall-clock seconds per worker. Excluded from the deterministic form.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub timing: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrchestrateError {
    #[error("result for unknown task `{0}`")]
    UnknownTaskId(String),
    #[error("more than one result for task `{0}`")]
    DuplicateTaskId(String),
}

pub fn category_of(task: &TaskSpec) -> &'static str {
    task.domain.map(Domain::column).unwrap_or(UNSPECIFIED_CATEGORY)
}

pub fn aggregate(results: &[TaskSummary], suite: &TaskSuite) -> Result<RunReport, OrchestrateError> {
    let mut per_task = BTreeMap::new();
    let mut by_cat: BTreeMap<String, Vec<&TaskSummary>> = BTreeMap::new();
    for r in results {
        let task = suite
            .get(&r.task_id)
            .ok_or_else(|| OrchestrateError::UnknownTaskId(r.task_id.clone()))?;
        if per_task.insert(r.task_id.clone(), r.clone()).is_some() {
            return Err(OrchestrateError::DuplicateTaskId(r.task_id.clone()));
        }
        by_cat.entry(category_of(task).to_string()).or_default().push(r);
    }
    let per_category = by_cat
        .into_iter()
        .map(|(k, v)| (k, CategoryStats::from_summaries(v.into_iter())))
        .collect();
    Ok(RunReport {
        overall: CategoryStats::from_summaries(results.iter()),
        per_task,
        per_category,
        timing: Vec::new(),
    })
}

/// Table columns, left to right.
pub fn columns() -> Vec<&'static str> {
    Domain::ALL.iter().map(|d| d.column()).chain(["Total"]).collect()
}

fn pct(rate: f64) -> String {
    format!("{:.1}", rate * 100.0)
}

fn table(rows: &[(&str, Vec<String>)]) -> String {
    let cols = columns();
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<label_w$}", "");
    let widths: Vec<usize> = cols.iter().map(|c| c.len().max(6)).collect();
    for (c, w) in cols.iter().zip(&widths) {
        let _ = write!(out, "  {c:>w$}");
    }
    out.push('\n');
    for (label, cells) in rows {
        let _ = write!(out, "{label:<label_w$}");
        for (cell, w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {cell:>w$}");
        }
        out.push('\n');
    }
    out
}

impl RunReport {
    /// Pretty JSON without timing; byte-stable for identical runs.
    pub fn deterministic_json(&self) -> String {
        let mut r = self.clone();
        r.timing.clear();
        serde_json::to_string_pretty(&r).expect("reports serialize") + "\n"
    }

    /// Success rates (percent) in column order; `-` for absent categories.
    pub fn row(&self) -> Vec<String> {
        let mut cells: Vec<String> = Domain::ALL
            .iter()
            .map(|d| self.per_category.get(d.column()).map(|s| pct(s.success_rate)).unwrap_or_else(|| "-".into()))
            .collect();
        cells.push(pct(self.overall.success_rate));
        cells
    }

    pub fn render_table(&self) -> String {
        self.render_comparison(None)
    }

    /// Category table, with the human row underneath when given.
    pub fn render_comparison(&self, human: Option<&HumanBaseline>) -> String {
        let mut rows = vec![("Agent", self.row())];
        if let Some(h) = human {
            rows.push(("Human", h.row()));
        }
        table(&rows)
    }

    pub fn render_text(&self, human: Option<&HumanBaseline>) -> String {
        let mut out = self.render_comparison(human);
        out.push('\n');
        let id_w = self.per_task.keys().map(String::len).max().unwrap_or(4).max(4);
        let _ = writeln!(out, "{:<id_w$}  {:>6}  {:>5}  result", "task", "reward", "steps");
        for (id, s) in &self.per_task {
            let how = match (&s.termination, s.errored) {
                (_, true) => format!("errored: {}", s.error.as_deref().unwrap_or("")),
                (Some(t), _) => t.as_str().to_string(),
                (None, _) => "-".into(),
            };
            let _ = writeln!(out, "{id:<id_w$}  {:>6.3}  {:>5}  {how}", s.reward, s.steps);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Human baseline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanRow {
    pub domain: String,
    pub avg_steps: f64,
    /// Percent.
    pub success_rate: f64,
    pub avg_difficulty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanBaseline {
    #[serde(default)]
    pub source: String,
    pub domains: Vec<HumanRow>,
    pub overall: HumanRow,
    /// Percent per column label, including `Total`.
    pub categories: BTreeMap<String, f64>,
}

impl HumanBaseline {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn row(&self) -> Vec<String> {
        columns()
            .iter()
            .map(|c| self.categories.get(*c).map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into()))
            .collect()
    }

    /// Per-domain table: average steps, success rate and difficulty.
    pub fn render(&self) -> String {
        let w = self
            .domains
            .iter()
            .chain([&self.overall])
            .map(|r| r.domain.len())
            .max()
            .unwrap_or(6);
        let mut out = format!("{:<w$}  {:>9}  {:>9}  {:>10}\n", "Domain", "Avg steps", "Success %", "Difficulty");
        for r in self.domains.iter().chain([&self.overall]) {
            let _ = writeln!(
                out,
                "{:<w$}  {:>9.1}  {:>9.1}  {:>10.1}",
                r.domain, r.avg_steps, r.success_rate, r.avg_difficulty
            );
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Bridge server

struct BridgeState {
    world: World,
    ctx: EvalContext,
    session: Mutex<Option<EpisodeSession>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetupAck {
    pub status: String,
    pub task_id: String,
    pub finished: bool,
    pub initial_digest: String,
}

#[derive(Debug, Clone, Deserialize)]
struct FileQuery {
    path: Option<String>,
}

fn reply(status: StatusCode, body: Value) -> Response {
    let mut r = (status, Json(body)).into_response();
    r.headers_mut()
        .insert(PROTOCOL_HEADER, HeaderValue::from_static(BRIDGE_PROTOCOL));
    r
}

fn err(status: StatusCode, msg: impl std::fmt::Display) -> Response {
    reply(status, json!({"error": msg.to_string()}))
}

#[allow(clippy::result_large_err)]
fn check_version(headers: &HeaderMap) -> Result<(), Response> {
    match headers.get(PROTOCOL_HEADER) {
        Some(v) if v.as_bytes() != BRIDGE_PROTOCOL.as_bytes() => Err(err(
            StatusCode::BAD_REQUEST,
            format!("protocol {} is not {BRIDGE_PROTOCOL}", String::from_utf8_lossy(v.as_bytes())),
        )),
        _ => Ok(()),
    }
}

const NOT_SET_UP: &str = "no task set up";

async fn health(State(st): State<Arc<BridgeState>>) -> Response {
    let busy = st.session.lock().unwrap().as_ref().is_some_and(|s| !s.is_finished());
    reply(
        StatusCode::OK,
        json!({"status": if busy { "busy" } else { "idle" }, "protocol_version": BRIDGE_PROTOCOL}),
    )
}

/// Body is a task object, or `{"task": {...}, "config": {...}}`.
fn parse_setup(body: &str) -> Result<(TaskSpec, EpisodeConfig), String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("malformed JSON: {e}"))?;
    let (task_v, config) = match v.get("task") {
        Some(t) if t.is_object() => {
            let cfg = match v.get("config") {
                Some(c) => serde_json::from_value(c.clone()).map_err(|e| format!("config: {e}"))?,
                None => EpisodeConfig::default(),
            };
            (t.clone(), cfg)
        }
        _ => (v, EpisodeConfig::default()),
    };
    let task = task_from_value(&task_v).map_err(|e| e.to_string())?;
    let report = validate(&task, &StepRegistry::standard(), &EvaluatorRegistry, &GetterRegistry);
    if !report.is_clean() {
        let msgs: Vec<String> = report.findings.iter().map(|f| f.to_string()).collect();
        return Err(msgs.join("; "));
    }
    Ok((task, config))
}

async fn setup(State(st): State<Arc<BridgeState>>, headers: HeaderMap, body: String) -> Response {
    if let Err(r) = check_version(&headers) {
        return r;
    }
    let (task, config) = match parse_setup(&body) {
        Ok(x) => x,
        Err(e) => return err(StatusCode::BAD_REQUEST, e),
    };
    match EpisodeSession::start(&st.world, &task, config) {
        Ok(s) => {
            let ack = SetupAck {
                status: "ready".into(),
                task_id: task.id.clone(),
                finished: s.is_finished(),
                initial_digest: crate::envsim::digest(&s.state),
            };
            *st.session.lock().unwrap() = Some(s);
            reply(StatusCode::OK, serde_json::to_value(ack).expect("ack serializes"))
        }
        Err(e) => err(StatusCode::BAD_REQUEST, e),
    }
}

async fn observation(State(st): State<Arc<BridgeState>>) -> Response {
    match st.session.lock().unwrap().as_mut() {
        Some(s) => reply(StatusCode::OK, serde_json::to_value(s.observe()).expect("observations serialize")),
        None => err(StatusCode::CONFLICT, NOT_SET_UP),
    }
}

async fn prompt(State(st): State<Arc<BridgeState>>) -> Response {
    match st.session.lock().unwrap().as_mut() {
        Some(s) => reply(StatusCode::OK, serde_json::to_value(s.prompt()).expect("prompts serialize")),
        None => err(StatusCode::CONFLICT, NOT_SET_UP),
    }
}

async fn step(State(st): State<Arc<BridgeState>>, headers: HeaderMap, body: String) -> Response {
    if let Err(r) = check_version(&headers) {
        return r;
    }
    let mut guard = st.session.lock().unwrap();
    let Some(s) = guard.as_mut() else {
        return err(StatusCode::CONFLICT, NOT_SET_UP);
    };
    match s.take_step(&st.world, &body) {
        Ok(out) => reply(StatusCode::OK, serde_json::to_value(out).expect("steps serialize")),
        Err(crate::agent::EpisodeError::Finished) => err(StatusCode::CONFLICT, "episode already finished"),
        Err(e) => err(StatusCode::BAD_REQUEST, e),
    }
}

async fn evaluate(State(st): State<Arc<BridgeState>>) -> Response {
    let session = st.session.lock().unwrap().clone();
    match session {
        Some(s) => match s.finish(&st.ctx) {
            Ok(r) => reply(StatusCode::OK, serde_json::to_value(r).expect("results serialize")),
            Err(e) => err(StatusCode::BAD_REQUEST, e),
        },
        None => err(StatusCode::CONFLICT, NOT_SET_UP),
    }
}

async fn file(State(st): State<Arc<BridgeState>>, Query(q): Query<FileQuery>) -> Response {
    let Some(path) = q.path else {
        return err(StatusCode::BAD_REQUEST, "missing `path` query parameter");
    };
    let guard = st.session.lock().unwrap();
    let Some(s) = guard.as_ref() else {
        return err(StatusCode::CONFLICT, NOT_SET_UP);
    };
    match s.state.files.get(&path) {
        Some(f) => {
            let mut r = (StatusCode::OK, f.data.clone()).into_response();
            r.headers_mut()
                .insert(PROTOCOL_HEADER, HeaderValue::from_static(BRIDGE_PROTOCOL));
            r
        }
        None => err(StatusCode::NOT_FOUND, format!("no file `{path}`")),
    }
}

pub fn bridge_router(world: World, ctx: EvalContext) -> Router {
    let state = Arc::new(BridgeState {
        world,
        ctx,
        session: Mutex::new(None),
    });
    Router::new()
        .route("/health", get(health))
        .route("/setup", post(setup))
        .route("/observation", get(observation))
        .route("/prompt", get(prompt))
        .route("/step", post(step))
        .route("/evaluate", post(evaluate))
        .route("/file", get(file))
        .with_state(state)
}

/// A bridge worker running on a background thread.
pub struct BridgeHandle {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BridgeHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BridgeHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

fn runtime() -> std::io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_current_thread().enable_io().build()
}

/// Binds `bind` and serves the bridge protocol until the handle is dropped.
pub fn spawn_worker(world: World, ctx: EvalContext, bind: &str) -> std::io::Result<BridgeHandle> {
    let listener = std::net::TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let rt = runtime()?;
    let thread = std::thread::spawn(move || {
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener converts");
            let _ = axum::serve(listener, bridge_router(world, ctx))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(BridgeHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Serves on the current thread until the process exits.
pub fn serve_worker(world: World, ctx: EvalContext, bind: &str) -> std::io::Result<()> {
    let listener = std::net::TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        axum::serve(listener, bridge_router(world, ctx)).await
    })
}

// ---------------------------------------------------------------------------
// Bridge client

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BridgeError {
    /// The worker could not be reached.
    #[error("worker unreachable: {0}")]
    Transport(String),
    #[error("worker answered {status}: {message}")]
    Status { status: u16, message: String },
    #[error("worker speaks `{0}`, expected {BRIDGE_PROTOCOL}")]
    Version(String),
    #[error("bad reply: {0}")]
    Decode(String),
}

impl BridgeError {
    /// Whether the worker should be considered dead.
    pub fn is_fatal(&self) -> bool {
        matches!(self, BridgeError::Transport(_) | BridgeError::Version(_))
    }
}

pub struct BridgeClient {
    base: String,
    agent: ureq::Agent,
}

impl BridgeClient {
    pub fn new(base: &str, timeout: Duration) -> Self {
        Self {
            base: base.trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    fn finish(r: Result<ureq::Response, ureq::Error>) -> Result<ureq::Response, BridgeError> {
        match r {
            Ok(r) => Ok(r),
            Err(ureq::Error::Status(status, resp)) => {
                let message = resp
                    .into_json::<Value>()
                    .ok()
                    .and_then(|v| v.get("error").and_then(Value::as_str).map(str::to_string))
                    .unwrap_or_default();
                Err(BridgeError::Status { status, message })
            }
            Err(e) => Err(BridgeError::Transport(e.to_string())),
        }
    }

    fn json<T: serde::de::DeserializeOwned>(r: Result<ureq::Response, ureq::Error>) -> Result<T, BridgeError> {
        Self::finish(r)?
            .into_json()
            .map_err(|e| BridgeError::Decode(e.to_string()))
    }

    fn get(&self, path: &str) -> ureq::Request {
        self.agent
            .get(&format!("{}{path}", self.base))
            .set(PROTOCOL_HEADER, BRIDGE_PROTOCOL)
    }

    fn post(&self, path: &str) -> ureq::Request {
        self.agent
            .post(&format!("{}{path}", self.base))
            .set(PROTOCOL_HEADER, BRIDGE_PROTOCOL)
    }

    pub fn health(&self) -> Result<Value, BridgeError> {
        Self::json(self.get("/health").call())
    }

    /// Health check plus protocol handshake.
    pub fn admit(&self) -> Result<(), BridgeError> {
        let h = self.health()?;
        match h.get("protocol_version").and_then(Value::as_str) {
            Some(BRIDGE_PROTOCOL) => Ok(()),
            other => Err(BridgeError::Version(other.unwrap_or("").to_string())),
        }
    }

    pub fn setup(&self, task: &TaskSpec, config: &EpisodeConfig) -> Result<SetupAck, BridgeError> {
        let body = json!({"task": task_to_value(task), "config": config});
        Self::json(self.post("/setup").send_string(&body.to_string()))
    }

    pub fn observation(&self) -> Result<Observation, BridgeError> {
        Self::json(self.get("/observation").call())
    }

    pub fn prompt(&self) -> Result<PromptBundle, BridgeError> {
        Self::json(self.get("/prompt").call())
    }

    pub fn step(&self, response: &str) -> Result<StepOutcome, BridgeError> {
        Self::json(self.post("/step").send_string(response))
    }

    pub fn evaluate(&self) -> Result<EpisodeResult, BridgeError> {
        Self::json(self.post("/evaluate").call())
    }

    pub fn file(&self, path: &str) -> Result<Vec<u8>, BridgeError> {
        let resp = Self::finish(self.get("/file").query("path", path).call())?;
        let mut buf = Vec::new();
        std::io::Read::read_to_end(&mut resp.into_reader(), &mut buf).map_err(|e| BridgeError::Decode(e.to_string()))?;
        Ok(buf)
    }
}

/// Drives one episode over HTTP; same result as [`crate::agent::run_episode`].
pub fn run_episode_bridge(
    client: &BridgeClient,
    task: &TaskSpec,
    policy: &mut dyn Policy,
    config: &EpisodeConfig,
) -> Result<EpisodeResult, BridgeError> {
    let mut finished = client.setup(task, config)?.finished;
    while !finished {
        let bundle = client.prompt()?;
        let response = policy.decide(&bundle);
        finished = client.step(&response)?.finished;
    }
    client.evaluate()
}

// ---------------------------------------------------------------------------
// Suite runner

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub report: RunReport,
    /// Completed episodes in suite order.
    pub results: Vec<EpisodeResult>,
}

struct Failure {
    message: String,
    fatal: bool,
}

enum Worker<'a> {
    Local,
    Remote(&'a BridgeClient),
}

fn run_one(
    worker: &Worker<'_>,
    world: &World,
    task: &TaskSpec,
    policy: &PolicySpec,
    cfg: &SuiteConfig,
    ctx: &EvalContext,
) -> Result<EpisodeResult, Failure> {
    let seed = episode_seed(cfg.episode.seed, &task.id);
    let config = EpisodeConfig {
        seed,
        ..cfg.episode.clone()
    };
    let mut p = policy.instantiate(&task.id, seed);
    match worker {
        Worker::Local => {
            let run = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                crate::agent::run_episode(world, task, p.as_mut(), &config, ctx)
            }));
            match run {
                Ok(Ok(r)) => Ok(r),
                Ok(Err(e)) => Err(Failure {
                    message: e.to_string(),
                    fatal: false,
                }),
                Err(_) => Err(Failure {
                    message: "worker panicked".into(),
                    fatal: true,
                }),
            }
        }
        Worker::Remote(c) => run_episode_bridge(c, task, p.as_mut(), &config).map_err(|e| Failure {
            fatal: e.is_fatal(),
            message: e.to_string(),
        }),
    }
}

type BatchOutcome = (Vec<(usize, Result<EpisodeResult, Failure>)>, BTreeSet<usize>, Vec<f64>);

/// Runs `batches[w]` (suite indices) on worker `w`. A worker that dies skips
/// the rest of its batch; those tasks come back as fatal failures.
fn run_batches(
    workers: &[Worker<'_>],
    batches: &[Vec<usize>],
    world: &World,
    suite: &TaskSuite,
    policy: &PolicySpec,
    cfg: &SuiteConfig,
    ctx: &EvalContext,
) -> BatchOutcome {
    let (tx, rx) = mpsc::channel();
    let mut timing = vec![0.0; workers.len()];
    let mut dead = BTreeSet::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (w, batch) in batches.iter().enumerate() {
            let tx = tx.clone();
            let worker = &workers[w];
            handles.push(scope.spawn(move || {
                let start = Instant::now();
                let mut died = false;
                for &i in batch {
                    let out = if died {
                        Err(Failure {
                            message: "worker dead".into(),
                            fatal: true,
                        })
                    } else {
                        run_one(worker, world, &suite.tasks[i], policy, cfg, ctx)
                    };
                    if let Err(f) = &out {
                        died |= f.fatal;
                    }
                    let _ = tx.send((i, out));
                }
                (start.elapsed().as_secs_f64(), died)
            }));
        }
        drop(tx);
        for (w, h) in handles.into_iter().enumerate() {
            let (secs, died) = h.join().expect("worker threads do not panic");
            timing[w] = secs;
            if died {
                dead.insert(w);
            }
        }
    });
    (rx.into_iter().collect(), dead, timing)
}

/// Runs every suite task once, re-queuing failures once on another live
/// worker. Tasks that fail twice are reported as errored with reward 0.
pub fn run_suite(
    world: &World,
    suite: &TaskSuite,
    policy: &PolicySpec,
    cfg: &SuiteConfig,
    ctx: &EvalContext,
) -> SuiteRun {
    let clients: Vec<BridgeClient> = match &cfg.backend {
        Backend::Bridge { endpoints, timeout } => endpoints.iter().map(|e| BridgeClient::new(e, *timeout)).collect(),
        Backend::InProcess { .. } => Vec::new(),
    };
    let workers: Vec<Worker<'_>> = match &cfg.backend {
        Backend::InProcess { workers } => (0..(*workers).max(1)).map(|_| Worker::Local).collect(),
        Backend::Bridge { .. } => clients.iter().map(Worker::Remote).collect(),
    };
    let n = workers.len();
    let mut dead: BTreeSet<usize> = clients
        .iter()
        .enumerate()
        .filter(|(_, c)| c.admit().is_err())
        .map(|(i, _)| i)
        .collect();

    let ids: Vec<String> = suite.tasks.iter().map(|t| t.id.clone()).collect();
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let plan = partition(&ids, n);
    let mut batches: Vec<Vec<usize>> = plan
        .assignments
        .iter()
        .map(|a| a.iter().map(|id| index[id.as_str()]).collect())
        .collect();
    let mut owner = vec![0usize; ids.len()];
    for (w, b) in batches.iter().enumerate() {
        for &i in b {
            owner[i] = w;
        }
    }
    let mut first: Vec<(usize, Result<EpisodeResult, Failure>)> = Vec::new();
    for w in &dead {
        for i in std::mem::take(&mut batches[*w]) {
            first.push((
                i,
                Err(Failure {
                    message: "worker failed admission".into(),
                    fatal: true,
                }),
            ));
        }
    }
    let (ran, died, timing) = run_batches(&workers, &batches, world, suite, policy, cfg, ctx);
    first.extend(ran);
    dead.extend(died);

    let mut done: BTreeMap<usize, Result<EpisodeResult, String>> = BTreeMap::new();
    let mut retry = Vec::new();
    for (i, out) in first {
        match out {
            Ok(r) => {
                done.insert(i, Ok(r));
            }
            Err(_) => retry.push(i),
        }
    }
    retry.sort_unstable();

    let alive: Vec<usize> = (0..n).filter(|w| !dead.contains(w)).collect();
    if alive.is_empty() {
        for i in retry {
            done.insert(i, Err("no live worker for retry".into()));
        }
    } else {
        let mut batches = vec![Vec::new(); n];
        for (k, &i) in retry.iter().enumerate() {
            // Prefer a worker other than the one that failed.
            let mut w = alive[k % alive.len()];
            if w == owner[i] && alive.len() > 1 {
                w = alive[(k + 1) % alive.len()];
            }
            batches[w].push(i);
        }
        let (ran, _, _) = run_batches(&workers, &batches, world, suite, policy, cfg, ctx);
        for (i, out) in ran {
            done.insert(i, out.map_err(|f| f.message));
        }
    }

    let mut summaries = Vec::new();
    let mut results = Vec::new();
    for (i, out) in done {
        match out {
            Ok(r) => {
                summaries.push(TaskSummary::from_result(&r));
                results.push(r);
            }
            Err(e) => summaries.push(TaskSummary::errored(&ids[i], &e)),
        }
    }
    let mut report = aggregate(&summaries, suite).expect("results come from the suite");
    report.timing = timing;
    SuiteRun { report, results }
}
