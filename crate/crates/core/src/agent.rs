//! Episode runner: prompt assembly, response parsing, policies and the
//! observe/decide/execute loop.
//!
//! A policy answers each prompt with free text. Only three fenced blocks are
//! read from it:
//!
//! ````text
//! ```decision
//! COMMAND
//! ```
//! ```python
//! computer.os.open_program("notepad")
//! ```
//! ```memory
//! notes carried to later steps
//! ```
//! ````
//!
//! Everything else in the response is ignored.

use std::fmt::Write as _;
use std::time::Duration;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::actions::{
    execute_program, parse_program, ActionError, ActionProgram, CursorState, EffectLog, LogEntry, PROMPT_EXAMPLES,
    SIGNATURES,
};
use crate::canonical::{derive_seed, sha256_hex, to_canonical_string};
use crate::envsim::{apply_config, digest, reset, tick_wait, DeviceState, EnvError, World};
use crate::evaluate::{evaluate_task, EpisodeOutcome, EvalContext, EvalError, Reward, Termination};
use crate::observe::{build_observation, AnnotatedScreen, DetectorConfig, Observation};
use crate::taskspec::{task_from_value, task_to_value, TaskError, TaskSpec};

pub const N_HISTORY: usize = 5;
pub const DEFAULT_T_MAX: usize = 20;
pub const POLICY_PROTOCOL: &str = "waa-policy/1";
pub const PROTOCOL_HEADER: &str = "X-Arena-Protocol";

/// Section headings of the user prompt, in order.
pub const USER_SECTIONS: [&str; 9] = [
    "## 1. Goal",
    "## 2. Active window",
    "## 3. Open windows",
    "## 4. Clipboard",
    "## 5. Screen text",
    "## 6. Screen elements",
    "## 7. Screens",
    "## 8. Recent actions",
    "## 9. Memory",
];

const SYSTEM_INTRO: &str = "\
You operate a Windows desktop on behalf of a user. Each turn you receive a \
description of the screen and must choose one next move.

## What you get
A goal, the active window title, every open window, the clipboard, a coarse \
text layout of the screen, a numbered table of screen elements, notes about \
the screen captures, your latest actions and a memory block you control.

Element boxes are normalized to the 0-1 range as (x1, y1, x2, y2). Refer to \
elements by the number in the ID column only.

## What you answer
Write any reasoning you like, then end with fenced blocks:

* a `decision` block holding exactly one of DONE, FAIL, WAIT or COMMAND
* for COMMAND, a `python` block with calls from the API below, one per line
* optionally a `memory` block; its text replaces your memory for later turns

Say DONE once the goal is met and FAIL when it cannot be met. Put the reason \
for a FAIL on a comment line inside the decision block. WAIT lets time pass \
without acting.

## API";

/// The fixed instruction block sent with every prompt.
pub fn system_text() -> String {
    let mut out = String::from(SYSTEM_INTRO);
    out.push('\n');
    for sig in SIGNATURES {
        let params: Vec<String> = sig
            .params
            .iter()
            .map(|p| {
                let opt = if p.required { "" } else { "=None" };
                format!("{}{opt}", p.name)
            })
            .collect();
        let _ = writeln!(out, "computer.{}.{}({})", sig.group.as_str(), sig.name, params.join(", "));
    }
    out.push_str("\n## Examples\n");
    for ex in PROMPT_EXAMPLES {
        let _ = write!(out, "```python\n{ex}\n```\n");
    }
    out
}

// ---------------------------------------------------------------------------
// Prompt

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryItem {
    pub step: usize,
    pub decision: DecisionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub screen_table: String,
    pub memory: String,
    pub step: usize,
    pub screen_ref: AnnotatedScreen,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_screen_ref: Option<AnnotatedScreen>,
}

impl PromptBundle {
    pub fn digest(&self) -> String {
        let v = serde_json::to_value(self).expect("bundles serialize");
        sha256_hex(to_canonical_string(&v).as_bytes())
    }

    /// Wire body for remote policies.
    pub fn request_body(&self) -> Value {
        json!({
            "system": self.system_text,
            "user": self.user_text,
            "screen_table": self.screen_table,
            "memory": self.memory,
            "step": self.step,
        })
    }
}

fn fenced(lang: &str, body: &str) -> String {
    format!("```{lang}\n{body}\n```\n")
}

pub fn build_prompt(obs: &Observation, history: &[HistoryItem], memory: &str, n_history: usize, step: usize) -> PromptBundle {
    let mut u = String::new();
    let mut section = |i: usize, body: &str| {
        let _ = write!(u, "{}\n{}\n\n", USER_SECTIONS[i], body);
    };
    section(0, &obs.instruction);
    section(1, &obs.foreground_title);
    section(2, &obs.all_window_titles.join("\n"));
    section(3, &obs.clipboard_text);
    section(4, &fenced("text", obs.text_rendering.trim_end_matches('\n')));
    section(5, &fenced("table", obs.element_table.trim_end_matches('\n')));
    let screens = format!(
        "current: {} marked elements\nprevious: {}",
        obs.screen.len(),
        match &obs.previous_screen {
            Some(p) => format!("{} marked elements", p.len()),
            None => "none".into(),
        }
    );
    section(6, &screens);
    let start = history.len().saturating_sub(n_history);
    let mut past = String::new();
    for h in &history[start..] {
        let _ = writeln!(past, "Step {}: {}", h.step, h.decision);
        if let Some(code) = &h.code {
            past.push_str(&fenced("python", code.trim_end_matches('\n')));
        }
    }
    section(7, past.trim_end());
    section(8, memory);
    PromptBundle {
        system_text: system_text(),
        user_text: u,
        screen_table: obs.element_table.clone(),
        memory: memory.to_string(),
        step,
        screen_ref: obs.screen.clone(),
        previous_screen_ref: obs.previous_screen.clone(),
    }
}

// ---------------------------------------------------------------------------
// Responses

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DecisionKind {
    Done,
    Fail,
    Wait,
    Command,
}

impl DecisionKind {
    pub const ALL: [DecisionKind; 4] = [DecisionKind::Done, DecisionKind::Fail, DecisionKind::Wait, DecisionKind::Command];

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionKind::Done => "DONE",
            DecisionKind::Fail => "FAIL",
            DecisionKind::Wait => "WAIT",
            DecisionKind::Command => "COMMAND",
        }
    }

    fn parse(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == token)
    }
}

impl std::fmt::Display for DecisionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub kind: DecisionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<ActionProgram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_update: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_reason: Option<String>,
}

impl AgentDecision {
    pub fn done() -> Self {
        Self::bare(DecisionKind::Done)
    }

    pub fn wait() -> Self {
        Self::bare(DecisionKind::Wait)
    }

    pub fn fail(reason: &str) -> Self {
        Self {
            fail_reason: Some(reason.to_string()),
            ..Self::bare(DecisionKind::Fail)
        }
    }

    pub fn command(program: ActionProgram) -> Self {
        Self {
            program: Some(program),
            ..Self::bare(DecisionKind::Command)
        }
    }

    pub fn with_memory(mut self, memory: &str) -> Self {
        self.memory_update = Some(memory.to_string());
        self
    }

    fn bare(kind: DecisionKind) -> Self {
        Self {
            kind,
            program: None,
            memory_update: None,
            fail_reason: None,
        }
    }
}

pub const DEFAULT_FAIL_REASON: &str = "no reason given";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MalformedResponse {
    #[error("response has no decision block")]
    NoDecisionBlock,
    #[error("decision block names none of DONE, FAIL, WAIT, COMMAND")]
    NoKeyword,
    #[error("COMMAND without a python block")]
    MissingCode,
    #[error("python block: {0}")]
    Dsl(#[from] ActionError),
}

/// Fenced blocks in order of appearance as (info string, body). An
/// unterminated block runs to the end of the text.
fn fenced_blocks(text: &str) -> Vec<(String, String)> {
    let mut blocks = Vec::new();
    let mut open: Option<(String, Vec<&str>)> = None;
    for line in text.lines() {
        let t = line.trim();
        match &mut open {
            None => {
                if let Some(info) = t.strip_prefix("```") {
                    open = Some((info.trim().to_ascii_lowercase(), Vec::new()));
                }
            }
            Some((_, body)) => {
                if t == "```" {
                    let (lang, body) = open.take().expect("open block");
                    blocks.push((lang, body.join("\n")));
                } else {
                    body.push(line);
                }
            }
        }
    }
    if let Some((lang, body)) = open {
        blocks.push((lang, body.join("\n")));
    }
    blocks
}

/// Kind from the last bare keyword; reason from the remaining text.
fn read_decision_block(body: &str) -> Option<(DecisionKind, String)> {
    let mut kind = None;
    let mut reason = Vec::new();
    for line in body.lines() {
        let (bare, comment) = match line.split_once('#') {
            Some((b, c)) => (b, Some(c.trim())),
            None => (line, None),
        };
        let mut words = Vec::new();
        for tok in bare.split_whitespace() {
            let stripped = tok.trim_matches(|c: char| !c.is_ascii_alphanumeric() && c != '_');
            match DecisionKind::parse(stripped) {
                Some(k) => kind = Some(k),
                None => words.push(tok),
            }
        }
        if !words.is_empty() {
            reason.push(words.join(" "));
        }
        if let Some(c) = comment.filter(|c| !c.is_empty()) {
            reason.push(c.to_string());
        }
    }
    kind.map(|k| (k, reason.join("\n")))
}

pub fn parse_response(text: &str) -> Result<AgentDecision, MalformedResponse> {
    let blocks = fenced_blocks(text);
    let first = |lang: &str| blocks.iter().find(|(l, _)| l == lang).map(|(_, b)| b.as_str());
    let body = first("decision").ok_or(MalformedResponse::NoDecisionBlock)?;
    let (kind, reason) = read_decision_block(body).ok_or(MalformedResponse::NoKeyword)?;
    let program = match kind {
        DecisionKind::Command => Some(parse_program(first("python").ok_or(MalformedResponse::MissingCode)?)?),
        _ => None,
    };
    let fail_reason = (kind == DecisionKind::Fail).then(|| {
        if reason.is_empty() {
            DEFAULT_FAIL_REASON.to_string()
        } else {
            reason
        }
    });
    Ok(AgentDecision {
        kind,
        program,
        memory_update: first("memory").map(str::to_string),
        fail_reason,
    })
}

/// Canonical response text for a decision.
pub fn render_response(d: &AgentDecision) -> String {
    let mut block = String::new();
    if let Some(reason) = &d.fail_reason {
        for line in reason.lines() {
            let _ = writeln!(block, "# {line}");
        }
    }
    block.push_str(d.kind.as_str());
    let mut out = fenced("decision", &block);
    if let Some(p) = &d.program {
        out.push_str(&fenced("python", &p.source_text));
    }
    if let Some(m) = &d.memory_update {
        out.push_str(&fenced("memory", m));
    }
    out
}

// ---------------------------------------------------------------------------
// Policies

pub trait Policy: Send {
    fn decide(&mut self, bundle: &PromptBundle) -> String;
}

/// Replays canned responses by step index.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    responses: Vec<String>,
}

impl ScriptedPolicy {
    pub fn new(responses: Vec<String>) -> Self {
        Self { responses }
    }

    pub fn from_decisions(decisions: &[AgentDecision]) -> Self {
        Self::new(decisions.iter().map(render_response).collect())
    }
}

impl Policy for ScriptedPolicy {
    fn decide(&mut self, bundle: &PromptBundle) -> String {
        self.responses
            .get(bundle.step)
            .cloned()
            .unwrap_or_else(|| render_response(&AgentDecision::fail("script exhausted")))
    }
}

/// Uniform babbling over the action API, seeded per step.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    seed: u64,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

const RANDOM_WORDS: [&str; 8] = ["hello", "report", "42", "C:\\Temp", "enter", "amazon.com", "yes", "Desktop"];
const RANDOM_KEYS: [&str; 6] = ["enter", "tab", "escape", "backspace", "ctrl+s", "down"];
const RANDOM_PROGRAMS: [&str; 5] = ["notepad", "vlc", "msedge", "explorer", "code"];

impl Policy for RandomPolicy {
    fn decide(&mut self, bundle: &PromptBundle) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("random-policy/{}", bundle.step)));
        let roll: f64 = rng.gen();
        let d = if roll < 0.05 {
            AgentDecision::done()
        } else if roll < 0.08 {
            AgentDecision::fail("giving up")
        } else if roll < 0.15 {
            AgentDecision::wait()
        } else {
            let n = rng.gen_range(1..=3);
            let mut lines = Vec::new();
            for _ in 0..n {
                let word = RANDOM_WORDS.choose(&mut rng).unwrap();
                let line = match rng.gen_range(0..6) {
                    0 | 1 if !bundle.screen_ref.is_empty() => format!(
                        "computer.mouse.move_id(id={})\ncomputer.mouse.single_click()",
                        rng.gen_range(0..bundle.screen_ref.len())
                    ),
                    0 | 1 => format!(
                        "computer.mouse.move_abs(x={:.3}, y={:.3})\ncomputer.mouse.single_click()",
                        rng.gen::<f64>(),
                        rng.gen::<f64>()
                    ),
                    2 => format!("computer.keyboard.write(\"{}\")", word.replace('\\', "\\\\")),
                    3 => format!("computer.keyboard.press(\"{}\")", RANDOM_KEYS.choose(&mut rng).unwrap()),
                    4 => format!("computer.os.open_program(\"{}\")", RANDOM_PROGRAMS.choose(&mut rng).unwrap()),
                    _ => "computer.mouse.double_click()".to_string(),
                };
                lines.push(line);
            }
            AgentDecision::command(parse_program(&lines.join("\n")).expect("random programs are well-formed"))
        };
        render_response(&d)
    }
}

/// Forwards prompts to an HTTP endpoint.
pub struct RemotePolicy {
    endpoint: String,
    retries: usize,
    agent: ureq::Agent,
}

pub const POLICY_TIMEOUT_REASON: &str = "policy timeout";

impl RemotePolicy {
    pub fn new(endpoint: &str, timeout: Duration, retries: usize) -> Self {
        Self {
            endpoint: endpoint.to_string(),
            retries,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    fn call(&self, body: &Value) -> Option<String> {
        let resp = self
            .agent
            .post(&self.endpoint)
            .set(PROTOCOL_HEADER, POLICY_PROTOCOL)
            .send_json(body.clone())
            .ok()?;
        let v: Value = resp.into_json().ok()?;
        v.get("text")?.as_str().map(str::to_string)
    }
}

impl Policy for RemotePolicy {
    fn decide(&mut self, bundle: &PromptBundle) -> String {
        let body = bundle.request_body();
        (0..=self.retries)
            .find_map(|_| self.call(&body))
            .unwrap_or_else(|| render_response(&AgentDecision::fail(POLICY_TIMEOUT_REASON)))
    }
}

// ---------------------------------------------------------------------------
// Episodes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub t_max: usize,
    pub n_history: usize,
    /// Consecutive WAITs that end the episode; `None` never times out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wait_limit: Option<usize>,
    pub detector: DetectorConfig,
    pub seed: u64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            t_max: DEFAULT_T_MAX,
            n_history: N_HISTORY,
            wait_limit: None,
            detector: DetectorConfig::uia_only(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EpisodeError {
    #[error("task setup failed: {0}")]
    Setup(#[from] EnvError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("episode already finished")]
    Finished,
    #[error("transcript: {0}")]
    Transcript(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub bundle_digest: String,
    pub response: String,
    /// Parsed kind, or `None` for a malformed response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub effects: EffectLog,
    pub digest_after: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub task: Value,
    pub config: EpisodeConfig,
    pub initial_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptFooter {
    pub steps: usize,
    pub outcome: EpisodeOutcome,
    pub reward: Reward,
    pub final_digest: String,
    pub memory_final: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub header: TranscriptHeader,
    pub steps: Vec<StepRecord>,
    pub footer: Option<TranscriptFooter>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum TranscriptLine {
    Header(TranscriptHeader),
    Step(StepRecord),
    Result(TranscriptFooter),
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: TranscriptLine| {
            out.push_str(&serde_json::to_string(&line).expect("transcripts serialize"));
            out.push('\n');
        };
        push(TranscriptLine::Header(self.header.clone()));
        for s in &self.steps {
            push(TranscriptLine::Step(s.clone()));
        }
        if let Some(f) = &self.footer {
            push(TranscriptLine::Result(f.clone()));
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, EpisodeError> {
        let bad = |m: String| EpisodeError::Transcript(m);
        let mut header = None;
        let mut steps = Vec::new();
        let mut footer = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: TranscriptLine = serde_json::from_str(line).map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
            match parsed {
                TranscriptLine::Header(h) if header.is_none() && i == 0 => header = Some(h),
                TranscriptLine::Step(s) if header.is_some() && footer.is_none() => steps.push(s),
                TranscriptLine::Result(f) if header.is_some() && footer.is_none() => footer = Some(f),
                _ => return Err(bad(format!("line {}: out of order", i + 1))),
            }
        }
        Ok(Self {
            header: header.ok_or_else(|| bad("missing header".into()))?,
            steps,
            footer,
        })
    }

    pub fn task(&self) -> Result<TaskSpec, TaskError> {
        task_from_value(&self.header.task)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub reward: Reward,
    pub steps: usize,
    pub termination: EpisodeOutcome,
    pub effect_logs: Vec<EffectLog>,
    pub memory_final: String,
    pub final_digest: String,
    pub transcript: Transcript,
}

/// Outcome of feeding one response to a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub record: StepRecord,
    pub finished: bool,
}

/// One episode in progress. Used by both the in-process runner and the
/// bridge server.
#[derive(Debug, Clone)]
pub struct EpisodeSession {
    pub task: TaskSpec,
    pub config: EpisodeConfig,
    pub state: DeviceState,
    pub cursor: CursorState,
    pub memory: String,
    pub history: Vec<HistoryItem>,
    pub step: usize,
    pub outcome: Option<EpisodeOutcome>,
    consecutive_waits: usize,
    observation: Option<Observation>,
    previous_screen: Option<AnnotatedScreen>,
    transcript: Transcript,
    effect_logs: Vec<EffectLog>,
}

impl EpisodeSession {
    /// Reset plus the task's setup steps.
    pub fn start(world: &World, task: &TaskSpec, config: EpisodeConfig) -> Result<Self, EpisodeError> {
        let state = apply_config(world, &reset(&world.catalog, config.seed), &task.config)?;
        let header = TranscriptHeader {
            task: task_to_value(task),
            config: config.clone(),
            initial_digest: digest(&state),
        };
        Ok(Self {
            task: task.clone(),
            config,
            state,
            cursor: CursorState::default(),
            memory: String::new(),
            history: Vec::new(),
            step: 0,
            outcome: None,
            consecutive_waits: 0,
            observation: None,
            previous_screen: None,
            transcript: Transcript {
                header,
                steps: Vec::new(),
                footer: None,
            },
            effect_logs: Vec::new(),
        })
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some() || self.step >= self.config.t_max
    }

    /// Observation for the current step; stable until the step is taken.
    pub fn observe(&mut self) -> &Observation {
        if self.observation.is_none() {
            let seed = derive_seed(self.config.seed, &format!("observe/{}", self.step));
            self.observation = Some(build_observation(
                &self.state,
                &self.config.detector,
                &self.task.instruction,
                self.previous_screen.clone(),
                seed,
            ));
        }
        self.observation.as_ref().expect("just built")
    }

    pub fn prompt(&mut self) -> PromptBundle {
        self.observe();
        let obs = self.observation.as_ref().expect("observed");
        build_prompt(obs, &self.history, &self.memory, self.config.n_history, self.step)
    }

    /// Applies one raw policy response.
    pub fn take_step(&mut self, world: &World, response: &str) -> Result<StepOutcome, EpisodeError> {
        if self.is_finished() {
            return Err(EpisodeError::Finished);
        }
        let bundle = self.prompt();
        let screen = bundle.screen_ref.clone();
        let mut effects = EffectLog::default();
        let (decision, error) = match parse_response(response) {
            Ok(d) => (Some(d), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let mut code = None;
        match &decision {
            None => {
                self.consecutive_waits = 0;
                effects.entries.push(LogEntry {
                    call: "<malformed>".into(),
                    target: None,
                    effect: None,
                    error: error.clone(),
                });
            }
            Some(d) => {
                if let Some(m) = &d.memory_update {
                    self.memory = m.clone();
                }
                if d.kind != DecisionKind::Wait {
                    self.consecutive_waits = 0;
                }
                match d.kind {
                    DecisionKind::Done => self.outcome = Some(EpisodeOutcome::done()),
                    DecisionKind::Fail => {
                        self.outcome = Some(EpisodeOutcome::fail(d.fail_reason.as_deref().unwrap_or(DEFAULT_FAIL_REASON)))
                    }
                    DecisionKind::Wait => {
                        let (next, record) = tick_wait(&world.catalog, &self.state)?;
                        self.state = next;
                        effects.entries.push(LogEntry {
                            call: "WAIT".into(),
                            target: None,
                            effect: Some(record),
                            error: None,
                        });
                        self.consecutive_waits += 1;
                        if self.config.wait_limit.is_some_and(|l| self.consecutive_waits >= l) {
                            self.outcome = Some(EpisodeOutcome::ended(Termination::WaitTimeout));
                        }
                    }
                    DecisionKind::Command => {
                        let program = d.program.as_ref().expect("COMMAND carries a program");
                        let (state, cursor, log) =
                            execute_program(&world.catalog, &self.state, &self.cursor, program, &screen);
                        self.state = state;
                        self.cursor = cursor;
                        effects = log;
                        code = Some(program.source_text.clone());
                    }
                }
            }
        }
        self.history.push(HistoryItem {
            step: self.step,
            decision: decision.as_ref().map(|d| d.kind).unwrap_or(DecisionKind::Wait),
            code: code.or_else(|| error.as_ref().map(|e| format!("# rejected: {e}"))),
        });
        let record = StepRecord {
            step: self.step,
            bundle_digest: bundle.digest(),
            response: response.to_string(),
            decision: decision.map(|d| d.kind),
            error,
            effects: effects.clone(),
            digest_after: digest(&self.state),
        };
        self.transcript.steps.push(record.clone());
        self.effect_logs.push(effects);
        self.previous_screen = Some(screen);
        self.observation = None;
        self.step += 1;
        Ok(StepOutcome {
            record,
            finished: self.is_finished(),
        })
    }

    /// Outcome so far: the recorded one, or STEP_LIMIT.
    pub fn current_outcome(&self) -> EpisodeOutcome {
        self.outcome
            .clone()
            .unwrap_or_else(|| EpisodeOutcome::ended(Termination::StepLimit))
    }

    pub fn evaluate(&self, ctx: &EvalContext) -> Result<Reward, EvalError> {
        evaluate_task(&self.state, &self.task, &self.current_outcome(), ctx)
    }

    /// Scores the final state and closes the transcript.
    pub fn finish(mut self, ctx: &EvalContext) -> Result<EpisodeResult, EpisodeError> {
        let outcome = self.current_outcome();
        let reward = self.evaluate(ctx)?;
        let final_digest = digest(&self.state);
        self.transcript.footer = Some(TranscriptFooter {
            steps: self.step,
            outcome: outcome.clone(),
            reward: reward.clone(),
            final_digest: final_digest.clone(),
            memory_final: self.memory.clone(),
        });
        Ok(EpisodeResult {
            task_id: self.task.id.clone(),
            reward,
            steps: self.step,
            termination: outcome,
            effect_logs: self.effect_logs,
            memory_final: self.memory,
            final_digest,
            transcript: self.transcript,
        })
    }
}

pub fn run_episode(
    world: &World,
    task: &TaskSpec,
    policy: &mut dyn Policy,
    config: &EpisodeConfig,
    ctx: &EvalContext,
) -> Result<EpisodeResult, EpisodeError> {
    let mut session = EpisodeSession::start(world, task, config.clone())?;
    while !session.is_finished() {
        let bundle = session.prompt();
        let response = policy.decide(&bundle);
        session.take_step(world, &response)?;
    }
    session.finish(ctx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayVerdict {
    pub final_digest: String,
    pub logged_digest: Option<String>,
    pub matches: bool,
}

/// Re-runs every logged response against a fresh setup of the logged task.
pub fn replay_transcript(world: &World, transcript: &Transcript) -> Result<ReplayVerdict, EpisodeError> {
    let task = transcript.task().map_err(|e| EpisodeError::Transcript(e.to_string()))?;
    let mut session = EpisodeSession::start(world, &task, transcript.header.config.clone())?;
    for s in &transcript.steps {
        session.take_step(world, &s.response)?;
    }
    let final_digest = digest(&session.state);
    let logged = transcript
        .footer
        .as_ref()
        .map(|f| f.final_digest.clone())
        .or_else(|| transcript.steps.last().map(|s| s.digest_after.clone()));
    Ok(ReplayVerdict {
        matches: logged.as_deref() == Some(final_digest.as_str()),
        logged_digest: logged,
        final_digest,
    })
}

#[cfg(test)]
mod tests;
