//! Rewards computed from the final device state.
//!
//! A task's `result` block names a getter that extracts a fragment of the
//! state; the evaluator named by `evaluator.func` compares that fragment with
//! `evaluator.expected.rules`. A missing fragment scores 0.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::envsim::{CookieRecord, DeviceState, FileKind};
use crate::taskspec::{Registry, ResultSpec, TaskSpec, INFEASIBLE_EVALUATOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Binary,
    Continuous,
}

impl RewardKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardKind::Binary => "binary",
            RewardKind::Continuous => "continuous",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reward {
    pub value: f64,
    pub kind: RewardKind,
    pub detail: String,
}

impl Reward {
    pub fn binary(ok: bool, detail: impl Into<String>) -> Self {
        Self {
            value: if ok { 1.0 } else { 0.0 },
            kind: RewardKind::Binary,
            detail: detail.into(),
        }
    }

    pub fn continuous(value: f64, detail: impl Into<String>) -> Self {
        Self {
            value: value.clamp(0.0, 1.0),
            kind: RewardKind::Continuous,
            detail: detail.into(),
        }
    }

    /// A zero of the given kind.
    pub fn zero(kind: RewardKind, detail: impl Into<String>) -> Self {
        Self {
            value: 0.0,
            kind,
            detail: detail.into(),
        }
    }

    pub fn is_well_formed(&self) -> bool {
        (0.0..=1.0).contains(&self.value)
            && (self.kind == RewardKind::Continuous || self.value == 0.0 || self.value == 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Done,
    Fail,
    WaitTimeout,
    StepLimit,
}

impl Termination {
    pub const ALL: [Termination; 4] = [
        Termination::Done,
        Termination::Fail,
        Termination::WaitTimeout,
        Termination::StepLimit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Done => "DONE",
            Termination::Fail => "FAIL",
            Termination::WaitTimeout => "WAIT_TIMEOUT",
            Termination::StepLimit => "STEP_LIMIT",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How an episode ended. `fail_reason` is set only for `Fail`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_reason: Option<String>,
}

impl EpisodeOutcome {
    pub fn done() -> Self {
        Self::ended(Termination::Done)
    }

    pub fn fail(reason: impl Into<String>) -> Self {
        Self {
            termination: Termination::Fail,
            fail_reason: Some(reason.into()),
        }
    }

    /// Any termination other than `Fail`.
    pub fn ended(termination: Termination) -> Self {
        debug_assert!(termination != Termination::Fail);
        Self {
            termination,
            fail_reason: None,
        }
    }

    pub fn declares_infeasible(&self) -> bool {
        self.termination == Termination::Fail
            && self
                .fail_reason
                .as_deref()
                .is_some_and(|r| r.to_ascii_lowercase().contains("infeasible"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no getter named `{0}`")]
    UnknownGetter(String),
    #[error("state has nothing at `{0}`")]
    PathMissing(String),
    #[error("no evaluator named `{0}`")]
    EvaluatorMissing(String),
    #[error("malformed document: {0}")]
    FormatError(String),
    #[error("bad rule: {0}")]
    BadRule(String),
}

/// A fragment of the device state handed to an evaluator.
#[derive(Debug, Clone, PartialEq)]
pub enum StateValue {
    Document(Value),
    Bytes(Vec<u8>),
    Cookies(Vec<CookieRecord>),
}

pub const GETTERS: [&str; 5] = ["vlc_config", "file", "file_meta", "settings_json", "cookies"];

pub struct GetterRegistry;

impl Registry for GetterRegistry {
    fn has(&self, name: &str) -> bool {
        GETTERS.contains(&name)
    }
}

/// Extracts the fragment a getter addresses.
///
/// `file_meta` yields `{"hidden": bool, "size": n}` for a file.
pub fn fetch_state(state: &DeviceState, getter: &ResultSpec) -> Result<StateValue, EvalError> {
    let missing = || EvalError::PathMissing(format!("{}:{}", getter.getter, getter.dest));
    match getter.getter.as_str() {
        "vlc_config" => state.settings.get("vlc").cloned().map(StateValue::Document).ok_or_else(missing),
        "settings_json" => state
            .settings
            .get(&getter.dest)
            .cloned()
            .map(StateValue::Document)
            .ok_or_else(missing),
        "file" => state
            .files
            .get(&getter.dest)
            .filter(|f| f.kind == FileKind::File)
            .map(|f| StateValue::Bytes(f.data.clone()))
            .ok_or_else(missing),
        "file_meta" => state
            .files
            .get(&getter.dest)
            .filter(|f| f.kind == FileKind::File)
            .map(|f| StateValue::Document(serde_json::json!({"hidden": f.hidden, "size": f.data.len()})))
            .ok_or_else(missing),
        "cookies" => Ok(StateValue::Cookies(state.cookies.clone())),
        other => Err(EvalError::UnknownGetter(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Rules

/// 1 iff no cookie's domain contains any of `domains`.
pub fn is_cookie_deleted(cookies: &[CookieRecord], domains: &[String]) -> Reward {
    match cookies.iter().find(|c| domains.iter().any(|d| c.domain.contains(d.as_str()))) {
        Some(c) => Reward::binary(false, format!("cookie `{}` for {} still present", c.name, c.domain)),
        None => Reward::binary(true, "no matching cookies"),
    }
}

/// True iff every key of `expected` is present in `doc` with an equal value;
/// nested objects are compared the same way, other values exactly.
pub fn json_subset(doc: &Value, expected: &Value) -> bool {
    match (doc, expected) {
        (Value::Object(d), Value::Object(e)) => e
            .iter()
            .all(|(k, ev)| d.get(k).is_some_and(|dv| json_subset(dv, ev))),
        _ => doc == expected,
    }
}

pub fn check_json_settings(doc: &Value, expected: &BTreeMap<String, Value>) -> Reward {
    for (key, want) in expected {
        match doc.get(key) {
            Some(got) if json_subset(got, want) => {}
            Some(got) => return Reward::binary(false, format!("`{key}` is {got}, expected {want}")),
            None => return Reward::binary(false, format!("`{key}` is not set")),
        }
    }
    Reward::binary(true, "all expected settings present")
}

pub const HIGHLIGHT_OPEN: &str = "<hl>";
pub const HIGHLIGHT_CLOSE: &str = "</hl>";

/// Removes highlight tags without checking that they balance.
pub fn strip_highlight_markup(s: &str) -> String {
    s.replace(HIGHLIGHT_OPEN, "").replace(HIGHLIGHT_CLOSE, "")
}

/// A document in the highlight-annotated text format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HighlightedText {
    pub plain: String,
    pub spans: usize,
}

/// Parses `<hl>...</hl>` markup. Spans do not nest.
pub fn parse_highlighted(text: &str) -> Result<HighlightedText, EvalError> {
    let mut plain = String::new();
    let mut spans = 0;
    let mut open = false;
    let mut rest = text;
    while !rest.is_empty() {
        if let Some(r) = rest.strip_prefix(HIGHLIGHT_OPEN) {
            if open {
                return Err(EvalError::FormatError("nested highlight".into()));
            }
            open = true;
            rest = r;
        } else if let Some(r) = rest.strip_prefix(HIGHLIGHT_CLOSE) {
            if !open {
                return Err(EvalError::FormatError("unmatched closing highlight tag".into()));
            }
            open = false;
            spans += 1;
            rest = r;
        } else {
            let c = rest.chars().next().expect("non-empty");
            plain.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    if open {
        return Err(EvalError::FormatError("unterminated highlight".into()));
    }
    Ok(HighlightedText { plain, spans })
}

pub fn check_highlighted_words(candidate: &str, golden: &str) -> Result<Reward, EvalError> {
    let c = parse_highlighted(candidate)?;
    let g = parse_highlighted(golden)?;
    Ok(if c.spans > 0 {
        Reward::binary(false, format!("{} highlighted span(s) remain", c.spans))
    } else if c.plain != g.plain {
        Reward::binary(false, "text differs from golden")
    } else {
        Reward::binary(true, "no highlights, text matches")
    })
}

/// Levenshtein distance over chars, two-row DP.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn text_similarity(candidate: &str, golden: &str) -> Reward {
    let longest = candidate.chars().count().max(golden.chars().count());
    if longest == 0 {
        return Reward::continuous(1.0, "both empty");
    }
    let d = levenshtein(candidate, golden);
    Reward::continuous(1.0 - d as f64 / longest as f64, format!("edit distance {d} over {longest} chars"))
}

// ---------------------------------------------------------------------------
// Evaluators

/// Golden artifacts keyed by task id (or by an explicit `golden` rule).
#[derive(Debug, Clone, Default)]
pub struct EvalContext {
    pub golden: BTreeMap<String, Vec<u8>>,
}

type EvalFn = fn(&StateValue, &BTreeMap<String, Value>, &str, &EvalContext) -> Result<Reward, EvalError>;

pub struct EvaluatorEntry {
    pub name: &'static str,
    pub kind: RewardKind,
    /// Used when the task has no `result` block.
    pub default_getter: Option<&'static str>,
    pub contract: &'static str,
    run: EvalFn,
}

fn rule_str<'a>(rules: &'a BTreeMap<String, Value>, key: &str) -> Result<&'a str, EvalError> {
    rules
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| EvalError::BadRule(format!("expected a string `{key}`")))
}

fn as_text(v: &StateValue) -> Result<&str, EvalError> {
    match v {
        StateValue::Bytes(b) => std::str::from_utf8(b).map_err(|_| EvalError::FormatError("file is not UTF-8".into())),
        _ => Err(EvalError::BadRule("evaluator needs a file".into())),
    }
}

fn as_doc(v: &StateValue) -> Result<&Value, EvalError> {
    match v {
        StateValue::Document(d) => Ok(d),
        _ => Err(EvalError::BadRule("evaluator needs a settings document".into())),
    }
}

fn golden_text<'a>(rules: &BTreeMap<String, Value>, task_id: &str, ctx: &'a EvalContext) -> Result<&'a str, EvalError> {
    let key = rules.get("golden").and_then(Value::as_str).unwrap_or(task_id);
    let bytes = ctx
        .golden
        .get(key)
        .ok_or_else(|| EvalError::PathMissing(format!("golden:{key}")))?;
    std::str::from_utf8(bytes).map_err(|_| EvalError::FormatError("golden file is not UTF-8".into()))
}

fn eval_vlc_recordings(v: &StateValue, rules: &BTreeMap<String, Value>, _: &str, _: &EvalContext) -> Result<Reward, EvalError> {
    let want = rule_str(rules, "recording_file_path")?;
    let got = as_doc(v)?.get("recording_file_path").and_then(Value::as_str);
    Ok(match got {
        Some(p) if p == want => Reward::binary(true, format!("recordings go to {p}")),
        Some(p) => Reward::binary(false, format!("recordings go to {p}, expected {want}")),
        None => Reward::binary(false, "recording path not set"),
    })
}

fn eval_cookies(v: &StateValue, rules: &BTreeMap<String, Value>, _: &str, _: &EvalContext) -> Result<Reward, EvalError> {
    let domains: Vec<String> = rules
        .get("domains")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
        .filter(|d: &Vec<String>| !d.is_empty())
        .ok_or_else(|| EvalError::BadRule("`domains` must list at least one domain".into()))?;
    match v {
        StateValue::Cookies(c) => Ok(is_cookie_deleted(c, &domains)),
        _ => Err(EvalError::BadRule("evaluator needs the cookie list".into())),
    }
}

fn eval_json_settings(v: &StateValue, rules: &BTreeMap<String, Value>, _: &str, _: &EvalContext) -> Result<Reward, EvalError> {
    let expected: BTreeMap<String, Value> = match rules.get("expected") {
        Some(Value::Object(m)) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        _ => return Err(EvalError::BadRule("`expected` must be an object".into())),
    };
    Ok(check_json_settings(as_doc(v)?, &expected))
}

fn eval_highlights(v: &StateValue, rules: &BTreeMap<String, Value>, id: &str, ctx: &EvalContext) -> Result<Reward, EvalError> {
    check_highlighted_words(as_text(v)?, golden_text(rules, id, ctx)?)
}

fn eval_similarity(v: &StateValue, rules: &BTreeMap<String, Value>, id: &str, ctx: &EvalContext) -> Result<Reward, EvalError> {
    let golden = match rules.get("expected").and_then(Value::as_str) {
        Some(t) => t,
        None => golden_text(rules, id, ctx)?,
    };
    Ok(text_similarity(as_text(v)?, golden))
}

fn eval_file_content(v: &StateValue, rules: &BTreeMap<String, Value>, _: &str, _: &EvalContext) -> Result<Reward, EvalError> {
    let text = as_text(v)?;
    if let Some(want) = rules.get("content").and_then(Value::as_str) {
        return Ok(Reward::binary(text == want, "exact content comparison"));
    }
    let needle = rule_str(rules, "contains")?;
    Ok(Reward::binary(text.contains(needle), format!("looked for `{needle}`")))
}

fn eval_file_hidden(v: &StateValue, rules: &BTreeMap<String, Value>, _: &str, _: &EvalContext) -> Result<Reward, EvalError> {
    let want = rules.get("hidden").and_then(Value::as_bool).unwrap_or(true);
    let got = as_doc(v)?.get("hidden").and_then(Value::as_bool).unwrap_or(false);
    Ok(Reward::binary(got == want, format!("hidden={got}")))
}

fn eval_file_exists(v: &StateValue, _: &BTreeMap<String, Value>, _: &str, _: &EvalContext) -> Result<Reward, EvalError> {
    match v {
        StateValue::Bytes(_) => Ok(Reward::binary(true, "file exists")),
        _ => Err(EvalError::BadRule("evaluator needs a file getter".into())),
    }
}

fn eval_infeasible(_: &StateValue, _: &BTreeMap<String, Value>, _: &str, _: &EvalContext) -> Result<Reward, EvalError> {
    Ok(Reward::binary(false, "feasible task scored by the infeasibility evaluator"))
}

pub static EVALUATORS: [EvaluatorEntry; 9] = [
    EvaluatorEntry {
        name: "vis_vlc_recordings_folder",
        kind: RewardKind::Binary,
        default_getter: Some("vlc_config"),
        contract: "1 iff the VLC recording_file_path setting equals rules.recording_file_path",
        run: eval_vlc_recordings,
    },
    EvaluatorEntry {
        name: "is_cookie_deleted",
        kind: RewardKind::Binary,
        default_getter: Some("cookies"),
        contract: "1 iff no cookie domain contains any of rules.domains",
        run: eval_cookies,
    },
    EvaluatorEntry {
        name: "check_json_settings",
        kind: RewardKind::Binary,
        default_getter: None,
        contract: "1 iff every key of rules.expected is present with an equal value (objects compared recursively)",
        run: eval_json_settings,
    },
    EvaluatorEntry {
        name: "check_highlighted_words",
        kind: RewardKind::Binary,
        default_getter: None,
        contract: "1 iff the file has no <hl> spans and its text equals the golden file's text",
        run: eval_highlights,
    },
    EvaluatorEntry {
        name: "compare_text_file",
        kind: RewardKind::Continuous,
        default_getter: None,
        contract: "1 - levenshtein/maxlen between the file and rules.expected (or the golden file)",
        run: eval_similarity,
    },
    EvaluatorEntry {
        name: "check_file_content",
        kind: RewardKind::Binary,
        default_getter: None,
        contract: "1 iff the file equals rules.content, or contains rules.contains",
        run: eval_file_content,
    },
    EvaluatorEntry {
        name: "check_file_hidden",
        kind: RewardKind::Binary,
        default_getter: None,
        contract: "1 iff the file's hidden attribute equals rules.hidden (default true); needs file_meta",
        run: eval_file_hidden,
    },
    EvaluatorEntry {
        name: "check_file_exists",
        kind: RewardKind::Binary,
        default_getter: None,
        contract: "1 iff the file addressed by the getter exists",
        run: eval_file_exists,
    },
    EvaluatorEntry {
        name: INFEASIBLE_EVALUATOR,
        kind: RewardKind::Binary,
        default_getter: None,
        contract: "1 iff the episode ended in FAIL with a reason containing \"infeasible\"",
        run: eval_infeasible,
    },
];

pub struct EvaluatorRegistry;

impl EvaluatorRegistry {
    pub fn entry(name: &str) -> Option<&'static EvaluatorEntry> {
        EVALUATORS.iter().find(|e| e.name == name)
    }

    /// `name -> contract` lines, sorted by name.
    pub fn manifest() -> String {
        let mut entries: Vec<_> = EVALUATORS.iter().collect();
        entries.sort_by_key(|e| e.name);
        entries
            .iter()
            .map(|e| format!("{}\t{}\t{}\n", e.name, e.kind.as_str(), e.contract))
            .collect()
    }
}

impl Registry for EvaluatorRegistry {
    fn has(&self, name: &str) -> bool {
        Self::entry(name).is_some()
    }
}

/// Scores one finished episode.
pub fn evaluate_task(
    state: &DeviceState,
    spec: &TaskSpec,
    outcome: &EpisodeOutcome,
    ctx: &EvalContext,
) -> Result<Reward, EvalError> {
    if !spec.feasible {
        return Ok(if outcome.declares_infeasible() {
            Reward::binary(true, "infeasibility recognised")
        } else {
            Reward::binary(false, format!("infeasible task ended with {}", outcome.termination))
        });
    }
    let entry = EvaluatorRegistry::entry(&spec.evaluator.func)
        .ok_or_else(|| EvalError::EvaluatorMissing(spec.evaluator.func.clone()))?;
    let getter = match (&spec.result, entry.default_getter) {
        (Some(r), _) => r.clone(),
        (None, Some(g)) => ResultSpec {
            getter: g.to_string(),
            dest: String::new(),
        },
        (None, None) => return Err(EvalError::BadRule(format!("`{}` needs a result getter", entry.name))),
    };
    let value = match fetch_state(state, &getter) {
        Ok(v) => v,
        Err(EvalError::PathMissing(p)) => return Ok(Reward::zero(entry.kind, format!("missing {p}"))),
        Err(e) => return Err(e),
    };
    match (entry.run)(&value, &spec.evaluator.expected.rules, &spec.id, ctx) {
        Err(EvalError::PathMissing(p)) => Ok(Reward::zero(entry.kind, format!("missing {p}"))),
        other => other,
    }
}

#[cfg(test)]
mod tests;
