//! Task definitions: parsing, validation, canonical serialization and suite
//! loading.
//!
//! A task file is a JSON object with the keys `id`, `instruction`, `config`,
//! `evaluator`, an optional `result`, an optional `domain` and an optional
//! `feasible` flag. Any other top-level key is kept verbatim in
//! [`TaskSpec::extensions`] and written back on serialization.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::canonical;

/// Evaluator name reserved for tasks that cannot be completed.
pub const INFEASIBLE_EVALUATOR: &str = "infeasible";

/// Top-level key order used by [`serialize`].
const TOP_LEVEL_ORDER: &[&str] = &["id", "instruction", "config", "evaluator", "result", "domain", "feasible"];

/// Task categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "Office")]
    Office,
    #[serde(rename = "Web Browsing")]
    WebBrowsing,
    #[serde(rename = "Windows System")]
    WindowsSystem,
    #[serde(rename = "Coding")]
    Coding,
    #[serde(rename = "Media & Video")]
    MediaVideo,
    #[serde(rename = "Windows Utilities")]
    WindowsUtilities,
}

impl Domain {
    pub const ALL: [Domain; 6] = [
        Domain::Office,
        Domain::WebBrowsing,
        Domain::WindowsSystem,
        Domain::Coding,
        Domain::MediaVideo,
        Domain::WindowsUtilities,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Domain::Office => "Office",
            Domain::WebBrowsing => "Web Browsing",
            Domain::WindowsSystem => "Windows System",
            Domain::Coding => "Coding",
            Domain::MediaVideo => "Media & Video",
            Domain::WindowsUtilities => "Windows Utilities",
        }
    }

    /// Short column heading used by the results tables.
    pub fn column(self) -> &'static str {
        match self {
            Domain::Office => "Office",
            Domain::WebBrowsing => "Web Browser",
            Domain::WindowsSystem => "Windows System",
            Domain::Coding => "Coding",
            Domain::MediaVideo => "Media & Video",
            Domain::WindowsUtilities => "Windows Utils",
        }
    }

    pub fn from_label(label: &str) -> Option<Domain> {
        Domain::ALL.into_iter().find(|d| d.label() == label)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Category label used for tasks that carry no `domain` key.
pub const UNSPECIFIED_CATEGORY: &str = "Unspecified";

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigStep {
    pub step_type: String,
    /// Scalars or lists of scalars.
    pub parameters: BTreeMap<String, Value>,
}

impl ConfigStep {
    pub fn new(step_type: impl Into<String>) -> Self {
        Self {
            step_type: step_type.into(),
            parameters: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.parameters.insert(key.to_string(), value.into());
        self
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.parameters.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedKind {
    Rule,
    GoldenFile,
    Infeasible,
}

impl ExpectedKind {
    fn as_str(self) -> &'static str {
        match self {
            ExpectedKind::Rule => "rule",
            ExpectedKind::GoldenFile => "golden_file",
            ExpectedKind::Infeasible => "infeasible",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "rule" => Some(ExpectedKind::Rule),
            "golden_file" => Some(ExpectedKind::GoldenFile),
            "infeasible" => Some(ExpectedKind::Infeasible),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedSpec {
    pub kind: ExpectedKind,
    pub rules: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorSpec {
    pub func: String,
    pub expected: ExpectedSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultSpec {
    #[serde(rename = "type")]
    pub getter: String,
    pub dest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub instruction: String,
    pub config: Vec<ConfigStep>,
    pub evaluator: EvaluatorSpec,
    pub result: Option<ResultSpec>,
    pub domain: Option<Domain>,
    pub feasible: bool,
    /// Unknown top-level keys, preserved for round-tripping.
    pub extensions: BTreeMap<String, Value>,
}

impl TaskSpec {
    pub fn category(&self) -> &'static str {
        self.domain.map(Domain::label).unwrap_or(UNSPECIFIED_CATEGORY)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("malformed JSON: {0}")]
    Syntax(String),
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
}

impl TaskError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        TaskError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub fn parse_task(json_text: &str) -> Result<TaskSpec, TaskError> {
    let value: Value = serde_json::from_str(json_text).map_err(|e| TaskError::Syntax(e.to_string()))?;
    task_from_value(&value)
}

pub fn task_from_value(value: &Value) -> Result<TaskSpec, TaskError> {
    let obj = value
        .as_object()
        .ok_or_else(|| TaskError::schema("$", "task must be a JSON object"))?;

    let id = required_nonempty_str(obj, "id", "id")?;
    let instruction = required_nonempty_str(obj, "instruction", "instruction")?;

    let config = match obj.get("config") {
        None => return Err(TaskError::schema("config", "missing required key")),
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, v)| parse_step(v, &format!("config[{i}]")))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(TaskError::schema("config", "expected an array")),
    };

    let evaluator = match obj.get("evaluator") {
        None => return Err(TaskError::schema("evaluator", "missing required key")),
        Some(v) => parse_evaluator(v)?,
    };

    let result = match obj.get("result") {
        None | Some(Value::Null) => None,
        Some(Value::Object(r)) => {
            let getter = required_str(r, "type", "result.type")?;
            let dest = required_str(r, "dest", "result.dest")?;
            reject_unknown(r, &["type", "dest"], "result")?;
            Some(ResultSpec { getter, dest })
        }
        Some(_) => return Err(TaskError::schema("result", "expected an object")),
    };

    let domain = match obj.get("domain") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => {
            Some(Domain::from_label(s).ok_or_else(|| TaskError::schema("domain", format!("unknown category `{s}`")))?)
        }
        Some(_) => return Err(TaskError::schema("domain", "expected a string")),
    };

    let feasible = match obj.get("feasible") {
        None => true,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err(TaskError::schema("feasible", "expected a boolean")),
    };

    let extensions = obj
        .iter()
        .filter(|(k, _)| !TOP_LEVEL_ORDER.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();

    Ok(TaskSpec {
        id,
        instruction,
        config,
        evaluator,
        result,
        domain,
        feasible,
        extensions,
    })
}

fn required_str(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String, TaskError> {
    match obj.get(key) {
        None => Err(TaskError::schema(path, "missing required key")),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(TaskError::schema(path, "expected a string")),
    }
}

fn required_nonempty_str(obj: &Map<String, Value>, key: &str, path: &str) -> Result<String, TaskError> {
    let s = required_str(obj, key, path)?;
    if s.is_empty() {
        return Err(TaskError::schema(path, "must not be empty"));
    }
    Ok(s)
}

fn reject_unknown(obj: &Map<String, Value>, allowed: &[&str], path: &str) -> Result<(), TaskError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(TaskError::schema(format!("{path}.{k}"), "unknown key")),
        None => Ok(()),
    }
}

fn is_scalar(v: &Value) -> bool {
    matches!(v, Value::String(_) | Value::Number(_) | Value::Bool(_))
}

fn parse_step(v: &Value, path: &str) -> Result<ConfigStep, TaskError> {
    let obj = v
        .as_object()
        .ok_or_else(|| TaskError::schema(path, "expected an object"))?;
    let step_type = required_nonempty_str(obj, "type", &format!("{path}.type"))?;
    let mut parameters = BTreeMap::new();
    match obj.get("parameters") {
        None => {}
        Some(Value::Object(params)) => {
            for (k, pv) in params {
                let ok = is_scalar(pv) || matches!(pv, Value::Array(items) if items.iter().all(is_scalar));
                if !ok {
                    return Err(TaskError::schema(
                        format!("{path}.parameters.{k}"),
                        "expected a scalar or a list of scalars",
                    ));
                }
                parameters.insert(k.clone(), pv.clone());
            }
        }
        Some(_) => return Err(TaskError::schema(format!("{path}.parameters"), "expected an object")),
    }
    reject_unknown(obj, &["type", "parameters"], path)?;
    Ok(ConfigStep { step_type, parameters })
}

fn parse_evaluator(v: &Value) -> Result<EvaluatorSpec, TaskError> {
    let obj = v
        .as_object()
        .ok_or_else(|| TaskError::schema("evaluator", "expected an object"))?;
    let func = required_nonempty_str(obj, "func", "evaluator.func")?;
    let expected = match obj.get("expected") {
        None => return Err(TaskError::schema("evaluator.expected", "missing required key")),
        Some(Value::Object(e)) => {
            let kind_text = required_str(e, "type", "evaluator.expected.type")?;
            let kind = ExpectedKind::parse(&kind_text).ok_or_else(|| {
                TaskError::schema("evaluator.expected.type", format!("unknown expectation type `{kind_text}`"))
            })?;
            let rules = match e.get("rules") {
                None => BTreeMap::new(),
                Some(Value::Object(r)) => r.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
                Some(_) => return Err(TaskError::schema("evaluator.expected.rules", "expected an object")),
            };
            reject_unknown(e, &["type", "rules"], "evaluator.expected")?;
            ExpectedSpec { kind, rules }
        }
        Some(_) => return Err(TaskError::schema("evaluator.expected", "expected an object")),
    };
    reject_unknown(obj, &["func", "expected"], "evaluator")?;
    Ok(EvaluatorSpec { func, expected })
}

pub fn task_to_value(spec: &TaskSpec) -> Value {
    let mut obj = Map::new();
    obj.insert("id".into(), Value::String(spec.id.clone()));
    obj.insert("instruction".into(), Value::String(spec.instruction.clone()));
    let config = spec
        .config
        .iter()
        .map(|s| {
            let mut o = Map::new();
            o.insert("type".into(), Value::String(s.step_type.clone()));
            o.insert(
                "parameters".into(),
                Value::Object(s.parameters.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
            );
            Value::Object(o)
        })
        .collect();
    obj.insert("config".into(), Value::Array(config));
    let mut expected = Map::new();
    expected.insert("type".into(), Value::String(spec.evaluator.expected.kind.as_str().into()));
    expected.insert(
        "rules".into(),
        Value::Object(spec.evaluator.expected.rules.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
    );
    let mut evaluator = Map::new();
    evaluator.insert("func".into(), Value::String(spec.evaluator.func.clone()));
    evaluator.insert("expected".into(), Value::Object(expected));
    obj.insert("evaluator".into(), Value::Object(evaluator));
    if let Some(r) = &spec.result {
        obj.insert("result".into(), serde_json::to_value(r).expect("result spec serializes"));
    }
    if let Some(d) = spec.domain {
        obj.insert("domain".into(), Value::String(d.label().into()));
    }
    obj.insert("feasible".into(), Value::Bool(spec.feasible));
    for (k, v) in &spec.extensions {
        obj.insert(k.clone(), v.clone());
    }
    Value::Object(obj)
}

/// Canonical JSON text for a task: fixed top-level key order, nested keys
/// sorted, two-space indent, trailing newline.
pub fn serialize(spec: &TaskSpec) -> String {
    canonical::to_canonical_string_with_order(&task_to_value(spec), TOP_LEVEL_ORDER)
}

// ---------------------------------------------------------------------------
// Registries and validation

/// Anything that can answer "is this name registered?".
pub trait Registry {
    fn has(&self, name: &str) -> bool;
}

impl Registry for BTreeSet<String> {
    fn has(&self, name: &str) -> bool {
        self.contains(name)
    }
}

impl Registry for [&str] {
    fn has(&self, name: &str) -> bool {
        self.contains(&name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Str,
    Int,
    Number,
    Bool,
    /// A string or a list of strings.
    StrOrStrList,
}

impl ParamKind {
    pub fn accepts(self, v: &Value) -> bool {
        match self {
            ParamKind::Str => v.is_string(),
            ParamKind::Int => v.is_i64() || v.is_u64(),
            ParamKind::Number => v.is_number(),
            ParamKind::Bool => v.is_boolean(),
            ParamKind::StrOrStrList => {
                v.is_string() || v.as_array().is_some_and(|items| items.iter().all(Value::is_string))
            }
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            ParamKind::Str => "a string",
            ParamKind::Int => "an integer",
            ParamKind::Number => "a number",
            ParamKind::Bool => "a boolean",
            ParamKind::StrOrStrList => "a string or a list of strings",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamRule {
    pub name: &'static str,
    pub kind: ParamKind,
    pub required: bool,
}

#[derive(Debug, Clone, Default)]
pub struct StepRegistry {
    schemas: BTreeMap<String, Vec<ParamRule>>,
}

impl StepRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The config-step types understood by the simulator.
    pub fn standard() -> Self {
        let rule = |name, kind, required| ParamRule { name, kind, required };
        let mut r = Self::empty();
        r.register("launch", vec![rule("command", ParamKind::Str, true)]);
        r.register("execute", vec![rule("command", ParamKind::StrOrStrList, true)]);
        r.register(
            "download",
            vec![
                rule("name", ParamKind::Str, true),
                rule("path", ParamKind::Str, true),
                rule("delay", ParamKind::Int, false),
            ],
        );
        r.register("open_file", vec![rule("path", ParamKind::Str, true)]);
        r
    }

    pub fn register(&mut self, step_type: &str, params: Vec<ParamRule>) {
        self.schemas.insert(step_type.to_string(), params);
    }

    pub fn schema(&self, step_type: &str) -> Option<&[ParamRule]> {
        self.schemas.get(step_type).map(Vec::as_slice)
    }
}

impl Registry for StepRegistry {
    fn has(&self, name: &str) -> bool {
        self.schemas.contains_key(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    UnknownStepType { index: usize, step_type: String },
    MissingParameter { index: usize, key: String },
    WrongParameterType { index: usize, key: String, expected: String },
    UnexpectedParameter { index: usize, key: String },
    UnknownEvaluator { func: String },
    UnknownGetter { getter: String },
    InfeasibleMismatch { func: String },
}

impl Finding {
    /// JSON key path of the offending value.
    pub fn key_path(&self) -> String {
        match self {
            Finding::UnknownStepType { index, .. } => format!("config[{index}].type"),
            Finding::MissingParameter { index, key }
            | Finding::WrongParameterType { index, key, .. }
            | Finding::UnexpectedParameter { index, key } => format!("config[{index}].parameters.{key}"),
            Finding::UnknownEvaluator { .. } | Finding::InfeasibleMismatch { .. } => "evaluator.func".into(),
            Finding::UnknownGetter { .. } => "result.type".into(),
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::UnknownStepType { step_type, .. } => write!(f, "unknown config step type `{step_type}`"),
            Finding::MissingParameter { key, .. } => write!(f, "missing parameter `{key}`"),
            Finding::WrongParameterType { key, expected, .. } => write!(f, "parameter `{key}` must be {expected}"),
            Finding::UnexpectedParameter { key, .. } => write!(f, "unexpected parameter `{key}`"),
            Finding::UnknownEvaluator { func } => write!(f, "unknown evaluator `{func}`"),
            Finding::UnknownGetter { getter } => write!(f, "unknown result getter `{getter}`"),
            Finding::InfeasibleMismatch { func } => {
                write!(f, "infeasible task must use the `{INFEASIBLE_EVALUATOR}` evaluator, found `{func}`")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Checks a parsed task against the registries. Findings are data; an empty
/// report means the task can be run.
pub fn validate(
    spec: &TaskSpec,
    steps: &StepRegistry,
    evaluators: &dyn Registry,
    getters: &dyn Registry,
) -> ValidationReport {
    let mut findings = Vec::new();
    for (index, step) in spec.config.iter().enumerate() {
        let Some(schema) = steps.schema(&step.step_type) else {
            findings.push(Finding::UnknownStepType {
                index,
                step_type: step.step_type.clone(),
            });
            continue;
        };
        for rule in schema {
            match step.parameters.get(rule.name) {
                None if rule.required => findings.push(Finding::MissingParameter {
                    index,
                    key: rule.name.to_string(),
                }),
                Some(v) if !rule.kind.accepts(v) => findings.push(Finding::WrongParameterType {
                    index,
                    key: rule.name.to_string(),
                    expected: rule.kind.describe().to_string(),
                }),
                _ => {}
            }
        }
        for key in step.parameters.keys() {
            if !schema.iter().any(|r| r.name == key) {
                findings.push(Finding::UnexpectedParameter { index, key: key.clone() });
            }
        }
    }
    if !evaluators.has(&spec.evaluator.func) {
        findings.push(Finding::UnknownEvaluator {
            func: spec.evaluator.func.clone(),
        });
    }
    if !spec.feasible && spec.evaluator.func != INFEASIBLE_EVALUATOR {
        findings.push(Finding::InfeasibleMismatch {
            func: spec.evaluator.func.clone(),
        });
    }
    if let Some(r) = &spec.result {
        if !getters.has(&r.getter) {
            findings.push(Finding::UnknownGetter { getter: r.getter.clone() });
        }
    }
    ValidationReport { findings }
}

// ---------------------------------------------------------------------------
// Suites

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSuite {
    pub tasks: Vec<TaskSpec>,
    pub categories: BTreeMap<String, usize>,
    /// File each task was loaded from, parallel to `tasks`. Empty for suites
    /// built in memory.
    pub sources: Vec<PathBuf>,
}

impl TaskSuite {
    pub fn from_tasks(tasks: Vec<TaskSpec>) -> Result<Self, SuiteError> {
        let mut seen = BTreeSet::new();
        for t in &tasks {
            if !seen.insert(t.id.clone()) {
                return Err(SuiteError::DuplicateId {
                    id: t.id.clone(),
                    files: Vec::new(),
                });
            }
        }
        let mut categories = BTreeMap::new();
        for t in &tasks {
            *categories.entry(t.category().to_string()).or_insert(0) += 1;
        }
        Ok(Self {
            tasks,
            categories,
            sources: Vec::new(),
        })
    }

    pub fn get(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.id.clone()).collect()
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate task id `{id}` in {files:?}")]
    DuplicateId { id: String, files: Vec<PathBuf> },
    #[error("{} task file(s) failed to parse", .0.len())]
    Parse(Vec<(PathBuf, TaskError)>),
}

/// Loads every `*.json` file in `dir`, ordered by file name.
pub fn load_suite(dir: &Path) -> Result<TaskSuite, SuiteError> {
    let io_err = |source| SuiteError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let mut tasks = Vec::new();
    let mut sources = Vec::new();
    let mut errors = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|source| SuiteError::Io {
            path: path.clone(),
            source,
        })?;
        match parse_task(&text) {
            Ok(t) => {
                tasks.push(t);
                sources.push(path);
            }
            Err(e) => errors.push((path, e)),
        }
    }
    if !errors.is_empty() {
        return Err(SuiteError::Parse(errors));
    }
    let mut first_seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, t) in tasks.iter().enumerate() {
        if let Some(&j) = first_seen.get(t.id.as_str()) {
            return Err(SuiteError::DuplicateId {
                id: t.id.clone(),
                files: vec![sources[j].clone(), sources[i].clone()],
            });
        }
        first_seen.insert(&t.id, i);
    }
    let mut suite = TaskSuite::from_tasks(tasks)?;
    suite.sources = sources;
    Ok(suite)
}

/// Plain-text category index: one `name=count` line per category.
pub fn render_category_index(categories: &BTreeMap<String, usize>) -> String {
    categories.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_category_index(text: &str) -> Result<BTreeMap<String, usize>, TaskError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, count) = line
            .rsplit_once('=')
            .ok_or_else(|| TaskError::schema(format!("line {}", n + 1), "expected `name=count`"))?;
        let count = count
            .trim()
            .parse()
            .map_err(|_| TaskError::schema(format!("line {}", n + 1), "count is not an integer"))?;
        out.insert(name.trim().to_string(), count);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const VLC_TASK: &str = r#"{
        "id": "8ba5ae7a-5ae5-4eab-9fcc-5dd4fe3abf89-W0S",
        "instruction": "Help me modify the folder used to store my recordings to the Desktop",
        "config": [
            {"type": "launch", "parameters": {"command": "vlc"}},
            {"type": "execute", "parameters": {"command": ["python", "-c", "import pyautogui; import time; pyautogui.click(960, 540); time.sleep(0.5);"]}}
        ],
        "evaluator": {
            "func": "vis_vlc_recordings_folder",
            "expected": {"type": "rule", "rules": {"recording_file_path": "C:\\Users\\Docker\\Desktop"}}
        },
        "result": {"type": "vlc_config", "dest": "vlcrc"}
    }"#;

    #[test]
    fn parses_reference_task() {
        let t = parse_task(VLC_TASK).unwrap();
        assert_eq!(t.id, "8ba5ae7a-5ae5-4eab-9fcc-5dd4fe3abf89-W0S");
        assert_eq!(t.evaluator.func, "vis_vlc_recordings_folder");
        assert_eq!(
            t.evaluator.expected.rules["recording_file_path"],
            Value::String("C:\\Users\\Docker\\Desktop".into())
        );
        assert_eq!(t.config.len(), 2);
        assert_eq!(t.config[0].param_str("command"), Some("vlc"));
        assert!(t.feasible);
        assert_eq!(t.result.as_ref().unwrap().getter, "vlc_config");
    }

    #[test]
    fn missing_instruction_is_named() {
        match parse_task(r#"{"id":"x"}"#) {
            Err(TaskError::Schema { path, .. }) => assert_eq!(path, "instruction"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_syntax_error() {
        assert!(matches!(parse_task("{\"id\": "), Err(TaskError::Syntax(_))));
    }

    #[test]
    fn nested_type_errors_name_the_key_path() {
        let bad = VLC_TASK.replace(r#""command": "vlc""#, r#""command": {"nested": 1}"#);
        match parse_task(&bad) {
            Err(TaskError::Schema { path, .. }) => assert_eq!(path, "config[0].parameters.command"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn serialized_key_order() {
        let t = parse_task(VLC_TASK).unwrap();
        let s = serialize(&t);
        let pos = |k: &str| s.find(&format!("\n  \"{k}\"")).unwrap();
        assert!(pos("id") < pos("instruction"));
        assert!(pos("instruction") < pos("config"));
        assert!(pos("config") < pos("evaluator"));
        assert!(pos("evaluator") < pos("result"));
        assert_eq!(parse_task(&s).unwrap(), t);
    }

    #[test]
    fn empty_config_is_emitted() {
        let mut t = parse_task(VLC_TASK).unwrap();
        t.config.clear();
        let s = serialize(&t);
        assert!(s.contains("\"config\": []"));
    }

    #[test]
    fn unknown_keys_round_trip() {
        let text = VLC_TASK.replacen('{', r#"{"snapshot": "vlc", "related_apps": ["vlc"],"#, 1);
        let t = parse_task(&text).unwrap();
        assert_eq!(t.extensions.len(), 2);
        let again = parse_task(&serialize(&t)).unwrap();
        assert_eq!(again, t);
        assert_eq!(serialize(&again), serialize(&t));
    }

    fn full_registries() -> (StepRegistry, BTreeSet<String>, BTreeSet<String>) {
        let evals = ["vis_vlc_recordings_folder", INFEASIBLE_EVALUATOR]
            .into_iter()
            .map(String::from)
            .collect();
        let getters = ["vlc_config"].into_iter().map(String::from).collect();
        (StepRegistry::standard(), evals, getters)
    }

    #[test]
    fn reference_task_validates() {
        let (s, e, g) = full_registries();
        let t = parse_task(VLC_TASK).unwrap();
        assert!(validate(&t, &s, &e, &g).is_clean());
    }

    #[test]
    fn unknown_evaluator_is_one_finding() {
        let (s, e, g) = full_registries();
        let mut t = parse_task(VLC_TASK).unwrap();
        t.evaluator.func = "no_such_fn".into();
        let r = validate(&t, &s, &e, &g);
        assert_eq!(r.findings, vec![Finding::UnknownEvaluator { func: "no_such_fn".into() }]);
        assert_eq!(r.findings[0].key_path(), "evaluator.func");
    }

    #[test]
    fn unknown_step_type_is_a_finding_not_a_parse_error() {
        let (s, e, g) = full_registries();
        let text = VLC_TASK.replace(r#""type": "launch""#, r#""type": "teleport""#);
        let t = parse_task(&text).unwrap();
        let r = validate(&t, &s, &e, &g);
        assert_eq!(r.findings.len(), 1);
        assert_eq!(r.findings[0].key_path(), "config[0].type");
    }

    #[test]
    fn infeasible_flag_requires_sentinel_evaluator() {
        let (s, e, g) = full_registries();
        let mut t = parse_task(VLC_TASK).unwrap();
        t.feasible = false;
        let r = validate(&t, &s, &e, &g);
        assert!(matches!(r.findings[..], [Finding::InfeasibleMismatch { .. }]));
    }

    #[test]
    fn category_index_round_trip() {
        let mut m = BTreeMap::new();
        m.insert("Office".to_string(), 2);
        m.insert("Media & Video".to_string(), 3);
        assert_eq!(parse_category_index(&render_category_index(&m)).unwrap(), m);
    }
}
