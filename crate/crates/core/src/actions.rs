//! The `computer.*` action language.
//!
//! Grammar, one statement per line:
//!
//! ```text
//! line      = blank | comment | statement [comment]
//! statement = "computer" "." group "." name "(" [args] ")"
//! args      = literal {"," literal} {"," name "=" literal}
//!           | name "=" literal {"," name "=" literal}
//! literal   = string | integer | float | "True" | "False"
//! comment   = "#" any*
//! ```
//!
//! Only the functions in [`SIGNATURES`] are accepted.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envsim::{
    dispatch_event, dispatch_window_event, hit_test, open_program_edits, window_handles, Catalog, ClipboardContent,
    DeviceState, EffectRecord, EnvError, EventKind, NodeKind, NodeRef, StateEdit,
};
use crate::geom::Point;
use crate::lexer::{parse_call, tokenize, Literal};
use crate::observe::AnnotatedScreen;

/// Viewport shift of one scroll call.
pub const SCROLL_STEP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Mouse,
    Keyboard,
    Clipboard,
    Os,
    WindowManager,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Mouse => "mouse",
            Group::Keyboard => "keyboard",
            Group::Clipboard => "clipboard",
            Group::Os => "os",
            Group::WindowManager => "window_manager",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Group::Mouse, Group::Keyboard, Group::Clipboard, Group::Os, Group::WindowManager]
            .into_iter()
            .find(|g| g.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamType {
    Int,
    Number,
    Str,
}

impl ParamType {
    fn accepts(self, lit: &Literal) -> bool {
        matches!(
            (self, lit),
            (ParamType::Int, Literal::Int(_))
                | (ParamType::Number, Literal::Int(_) | Literal::Float(_))
                | (ParamType::Str, Literal::Str(_))
        )
    }

    fn name(self) -> &'static str {
        match self {
            ParamType::Int => "int",
            ParamType::Number => "number",
            ParamType::Str => "str",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Param {
    pub name: &'static str,
    /// Another keyword accepted for this parameter.
    pub alias: Option<&'static str>,
    pub ty: ParamType,
    pub required: bool,
}

const fn req(name: &'static str, ty: ParamType) -> Param {
    Param {
        name,
        alias: None,
        ty,
        required: true,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Signature {
    pub group: Group,
    pub name: &'static str,
    pub params: &'static [Param],
}

pub const SIGNATURES: &[Signature] = &[
    Signature { group: Group::Mouse, name: "move_id", params: &[req("id", ParamType::Int)] },
    Signature {
        group: Group::Mouse,
        name: "move_abs",
        params: &[req("x", ParamType::Number), req("y", ParamType::Number)],
    },
    Signature { group: Group::Mouse, name: "single_click", params: &[] },
    Signature { group: Group::Mouse, name: "double_click", params: &[] },
    Signature { group: Group::Mouse, name: "right_click", params: &[] },
    Signature {
        group: Group::Mouse,
        name: "scroll",
        params: &[Param {
            name: "dir",
            alias: Some("direction"),
            ty: ParamType::Str,
            required: true,
        }],
    },
    Signature { group: Group::Keyboard, name: "write", params: &[req("text", ParamType::Str)] },
    Signature { group: Group::Keyboard, name: "press", params: &[req("key", ParamType::Str)] },
    Signature { group: Group::Clipboard, name: "copy_text", params: &[req("text", ParamType::Str)] },
    Signature {
        group: Group::Clipboard,
        name: "copy_image",
        params: &[
            req("id", ParamType::Int),
            Param {
                name: "description",
                alias: None,
                ty: ParamType::Str,
                required: false,
            },
        ],
    },
    Signature { group: Group::Clipboard, name: "paste", params: &[] },
    Signature { group: Group::Os, name: "open_program", params: &[req("program", ParamType::Str)] },
    Signature {
        group: Group::WindowManager,
        name: "switch_to_application",
        params: &[req("window", ParamType::Str)],
    },
];

pub fn signature(group: Group, name: &str) -> Option<&'static Signature> {
    SIGNATURES.iter().find(|s| s.group == group && s.name == name)
}

/// One validated call. Arguments are stored as written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputerCall {
    pub group: Group,
    pub name: String,
    pub args: Vec<Literal>,
    pub kwargs: BTreeMap<String, Literal>,
}

impl ComputerCall {
    pub fn new(group: Group, name: &str, args: Vec<Literal>) -> Self {
        Self {
            group,
            name: name.to_string(),
            args,
            kwargs: BTreeMap::new(),
        }
    }

    pub fn with_kwarg(mut self, key: &str, value: Literal) -> Self {
        self.kwargs.insert(key.to_string(), value);
        self
    }

    fn signature(&self) -> &'static Signature {
        signature(self.group, &self.name).expect("calls are validated on construction")
    }

    /// The value bound to parameter `name`, positionally or by keyword.
    pub fn arg(&self, name: &str) -> Option<&Literal> {
        let sig = self.signature();
        let index = sig.params.iter().position(|p| p.name == name)?;
        let p = &sig.params[index];
        self.args
            .get(index)
            .or_else(|| self.kwargs.get(p.name))
            .or_else(|| p.alias.and_then(|a| self.kwargs.get(a)))
    }

    fn str_arg(&self, name: &str) -> &str {
        self.arg(name).and_then(Literal::as_str).unwrap_or_default()
    }

    fn num_arg(&self, name: &str) -> f64 {
        self.arg(name).and_then(Literal::as_f64).unwrap_or_default()
    }

    fn int_arg(&self, name: &str) -> i64 {
        match self.arg(name) {
            Some(Literal::Int(i)) => *i,
            _ => 0,
        }
    }

    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.group.as_str(), self.name)
    }
}

impl fmt::Display for ComputerCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "computer.{}.{}(", self.group.as_str(), self.name)?;
        let parts: Vec<String> = self
            .args
            .iter()
            .map(|a| a.to_string())
            .chain(self.kwargs.iter().map(|(k, v)| format!("{k}={v}")))
            .collect();
        write!(f, "{})", parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionError {
    #[error("line {line}: syntax error: {message}")]
    DslSyntax { line: usize, message: String },
    #[error("line {line}: unknown function `{name}`")]
    UnknownFunction { line: usize, name: String },
    #[error("line {line}: `{name}`: {message}")]
    Arity { line: usize, name: String, message: String },
    #[error("line {line}: `{name}`: argument `{param}` {message}")]
    Type {
        line: usize,
        name: String,
        param: String,
        message: String,
    },
}

impl ActionError {
    pub fn line(&self) -> usize {
        match self {
            ActionError::DslSyntax { line, .. }
            | ActionError::UnknownFunction { line, .. }
            | ActionError::Arity { line, .. }
            | ActionError::Type { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionProgram {
    pub calls: Vec<ComputerCall>,
    pub source_text: String,
}

impl ActionProgram {
    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }
}

/// Parses a code block into validated calls.
pub fn parse_program(code: &str) -> Result<ActionProgram, ActionError> {
    let mut calls = Vec::new();
    for (i, raw) in code.lines().enumerate() {
        let line = i + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        calls.push(parse_statement(text, line)?);
    }
    Ok(ActionProgram {
        calls,
        source_text: code.to_string(),
    })
}

/// Parses one statement; `line` is used for error reporting.
pub fn parse_statement(text: &str, line: usize) -> Result<ComputerCall, ActionError> {
    let syntax = |message: String| ActionError::DslSyntax { line, message };
    let tokens = tokenize(text).map_err(|e| syntax(format!("column {}: {}", e.column, e.message)))?;
    if tokens.is_empty() {
        return Err(syntax("empty statement".into()));
    }
    let call = parse_call(&tokens).map_err(syntax)?;
    let dotted = call.path.join(".");
    let unknown = || ActionError::UnknownFunction {
        line,
        name: dotted.clone(),
    };
    let [root, group, name] = call.path.as_slice() else {
        return Err(unknown());
    };
    if root != "computer" {
        return Err(unknown());
    }
    let group = Group::parse(group).ok_or_else(unknown)?;
    let sig = signature(group, name).ok_or_else(unknown)?;
    let qualified = format!("{}.{}", group.as_str(), name);
    let arity = |message: String| ActionError::Arity {
        line,
        name: qualified.clone(),
        message,
    };
    if call.args.len() > sig.params.len() {
        return Err(arity(format!(
            "takes at most {} argument(s), got {}",
            sig.params.len(),
            call.args.len()
        )));
    }
    let mut bound: Vec<Option<&Literal>> = vec![None; sig.params.len()];
    for (slot, value) in bound.iter_mut().zip(&call.args) {
        *slot = Some(value);
    }
    for (key, value) in &call.kwargs {
        let Some(index) = sig
            .params
            .iter()
            .position(|p| p.name == key || p.alias == Some(key.as_str()))
        else {
            return Err(arity(format!("unexpected keyword `{key}`")));
        };
        if bound[index].is_some() {
            return Err(arity(format!("`{}` given twice", sig.params[index].name)));
        }
        bound[index] = Some(value);
    }
    for (p, value) in sig.params.iter().zip(&bound) {
        let type_err = |message: String| ActionError::Type {
            line,
            name: qualified.clone(),
            param: p.name.to_string(),
            message,
        };
        match value {
            None if p.required => return Err(arity(format!("missing `{}`", p.name))),
            None => {}
            Some(v) if !p.ty.accepts(v) => {
                return Err(type_err(format!("must be {}, got {}", p.ty.name(), v.type_name())))
            }
            Some(v) => check_domain(group, name, p.name, v).map_err(type_err)?,
        }
    }
    Ok(ComputerCall {
        group,
        name: name.clone(),
        args: call.args,
        kwargs: call.kwargs.into_iter().collect(),
    })
}

fn check_domain(group: Group, name: &str, param: &str, v: &Literal) -> Result<(), String> {
    match (group, name, param, v) {
        (Group::Mouse, "move_abs", _, _) => {
            let x = v.as_f64().unwrap_or(f64::NAN);
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(format!("must lie in [0, 1], got {v}"))
            }
        }
        (Group::Mouse, "scroll", _, Literal::Str(d)) if d != "up" && d != "down" => {
            Err(format!("must be \"up\" or \"down\", got {v}"))
        }
        (_, _, "id", Literal::Int(i)) if *i < 0 => Err("must be non-negative".into()),
        _ => Ok(()),
    }
}

/// Worked examples shown to agents, one code block each.
pub const PROMPT_EXAMPLES: [&str; 9] = [
    r#"computer.os.open_program("msedge") # start with a browser"#,
    r#"computer.mouse.move_id(id=29) # the address bar
computer.mouse.single_click()
computer.keyboard.write("amazon.com")
computer.keyboard.press("enter") # load the page"#,
    r#"computer.mouse.move_id(id=107) # the song title
computer.mouse.double_click() # start playback"#,
    r#"computer.clipboard.copy_image(id=140, description="already copied image about revenue projection plot to clipboard")
computer.os.open_program("outlook") # compose the email next"#,
    r#"computer.mouse.move_abs(x=0.25, y=0.25) # empty field right of "To"
computer.mouse.single_click()
computer.keyboard.write("Justin Wagle")
computer.keyboard.press("enter") # accept the suggestion"#,
    r#"computer.mouse.move_abs(x=0.25, y=0.34) # the subject field
computer.mouse.single_click()
computer.keyboard.write("Revenue projections")"#,
    r#"# pick the slide thumbnail first
computer.mouse.move_id(id=12)
# make it the active slide
computer.mouse.single_click()"#,
    r#"computer.mouse.move_id(id=78) # the Share button
computer.mouse.single_click()"#,
    r#"computer.os.open_program("msedge") # look the lyrics up"#,
];

// ---------------------------------------------------------------------------
// Execution

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CursorState {
    pub position: Point,
    /// The input that last received a click; it takes keyboard input.
    pub last_target: Option<NodeRef>,
    /// Set by focusing an input: the next write replaces its content.
    #[serde(default)]
    pub replace_on_write: bool,
}

impl Default for CursorState {
    fn default() -> Self {
        Self {
            position: Point::new(0.5, 0.5),
            last_target: None,
            replace_on_write: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("element id {0} is not on the current screen")]
    UnknownElementId(i64),
    #[error("no program named `{0}`")]
    NoSuchProgram(String),
    #[error("no window titled `{0}`")]
    NoSuchWindowTitle(String),
    #[error("nothing has keyboard focus")]
    NoFocusedInput,
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// One executed call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub call: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<NodeRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect: Option<EffectRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectLog {
    pub entries: Vec<LogEntry>,
}

impl EffectLog {
    pub fn has_error(&self) -> bool {
        self.entries.iter().any(|e| e.error.is_some())
    }

    pub fn records(&self) -> impl Iterator<Item = &EffectRecord> {
        self.entries.iter().filter_map(|e| e.effect.as_ref())
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entries serialize") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { entries })
    }
}

pub struct Executed {
    pub state: DeviceState,
    pub cursor: CursorState,
    pub target: Option<NodeRef>,
    pub record: EffectRecord,
}

fn action(state: &DeviceState, edits: Vec<StateEdit>) -> Result<(DeviceState, EffectRecord), ExecError> {
    let mut next = state.clone();
    next.apply_edits(&edits)?;
    Ok((next, EffectRecord::action(edits)))
}

/// The focused input, if it still exists, is visible and is in the
/// foreground window.
fn focused_input(state: &DeviceState, cursor: &CursorState) -> Option<NodeRef> {
    let f = cursor.last_target.as_ref()?;
    if state.foreground.as_deref() != Some(f.window.as_str()) {
        return None;
    }
    let w = state.window(&f.window)?;
    (w.is_node_visible(&f.node) && w.node(&f.node)?.kind == NodeKind::Input).then(|| f.clone())
}

fn click(
    catalog: &Catalog,
    state: &DeviceState,
    cursor: &mut CursorState,
    event: EventKind,
) -> Result<(DeviceState, EffectRecord, Option<NodeRef>), ExecError> {
    let Some(hit) = hit_test(state, cursor.position)? else {
        return Ok((state.clone(), EffectRecord::noop(Some(event), None), None));
    };
    let node = state.window(&hit.window).and_then(|w| w.node(&hit.node));
    if event == EventKind::Click && node.is_some_and(|n| n.kind == NodeKind::Input && n.enabled) {
        cursor.last_target = Some(hit.clone());
        cursor.replace_on_write = true;
    }
    match dispatch_event(catalog, state, &hit.window, &hit.node, event, "") {
        Ok((next, record)) => Ok((next, record, Some(hit))),
        Err(EnvError::NodeDisabled(_)) => Ok((state.clone(), EffectRecord::noop(Some(event), Some(hit.clone())), Some(hit))),
        Err(e) => Err(e.into()),
    }
}

/// Types `text` into the focused input, or hands it to the foreground
/// window's text handler.
fn type_text(
    catalog: &Catalog,
    state: &DeviceState,
    cursor: &mut CursorState,
    text: &str,
) -> Result<(DeviceState, EffectRecord, Option<NodeRef>), ExecError> {
    if let Some(f) = focused_input(state, cursor) {
        let current = state.window(&f.window).and_then(|w| w.node(&f.node)).map(|n| n.content.clone());
        let content = if cursor.replace_on_write {
            text.to_string()
        } else {
            current.unwrap_or_default() + text
        };
        cursor.replace_on_write = false;
        let (next, record) = action(
            state,
            vec![StateEdit::SetNodeContent {
                window: f.window.clone(),
                node: f.node.clone(),
                content,
            }],
        )?;
        return Ok((next, record, Some(f)));
    }
    let window = state.foreground.clone().ok_or(ExecError::NoFocusedInput)?;
    if !window_handles(state, &window, EventKind::TextInput, text) {
        return Err(ExecError::NoFocusedInput);
    }
    let (next, record) = dispatch_window_event(catalog, state, &window, EventKind::TextInput, text)?;
    Ok((next, record, None))
}

fn press_key(
    catalog: &Catalog,
    state: &DeviceState,
    cursor: &mut CursorState,
    key: &str,
) -> Result<(DeviceState, EffectRecord, Option<NodeRef>), ExecError> {
    let key = key.to_ascii_lowercase();
    if let Some(f) = focused_input(state, cursor) {
        let node = state.window(&f.window).and_then(|w| w.node(&f.node)).expect("focused node exists");
        if key == "enter" {
            let content = node.content.clone();
            let (next, record) = dispatch_event(catalog, state, &f.window, &f.node, EventKind::TextInput, &content)?;
            return Ok((next, record, Some(f)));
        }
        if node.behavior_for(EventKind::Key, &key).is_some() {
            let (next, record) = dispatch_event(catalog, state, &f.window, &f.node, EventKind::Key, &key)?;
            return Ok((next, record, Some(f)));
        }
        if key == "backspace" {
            let mut content = node.content.clone();
            content.pop();
            cursor.replace_on_write = false;
            let (next, record) = action(
                state,
                vec![StateEdit::SetNodeContent {
                    window: f.window.clone(),
                    node: f.node.clone(),
                    content,
                }],
            )?;
            return Ok((next, record, Some(f)));
        }
    }
    let window = state.foreground.clone().ok_or(ExecError::NoFocusedInput)?;
    let (next, record) = dispatch_window_event(catalog, state, &window, EventKind::Key, &key)?;
    Ok((next, record, None))
}

/// Runs one call against the state and the screen it was chosen from.
pub fn execute_call(
    catalog: &Catalog,
    state: &DeviceState,
    cursor: &CursorState,
    call: &ComputerCall,
    screen: &AnnotatedScreen,
) -> Result<Executed, ExecError> {
    let mut cursor = cursor.clone();
    let element = |id: i64| {
        usize::try_from(id)
            .ok()
            .and_then(|i| screen.get(i))
            .ok_or(ExecError::UnknownElementId(id))
    };
    let (next, record, target) = match (call.group, call.name.as_str()) {
        (Group::Mouse, "move_id") => {
            let id = call.int_arg("id");
            cursor.position = element(id)?.bbox.center();
            (state.clone(), EffectRecord::action(Vec::new()), screen.node_ref(id as usize))
        }
        (Group::Mouse, "move_abs") => {
            cursor.position = Point::new(call.num_arg("x"), call.num_arg("y"));
            (state.clone(), EffectRecord::action(Vec::new()), None)
        }
        (Group::Mouse, "single_click") => click(catalog, state, &mut cursor, EventKind::Click)?,
        (Group::Mouse, "double_click") => click(catalog, state, &mut cursor, EventKind::DoubleClick)?,
        (Group::Mouse, "right_click") => click(catalog, state, &mut cursor, EventKind::RightClick)?,
        (Group::Mouse, "scroll") => {
            let delta = if call.str_arg("dir") == "up" { -SCROLL_STEP } else { SCROLL_STEP };
            match state.foreground_window() {
                None => (state.clone(), EffectRecord::noop(Some(EventKind::Scroll), None), None),
                Some(w) => {
                    let edits = vec![StateEdit::SetViewport {
                        window: w.id.clone(),
                        offset: (w.viewport + delta).clamp(0.0, 1.0),
                    }];
                    let (next, rec) = action(state, edits)?;
                    (next, rec, None)
                }
            }
        }
        (Group::Keyboard, "write") => type_text(catalog, state, &mut cursor, call.str_arg("text"))?,
        (Group::Keyboard, "press") => press_key(catalog, state, &mut cursor, call.str_arg("key"))?,
        (Group::Clipboard, "copy_text") => {
            let (next, rec) = action(
                state,
                vec![StateEdit::SetClipboard {
                    content: ClipboardContent::Text {
                        text: call.str_arg("text").to_string(),
                    },
                }],
            )?;
            (next, rec, None)
        }
        (Group::Clipboard, "copy_image") => {
            let id = call.int_arg("id");
            let description = element(id)?.content.clone();
            let (next, rec) = action(
                state,
                vec![StateEdit::SetClipboard {
                    content: ClipboardContent::Image { description },
                }],
            )?;
            (next, rec, screen.node_ref(id as usize))
        }
        (Group::Clipboard, "paste") => match &state.clipboard {
            ClipboardContent::Empty => (state.clone(), EffectRecord::action(Vec::new()), None),
            content => {
                let text = content.display_text().to_string();
                type_text(catalog, state, &mut cursor, &text)?
            }
        },
        (Group::Os, "open_program") => {
            let name = call.str_arg("program");
            let edits = open_program_edits(catalog, state, name).map_err(|e| match e {
                EnvError::NoSuchProgram(p) => ExecError::NoSuchProgram(p),
                other => other.into(),
            })?;
            let (next, rec) = action(state, edits)?;
            (next, rec, None)
        }
        (Group::WindowManager, "switch_to_application") => {
            let title = call.str_arg("window");
            let w = state
                .windows
                .iter()
                .rev()
                .find(|w| w.title == title)
                .ok_or_else(|| ExecError::NoSuchWindowTitle(title.to_string()))?;
            let edits = if state.foreground.as_deref() == Some(w.id.as_str()) {
                Vec::new()
            } else {
                vec![StateEdit::SetForeground { window: w.id.clone() }]
            };
            let (next, rec) = action(state, edits)?;
            (next, rec, None)
        }
        _ => unreachable!("calls are validated against SIGNATURES"),
    };
    Ok(Executed {
        state: next,
        cursor,
        target,
        record,
    })
}

/// Runs calls in order; the first error is logged and stops the program.
pub fn execute_program(
    catalog: &Catalog,
    state: &DeviceState,
    cursor: &CursorState,
    program: &ActionProgram,
    screen: &AnnotatedScreen,
) -> (DeviceState, CursorState, EffectLog) {
    let mut state = state.clone();
    let mut cursor = cursor.clone();
    let mut log = EffectLog::default();
    for call in &program.calls {
        match execute_call(catalog, &state, &cursor, call, screen) {
            Ok(done) => {
                state = done.state;
                cursor = done.cursor;
                log.entries.push(LogEntry {
                    call: call.to_string(),
                    target: done.target,
                    effect: Some(done.record),
                    error: None,
                });
            }
            Err(e) => {
                log.entries.push(LogEntry {
                    call: call.to_string(),
                    target: None,
                    effect: None,
                    error: Some(e.to_string()),
                });
                break;
            }
        }
    }
    (state, cursor, log)
}

#[cfg(test)]
mod tests;
