//! The simulated desktop.
//!
//! [`DeviceState`] is the complete mutable world. It only changes through
//! [`StateEdit`]s, which are concrete and self-contained: every operation in
//! this module (and every executed action) reports the edits it applied in an
//! [`EffectRecord`], so replaying the edit stream onto a fresh [`reset`]
//! reproduces the final state exactly.
//!
//! Applications are declarative [`AppModel`]s. Their UI trees carry
//! [`Behavior`]s that turn pointer and keyboard events into templated
//! [`Effect`]s; effects are resolved against the current state into edits at
//! dispatch time.

mod config;
mod snapshot;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geom::{Point, Rect};

pub use config::{apply_config, apply_config_logged, parse_exec_script, ExecCommand};
pub use snapshot::{digest, parse_snapshot, snapshot, SnapshotError, SNAPSHOT_MAGIC};

/// Home directory of the simulated user.
pub const HOME: &str = "C:\\Users\\Docker";

/// Top-level folders of the default file tree.
pub const DEFAULT_FOLDERS: [&str; 4] = ["Desktop", "Documents", "Downloads", "Pictures"];

pub fn home_path(rel: &str) -> String {
    format!("{HOME}\\{rel}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Button,
    Text,
    Input,
    Image,
    Icon,
    ListItem,
    Slider,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Click,
    DoubleClick,
    RightClick,
    /// Commit of an input's text (the enter key on a focused input).
    TextInput,
    Key,
    Scroll,
}

/// Where an effect takes a value from when it is resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    Literal(Value),
    /// The event payload (typed text, key name).
    Payload,
    /// The event payload parsed as a JSON number; unresolvable otherwise.
    PayloadNumber,
    /// Current content of a node in the event's window.
    NodeContent(String),
    /// Current content of a node parsed as a JSON number.
    NodeNumber(String),
    /// Path of the document bound to the event's window.
    WindowDocument,
    /// String concatenation of the parts.
    Concat(Vec<ValueSource>),
    /// The inner text with highlight markup removed.
    StripHighlights(Box<ValueSource>),
}

/// Declarative effect template carried by a behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    SetSetting { app: String, key: String, value: ValueSource },
    WriteFile { path: ValueSource, content: ValueSource },
    SetFileHidden { path: ValueSource, hidden: bool },
    SetContent { node: String, value: ValueSource },
    SetVisible { nodes: Vec<String>, visible: bool },
    SetTitle { value: ValueSource },
    BindDocument { path: ValueSource },
    Foreground { app: String },
    OpenApp { app: String },
    CloseWindow,
    AppendCookie { domain: String, name: String, value: String },
    /// Deletes cookies whose domain contains `domain`; all cookies when `None`.
    DeleteCookies { domain: Option<String> },
    /// Runs `effects` after `ticks` waits.
    After { ticks: u64, effects: Vec<Effect> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    pub event: EventKind,
    /// For [`EventKind::Key`]: the key this behavior answers to. `None` matches any key.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub effects: Vec<Effect>,
}

impl Behavior {
    pub fn on(event: EventKind, effects: Vec<Effect>) -> Self {
        Self { event, key: None, effects }
    }

    pub fn on_key(key: &str, effects: Vec<Effect>) -> Self {
        Self {
            event: EventKind::Key,
            key: Some(key.to_string()),
            effects,
        }
    }

    fn matches(&self, event: EventKind, payload: &str) -> bool {
        self.event == event
            && (event != EventKind::Key || self.key.as_deref().is_none_or(|k| k.eq_ignore_ascii_case(payload)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiNode {
    pub id: String,
    pub kind: NodeKind,
    pub content: String,
    pub bbox: Rect,
    pub z: i32,
    pub enabled: bool,
    pub visible: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub behaviors: Vec<Behavior>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<UiNode>,
}

impl UiNode {
    pub fn new(id: &str, kind: NodeKind, content: &str, bbox: Rect) -> Self {
        Self {
            id: id.to_string(),
            kind,
            content: content.to_string(),
            bbox,
            z: 0,
            enabled: true,
            visible: true,
            behaviors: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn z(mut self, z: i32) -> Self {
        self.z = z;
        self
    }

    pub fn hidden(mut self) -> Self {
        self.visible = false;
        self
    }

    pub fn disabled(mut self) -> Self {
        self.enabled = false;
        self
    }

    pub fn on(mut self, event: EventKind, effects: Vec<Effect>) -> Self {
        self.behaviors.push(Behavior::on(event, effects));
        self
    }

    pub fn on_key(mut self, key: &str, effects: Vec<Effect>) -> Self {
        self.behaviors.push(Behavior::on_key(key, effects));
        self
    }

    pub fn child(mut self, node: UiNode) -> Self {
        self.children.push(node);
        self
    }

    pub fn behavior_for(&self, event: EventKind, payload: &str) -> Option<&Behavior> {
        self.behaviors.iter().find(|b| b.matches(event, payload))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowState {
    pub id: String,
    pub title: String,
    pub app: String,
    pub elements: Vec<UiNode>,
    pub viewport: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document: Option<String>,
    /// Window-level handlers for keyboard input that no focused node takes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub behaviors: Vec<Behavior>,
}

impl WindowState {
    /// Visible nodes in pre-order. A node is visible when it and all of its
    /// ancestors are.
    pub fn visible_nodes(&self) -> Vec<&UiNode> {
        fn walk<'a>(nodes: &'a [UiNode], out: &mut Vec<&'a UiNode>) {
            for n in nodes {
                if n.visible {
                    out.push(n);
                    walk(&n.children, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.elements, &mut out);
        out
    }

    pub fn all_nodes(&self) -> Vec<&UiNode> {
        fn walk<'a>(nodes: &'a [UiNode], out: &mut Vec<&'a UiNode>) {
            for n in nodes {
                out.push(n);
                walk(&n.children, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.elements, &mut out);
        out
    }

    pub fn node(&self, id: &str) -> Option<&UiNode> {
        self.all_nodes().into_iter().find(|n| n.id == id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut UiNode> {
        fn find<'a>(nodes: &'a mut [UiNode], id: &str) -> Option<&'a mut UiNode> {
            for n in nodes {
                if n.id == id {
                    return Some(n);
                }
                if let Some(found) = find(&mut n.children, id) {
                    return Some(found);
                }
            }
            None
        }
        find(&mut self.elements, id)
    }

    pub fn is_node_visible(&self, id: &str) -> bool {
        self.visible_nodes().iter().any(|n| n.id == id)
    }

    pub fn has_unique_node_ids(&self) -> bool {
        let nodes = self.all_nodes();
        let mut ids: Vec<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
        ids.sort_unstable();
        ids.windows(2).all(|w| w[0] != w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FileKind {
    Dir,
    File,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileNode {
    pub kind: FileKind,
    pub data: Vec<u8>,
    pub hidden: bool,
}

impl FileNode {
    pub fn dir() -> Self {
        Self {
            kind: FileKind::Dir,
            data: Vec::new(),
            hidden: false,
        }
    }

    pub fn file(data: impl Into<Vec<u8>>) -> Self {
        Self {
            kind: FileKind::File,
            data: data.into(),
            hidden: false,
        }
    }

    pub fn text(&self) -> Option<&str> {
        std::str::from_utf8(&self.data).ok()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClipboardContent {
    #[default]
    Empty,
    Text { text: String },
    Image { description: String },
}

impl ClipboardContent {
    /// What an observer sees: the text itself or the image description.
    pub fn display_text(&self) -> &str {
        match self {
            ClipboardContent::Empty => "",
            ClipboardContent::Text { text } => text,
            ClipboardContent::Image { description } => description,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CookieRecord {
    pub domain: String,
    pub name: String,
    pub value: String,
}

/// A pending effect list that fires once `due` ticks have elapsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timer {
    pub id: u64,
    pub due: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<String>,
    pub effects: Vec<Effect>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    /// Z-order, front window last.
    pub windows: Vec<WindowState>,
    pub foreground: Option<String>,
    pub files: BTreeMap<String, FileNode>,
    pub clipboard: ClipboardContent,
    /// Per-application settings documents (JSON objects).
    pub settings: BTreeMap<String, Value>,
    pub cookies: Vec<CookieRecord>,
    pub rng_seed: u64,
    pub tick: u64,
    pub timers: Vec<Timer>,
    /// Counter for window and timer identifiers.
    pub next_id: u64,
}

/// Reference to a node inside a window.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub window: String,
    pub node: String,
}

/// A concrete, self-contained state change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "edit", rename_all = "snake_case")]
pub enum StateEdit {
    SetSetting { app: String, key: String, value: Value },
    WriteFile { path: String, data: Vec<u8> },
    MakeDir { path: String },
    SetFileHidden { path: String, hidden: bool },
    SetNodeContent { window: String, node: String, content: String },
    SetNodeVisible { window: String, node: String, visible: bool },
    SetWindowTitle { window: String, title: String },
    SetWindowDocument { window: String, path: Option<String> },
    SetViewport { window: String, offset: f64 },
    OpenWindow { window: WindowState },
    CloseWindow { window: String },
    SetForeground { window: String },
    AppendCookie { cookie: CookieRecord },
    DeleteCookies { domain: Option<String> },
    SetClipboard { content: ClipboardContent },
    StartTimer { timer: Timer },
    RemoveTimer { id: u64 },
    Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    /// A behavior fired for an event.
    Event,
    /// An event arrived but nothing handles it.
    Noop,
    /// A config step was applied.
    Config,
    /// Time advanced by one tick (plus any timers that fired).
    Tick,
    /// A direct action (clipboard, window manager, program launch, cursor-free edits).
    Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRecord {
    pub kind: EffectKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<EventKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<NodeRef>,
    pub edits: Vec<StateEdit>,
}

impl EffectRecord {
    pub fn noop(event: Option<EventKind>, target: Option<NodeRef>) -> Self {
        Self {
            kind: EffectKind::Noop,
            event,
            target,
            edits: Vec::new(),
        }
    }

    pub fn action(edits: Vec<StateEdit>) -> Self {
        Self {
            kind: if edits.is_empty() { EffectKind::Noop } else { EffectKind::Action },
            event: None,
            target: None,
            edits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("unknown config step type `{0}`")]
    UnknownStep(String),
    #[error("missing fixture `{0}`")]
    FixtureMissing(String),
    #[error("command not allowed: {0}")]
    ExecDenied(String),
    #[error("no such program `{0}`")]
    NoSuchProgram(String),
    #[error("no such file `{0}`")]
    FileMissing(String),
    #[error("invalid config step: {0}")]
    BadStep(String),
    #[error("point ({x}, {y}) is outside the unit square")]
    OutOfRange { x: f64, y: f64 },
    #[error("no window `{0}`")]
    NoSuchWindow(String),
    #[error("no node `{node}` in window `{window}`")]
    NoSuchNode { window: String, node: String },
    #[error("node `{0}` is disabled")]
    NodeDisabled(String),
    #[error("cannot resolve effect value: {0}")]
    Unresolved(String),
}

/// An application the simulator can open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppModel {
    pub name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub title: String,
    pub elements: Vec<UiNode>,
    #[serde(default)]
    pub behaviors: Vec<Behavior>,
    /// Settings document installed with the application.
    #[serde(default)]
    pub default_settings: BTreeMap<String, Value>,
    /// File extensions (lowercase, without dot) this app opens.
    #[serde(default)]
    pub file_types: Vec<String>,
    /// Node that receives a document's text when a file is opened.
    #[serde(default)]
    pub document_node: Option<String>,
}

impl AppModel {
    pub fn new(name: &str, title: &str) -> Self {
        Self {
            name: name.to_string(),
            aliases: Vec::new(),
            title: title.to_string(),
            elements: Vec::new(),
            behaviors: Vec::new(),
            default_settings: BTreeMap::new(),
            file_types: Vec::new(),
            document_node: None,
        }
    }

    pub fn answers_to(&self, name: &str) -> bool {
        self.name.eq_ignore_ascii_case(name) || self.aliases.iter().any(|a| a.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    apps: BTreeMap<String, AppModel>,
}

impl Catalog {
    pub fn new(apps: impl IntoIterator<Item = AppModel>) -> Self {
        Self {
            apps: apps.into_iter().map(|a| (a.name.clone(), a)).collect(),
        }
    }

    pub fn resolve(&self, name: &str) -> Option<&AppModel> {
        self.apps.get(name).or_else(|| self.apps.values().find(|a| a.answers_to(name)))
    }

    pub fn apps(&self) -> impl Iterator<Item = &AppModel> {
        self.apps.values()
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }

    pub fn app_for_extension(&self, ext: &str) -> Option<&AppModel> {
        let ext = ext.to_ascii_lowercase();
        self.apps.values().find(|a| a.file_types.contains(&ext))
    }
}

/// Everything static the simulator needs: app models and download fixtures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct World {
    pub catalog: Catalog,
    pub fixtures: BTreeMap<String, Vec<u8>>,
}

// ---------------------------------------------------------------------------
// Core operations

/// Fresh desktop: no windows, the default folders, empty clipboard, app
/// default settings installed, tick 0.
pub fn reset(catalog: &Catalog, seed: u64) -> DeviceState {
    let mut files = BTreeMap::new();
    files.insert(HOME.to_string(), FileNode::dir());
    for f in DEFAULT_FOLDERS {
        files.insert(home_path(f), FileNode::dir());
    }
    let settings = catalog
        .apps()
        .filter(|a| !a.default_settings.is_empty())
        .map(|a| {
            let doc = a.default_settings.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
            (a.name.clone(), Value::Object(doc))
        })
        .collect();
    DeviceState {
        windows: Vec::new(),
        foreground: None,
        files,
        clipboard: ClipboardContent::Empty,
        settings,
        cookies: Vec::new(),
        rng_seed: seed,
        tick: 0,
        timers: Vec::new(),
        next_id: 1,
    }
}

impl DeviceState {
    pub fn window(&self, id: &str) -> Option<&WindowState> {
        self.windows.iter().find(|w| w.id == id)
    }

    fn window_mut(&mut self, id: &str) -> Result<&mut WindowState, EnvError> {
        self.windows
            .iter_mut()
            .find(|w| w.id == id)
            .ok_or_else(|| EnvError::NoSuchWindow(id.to_string()))
    }

    pub fn foreground_window(&self) -> Option<&WindowState> {
        self.foreground.as_deref().and_then(|id| self.window(id))
    }

    pub fn window_for_app(&self, app: &str) -> Option<&WindowState> {
        self.windows.iter().rev().find(|w| w.app == app)
    }

    pub fn setting(&self, app: &str, key: &str) -> Option<&Value> {
        self.settings.get(app).and_then(|d| d.get(key))
    }

    pub fn file_text(&self, path: &str) -> Option<&str> {
        self.files.get(path).and_then(FileNode::text)
    }

    /// Applies one edit. This is the only way device state changes.
    pub fn apply_edit(&mut self, edit: &StateEdit) -> Result<(), EnvError> {
        match edit {
            StateEdit::SetSetting { app, key, value } => {
                let doc = self
                    .settings
                    .entry(app.clone())
                    .or_insert_with(|| Value::Object(Default::default()));
                if !doc.is_object() {
                    *doc = Value::Object(Default::default());
                }
                doc.as_object_mut()
                    .expect("settings document is an object")
                    .insert(key.clone(), value.clone());
            }
            StateEdit::WriteFile { path, data } => {
                let hidden = self.files.get(path).is_some_and(|f| f.hidden);
                let mut node = FileNode::file(data.clone());
                node.hidden = hidden;
                self.files.insert(path.clone(), node);
            }
            StateEdit::MakeDir { path } => {
                self.files.entry(path.clone()).or_insert_with(FileNode::dir);
            }
            StateEdit::SetFileHidden { path, hidden } => {
                let f = self
                    .files
                    .get_mut(path)
                    .ok_or_else(|| EnvError::FileMissing(path.clone()))?;
                f.hidden = *hidden;
            }
            StateEdit::SetNodeContent { window, node, content } => {
                let w = self.window_mut(window)?;
                let n = w.node_mut(node).ok_or_else(|| EnvError::NoSuchNode {
                    window: window.clone(),
                    node: node.clone(),
                })?;
                n.content = content.clone();
            }
            StateEdit::SetNodeVisible { window, node, visible } => {
                let w = self.window_mut(window)?;
                let n = w.node_mut(node).ok_or_else(|| EnvError::NoSuchNode {
                    window: window.clone(),
                    node: node.clone(),
                })?;
                n.visible = *visible;
            }
            StateEdit::SetWindowTitle { window, title } => {
                self.window_mut(window)?.title = title.clone();
            }
            StateEdit::SetWindowDocument { window, path } => {
                self.window_mut(window)?.document = path.clone();
            }
            StateEdit::SetViewport { window, offset } => {
                self.window_mut(window)?.viewport = *offset;
            }
            StateEdit::OpenWindow { window } => {
                self.windows.push(window.clone());
                self.foreground = Some(window.id.clone());
                self.next_id += 1;
            }
            StateEdit::CloseWindow { window } => {
                let before = self.windows.len();
                self.windows.retain(|w| &w.id != window);
                if self.windows.len() == before {
                    return Err(EnvError::NoSuchWindow(window.clone()));
                }
                if self.foreground.as_deref() == Some(window.as_str()) {
                    self.foreground = self.windows.last().map(|w| w.id.clone());
                }
            }
            StateEdit::SetForeground { window } => {
                let pos = self
                    .windows
                    .iter()
                    .position(|w| &w.id == window)
                    .ok_or_else(|| EnvError::NoSuchWindow(window.clone()))?;
                let w = self.windows.remove(pos);
                self.windows.push(w);
                self.foreground = Some(window.clone());
            }
            StateEdit::AppendCookie { cookie } => self.cookies.push(cookie.clone()),
            StateEdit::DeleteCookies { domain } => match domain {
                Some(d) => self.cookies.retain(|c| !c.domain.contains(d.as_str())),
                None => self.cookies.clear(),
            },
            StateEdit::SetClipboard { content } => self.clipboard = content.clone(),
            StateEdit::StartTimer { timer } => {
                self.timers.push(timer.clone());
                self.next_id += 1;
            }
            StateEdit::RemoveTimer { id } => self.timers.retain(|t| t.id != *id),
            StateEdit::Tick => self.tick += 1,
        }
        Ok(())
    }

    pub fn apply_edits(&mut self, edits: &[StateEdit]) -> Result<(), EnvError> {
        edits.iter().try_for_each(|e| self.apply_edit(e))
    }
}

/// Returns the node receiving a pointer event at `point` in the foreground
/// window: among visible nodes containing the point, the one with the highest
/// `z`, then the smallest area, then the lexicographically least id.
pub fn hit_test(state: &DeviceState, point: Point) -> Result<Option<NodeRef>, EnvError> {
    if !point.in_unit_square() {
        return Err(EnvError::OutOfRange { x: point.x, y: point.y });
    }
    let Some(window) = state.foreground_window() else {
        return Ok(None);
    };
    let best = window
        .visible_nodes()
        .into_iter()
        .filter(|n| n.bbox.contains(point))
        .min_by(|a, b| {
            b.z.cmp(&a.z)
                .then(a.bbox.area().total_cmp(&b.bbox.area()))
                .then(a.id.cmp(&b.id))
        });
    Ok(best.map(|n| NodeRef {
        window: window.id.clone(),
        node: n.id.clone(),
    }))
}

/// Builds the window for `app` without adding it to the state.
pub fn instantiate_window(state: &DeviceState, app: &AppModel) -> WindowState {
    WindowState {
        id: format!("w{}", state.next_id),
        title: app.title.clone(),
        app: app.name.clone(),
        elements: app.elements.clone(),
        viewport: 0.0,
        document: None,
        behaviors: app.behaviors.clone(),
    }
}

/// Edits that bring `app` to the front, opening it first if needed.
/// Applications are single-instance.
pub fn open_program_edits(catalog: &Catalog, state: &DeviceState, name: &str) -> Result<Vec<StateEdit>, EnvError> {
    let app = catalog
        .resolve(name)
        .ok_or_else(|| EnvError::NoSuchProgram(name.to_string()))?;
    if let Some(w) = state.window_for_app(&app.name) {
        if state.foreground.as_deref() == Some(w.id.as_str()) {
            return Ok(Vec::new());
        }
        return Ok(vec![StateEdit::SetForeground { window: w.id.clone() }]);
    }
    Ok(vec![StateEdit::OpenWindow {
        window: instantiate_window(state, app),
    }])
}

/// Context an effect is resolved in.
struct EffectCtx<'a> {
    catalog: &'a Catalog,
    window: Option<&'a str>,
    payload: &'a str,
}

fn resolve_value(state: &DeviceState, ctx: &EffectCtx<'_>, src: &ValueSource) -> Result<Value, EnvError> {
    let node_content = |id: &str| -> Result<String, EnvError> {
        let wid = ctx
            .window
            .ok_or_else(|| EnvError::Unresolved(format!("node `{id}` referenced outside a window")))?;
        let w = state.window(wid).ok_or_else(|| EnvError::NoSuchWindow(wid.to_string()))?;
        w.node(id).map(|n| n.content.clone()).ok_or_else(|| EnvError::NoSuchNode {
            window: wid.to_string(),
            node: id.to_string(),
        })
    };
    let parse_number = |text: &str| -> Result<Value, EnvError> {
        let t = text.trim();
        if let Ok(i) = t.parse::<i64>() {
            return Ok(Value::from(i));
        }
        t.parse::<f64>()
            .ok()
            .and_then(serde_json::Number::from_f64)
            .map(Value::Number)
            .ok_or_else(|| EnvError::Unresolved(format!("`{text}` is not a number")))
    };
    Ok(match src {
        ValueSource::Literal(v) => v.clone(),
        ValueSource::Payload => Value::String(ctx.payload.to_string()),
        ValueSource::PayloadNumber => parse_number(ctx.payload)?,
        ValueSource::NodeContent(id) => Value::String(node_content(id)?),
        ValueSource::NodeNumber(id) => parse_number(&node_content(id)?)?,
        ValueSource::WindowDocument => {
            let wid = ctx
                .window
                .ok_or_else(|| EnvError::Unresolved("no window for document path".into()))?;
            let w = state.window(wid).ok_or_else(|| EnvError::NoSuchWindow(wid.to_string()))?;
            Value::String(
                w.document
                    .clone()
                    .ok_or_else(|| EnvError::Unresolved("window has no bound document".into()))?,
            )
        }
        ValueSource::Concat(parts) => {
            let mut s = String::new();
            for p in parts {
                match resolve_value(state, ctx, p)? {
                    Value::String(t) => s.push_str(&t),
                    other => s.push_str(&other.to_string()),
                }
            }
            Value::String(s)
        }
        ValueSource::StripHighlights(inner) => {
            let text = value_text(resolve_value(state, ctx, inner)?);
            Value::String(crate::evaluate::strip_highlight_markup(&text))
        }
    })
}

fn value_text(v: Value) -> String {
    match v {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

fn resolve_string(state: &DeviceState, ctx: &EffectCtx<'_>, src: &ValueSource) -> Result<String, EnvError> {
    resolve_value(state, ctx, src).map(value_text)
}

/// Resolves a list of effects into edits, applying each to `state` as it goes
/// so later effects observe earlier ones.
fn realize_effects(
    state: &mut DeviceState,
    ctx: &EffectCtx<'_>,
    effects: &[Effect],
    edits: &mut Vec<StateEdit>,
) -> Result<(), EnvError> {
    for effect in effects {
        let window = || {
            ctx.window
                .map(str::to_string)
                .ok_or_else(|| EnvError::Unresolved("effect needs a window".into()))
        };
        let new_edits = match effect {
            Effect::SetSetting { app, key, value } => vec![StateEdit::SetSetting {
                app: app.clone(),
                key: key.clone(),
                value: resolve_value(state, ctx, value)?,
            }],
            Effect::WriteFile { path, content } => vec![StateEdit::WriteFile {
                path: resolve_string(state, ctx, path)?,
                data: resolve_string(state, ctx, content)?.into_bytes(),
            }],
            Effect::SetFileHidden { path, hidden } => {
                let path = resolve_string(state, ctx, path)?;
                if !state.files.contains_key(&path) {
                    return Err(EnvError::FileMissing(path));
                }
                vec![StateEdit::SetFileHidden { path, hidden: *hidden }]
            }
            Effect::SetContent { node, value } => vec![StateEdit::SetNodeContent {
                window: window()?,
                node: node.clone(),
                content: resolve_string(state, ctx, value)?,
            }],
            Effect::SetVisible { nodes, visible } => {
                let w = window()?;
                nodes
                    .iter()
                    .map(|n| StateEdit::SetNodeVisible {
                        window: w.clone(),
                        node: n.clone(),
                        visible: *visible,
                    })
                    .collect()
            }
            Effect::SetTitle { value } => vec![StateEdit::SetWindowTitle {
                window: window()?,
                title: resolve_string(state, ctx, value)?,
            }],
            Effect::BindDocument { path } => vec![StateEdit::SetWindowDocument {
                window: window()?,
                path: Some(resolve_string(state, ctx, path)?),
            }],
            Effect::Foreground { app } | Effect::OpenApp { app } => open_program_edits(ctx.catalog, state, app)?,
            Effect::CloseWindow => vec![StateEdit::CloseWindow { window: window()? }],
            Effect::AppendCookie { domain, name, value } => vec![StateEdit::AppendCookie {
                cookie: CookieRecord {
                    domain: domain.clone(),
                    name: name.clone(),
                    value: value.clone(),
                },
            }],
            Effect::DeleteCookies { domain } => vec![StateEdit::DeleteCookies { domain: domain.clone() }],
            Effect::After { ticks, effects } => vec![StateEdit::StartTimer {
                timer: Timer {
                    id: state.next_id,
                    due: state.tick + ticks,
                    window: ctx.window.map(str::to_string),
                    effects: effects.clone(),
                },
            }],
        };
        state.apply_edits(&new_edits)?;
        edits.extend(new_edits);
    }
    Ok(())
}

/// Delivers `event` to a node. The matching behavior's effects are applied
/// atomically; a node without a matching behavior yields a no-op record.
pub fn dispatch_event(
    catalog: &Catalog,
    state: &DeviceState,
    window: &str,
    node: &str,
    event: EventKind,
    payload: &str,
) -> Result<(DeviceState, EffectRecord), EnvError> {
    let w = state.window(window).ok_or_else(|| EnvError::NoSuchWindow(window.to_string()))?;
    let n = w.node(node).ok_or_else(|| EnvError::NoSuchNode {
        window: window.to_string(),
        node: node.to_string(),
    })?;
    if !n.enabled {
        return Err(EnvError::NodeDisabled(node.to_string()));
    }
    let target = Some(NodeRef {
        window: window.to_string(),
        node: node.to_string(),
    });
    let Some(behavior) = n.behavior_for(event, payload) else {
        return Ok((state.clone(), EffectRecord::noop(Some(event), target)));
    };
    let effects = behavior.effects.clone();
    run_effects(catalog, state, Some(window), payload, &effects, Some(event), target)
}

/// Delivers a keyboard event to a window's own handlers.
pub fn dispatch_window_event(
    catalog: &Catalog,
    state: &DeviceState,
    window: &str,
    event: EventKind,
    payload: &str,
) -> Result<(DeviceState, EffectRecord), EnvError> {
    let w = state.window(window).ok_or_else(|| EnvError::NoSuchWindow(window.to_string()))?;
    match w.behaviors.iter().find(|b| b.matches(event, payload)) {
        None => Ok((state.clone(), EffectRecord::noop(Some(event), None))),
        Some(b) => {
            let effects = b.effects.clone();
            run_effects(catalog, state, Some(window), payload, &effects, Some(event), None)
        }
    }
}

/// True when the window has a handler for this event.
pub fn window_handles(state: &DeviceState, window: &str, event: EventKind, payload: &str) -> bool {
    state
        .window(window)
        .is_some_and(|w| w.behaviors.iter().any(|b| b.matches(event, payload)))
}

fn run_effects(
    catalog: &Catalog,
    state: &DeviceState,
    window: Option<&str>,
    payload: &str,
    effects: &[Effect],
    event: Option<EventKind>,
    target: Option<NodeRef>,
) -> Result<(DeviceState, EffectRecord), EnvError> {
    let mut next = state.clone();
    let mut edits = Vec::new();
    let ctx = EffectCtx {
        catalog,
        window,
        payload,
    };
    realize_effects(&mut next, &ctx, effects, &mut edits)?;
    Ok((
        next,
        EffectRecord {
            kind: EffectKind::Event,
            event,
            target,
            edits,
        },
    ))
}

/// Advances time by one tick and fires timers that come due.
pub fn tick_wait(catalog: &Catalog, state: &DeviceState) -> Result<(DeviceState, EffectRecord), EnvError> {
    let mut next = state.clone();
    let mut edits = vec![StateEdit::Tick];
    next.apply_edit(&StateEdit::Tick)?;
    let mut due: Vec<Timer> = next.timers.iter().filter(|t| t.due <= next.tick).cloned().collect();
    due.sort_by_key(|t| t.id);
    for timer in due {
        let remove = StateEdit::RemoveTimer { id: timer.id };
        next.apply_edit(&remove)?;
        edits.push(remove);
        // A timer whose window has closed still fires window-free effects.
        let window = timer.window.as_deref().filter(|w| next.window(w).is_some());
        let ctx = EffectCtx {
            catalog,
            window,
            payload: "",
        };
        realize_effects(&mut next, &ctx, &timer.effects, &mut edits)?;
    }
    Ok((
        next,
        EffectRecord {
            kind: EffectKind::Tick,
            event: None,
            target: None,
            edits,
        },
    ))
}

/// Replays edit records onto a state.
pub fn replay(state: &DeviceState, records: &[EffectRecord]) -> Result<DeviceState, EnvError> {
    let mut next = state.clone();
    for r in records {
        next.apply_edits(&r.edits)?;
    }
    Ok(next)
}
