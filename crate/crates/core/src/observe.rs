//! What the agent sees: window titles, clipboard, a numbered element list
//! (Set-of-Marks) and a character-grid rendering of the screen text.
//!
//! Elements come from the foreground window's node tree (`uia`) and from
//! simulated pixel detectors that see the same nodes through seeded noise.
//! Detector boxes that duplicate a `uia` box are dropped on merge.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::canonical::derive_seed;
use crate::envsim::{DeviceState, NodeKind, NodeRef};
use crate::geom::{Rect, SCREEN_HEIGHT_PX, SCREEN_WIDTH_PX};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.7;
pub const TEXT_GRID_COLS: usize = 120;
pub const TEXT_GRID_ROWS: usize = 40;
pub const TABLE_HEADER: &str = "ID | Type | Text content or description | Normalized location [x1, y1, x2, y2]";

/// Element sources, in merge priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Uia,
    OcrSim,
    IconSim,
    ImageSim,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::Uia, Source::OcrSim, Source::IconSim, Source::ImageSim];

    pub fn priority(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Uia => "uia",
            Source::OcrSim => "ocr_sim",
            Source::IconSim => "icon_sim",
            Source::ImageSim => "image_sim",
        }
    }

    /// Annotation color tag.
    pub fn color(self) -> &'static str {
        match self {
            Source::Uia => "orange",
            Source::OcrSim => "blue",
            Source::IconSim => "green",
            Source::ImageSim => "red",
        }
    }

    fn rgb(self) -> [u8; 3] {
        match self {
            Source::Uia => [255, 140, 0],
            Source::OcrSim => [0, 90, 255],
            Source::IconSim => [0, 170, 60],
            Source::ImageSim => [220, 20, 30],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Text,
    Button,
    Input,
    Image,
    Icon,
}

impl ElementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Text => "text",
            ElementKind::Button => "button",
            ElementKind::Input => "input",
            ElementKind::Image => "image",
            ElementKind::Icon => "icon",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            ElementKind::Text,
            ElementKind::Button,
            ElementKind::Input,
            ElementKind::Image,
            ElementKind::Icon,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }

    fn of_node(kind: NodeKind) -> Self {
        match kind {
            NodeKind::Button | NodeKind::Slider => ElementKind::Button,
            NodeKind::Text | NodeKind::ListItem => ElementKind::Text,
            NodeKind::Input => ElementKind::Input,
            NodeKind::Image => ElementKind::Image,
            NodeKind::Icon => ElementKind::Icon,
        }
    }

    pub fn bears_text(self) -> bool {
        matches!(self, ElementKind::Text | ElementKind::Button | ElementKind::Input)
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenElement {
    pub source: Source,
    pub kind: ElementKind,
    pub content: String,
    pub bbox: Rect,
    /// Node the element was derived from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
}

impl ScreenElement {
    fn sort_key_cmp(&self, other: &Self) -> Ordering {
        self.bbox
            .y1
            .total_cmp(&other.bbox.y1)
            .then(self.bbox.x1.total_cmp(&other.bbox.x1))
            .then(self.source.priority().cmp(&other.source.priority()))
            .then(self.bbox.y2.total_cmp(&other.bbox.y2))
            .then(self.bbox.x2.total_cmp(&other.bbox.x2))
            .then(self.kind.cmp(&other.kind))
            .then(self.content.cmp(&other.content))
            .then(self.node.cmp(&other.node))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mark {
    pub id: usize,
    #[serde(flatten)]
    pub element: ScreenElement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedScreen {
    pub marks: Vec<Mark>,
    pub iou_threshold: f64,
    pub seed: u64,
    /// Foreground window when the screen was captured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<String>,
}

impl AnnotatedScreen {
    pub fn empty() -> Self {
        Self {
            marks: Vec::new(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            seed: 0,
            window: None,
        }
    }

    pub fn get(&self, id: usize) -> Option<&ScreenElement> {
        self.marks.get(id).filter(|m| m.id == id).map(|m| &m.element)
    }

    pub fn len(&self) -> usize {
        self.marks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }

    /// Node behind element `id`, when it was captured from a window.
    pub fn node_ref(&self, id: usize) -> Option<NodeRef> {
        let node = self.get(id)?.node.clone()?;
        Some(NodeRef {
            window: self.window.clone()?,
            node,
        })
    }

    /// First mark derived from `node`.
    pub fn id_of_node(&self, node: &str) -> Option<usize> {
        self.marks
            .iter()
            .find(|m| m.element.node.as_deref() == Some(node))
            .map(|m| m.id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub sources: BTreeSet<Source>,
    /// Std-dev of box noise, in normalized units.
    pub jitter: f64,
    pub drop_rate: f64,
    pub merge_rate: f64,
    pub iou_threshold: f64,
}

impl DetectorConfig {
    pub fn new(sources: &[Source], jitter: f64, drop_rate: f64, merge_rate: f64) -> Self {
        Self {
            sources: sources.iter().copied().collect(),
            jitter,
            drop_rate,
            merge_rate,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }

    pub fn uia_only() -> Self {
        Self::new(&[Source::Uia], 0.0, 0.0, 0.0)
    }

    pub fn noiseless() -> Self {
        Self::new(&Source::ALL, 0.0, 0.0, 0.0)
    }

    pub const PROFILES: [&'static str; 4] = ["uia", "pixel", "uia+pixel", "noiseless"];

    pub fn profile(name: &str) -> Option<Self> {
        let pixel = [Source::OcrSim, Source::IconSim, Source::ImageSim];
        match name {
            "uia" => Some(Self::uia_only()),
            "pixel" => Some(Self::new(&pixel, 0.004, 0.05, 0.05)),
            "uia+pixel" => Some(Self::new(&Source::ALL, 0.004, 0.05, 0.05)),
            "noiseless" => Some(Self::noiseless()),
            _ => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.jitter >= 0.0
            && self.jitter.is_finite()
            && (0.0..=1.0).contains(&self.drop_rate)
            && (0.0..=1.0).contains(&self.merge_rate)
            && self.iou_threshold > 0.0
            && self.iou_threshold <= 1.0
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self::profile("uia+pixel").expect("built-in profile")
    }
}

fn detector_sees(source: Source, kind: ElementKind, content: &str) -> Option<ElementKind> {
    match source {
        Source::Uia => Some(kind),
        Source::OcrSim => (kind.bears_text() && !content.trim().is_empty()).then_some(ElementKind::Text),
        Source::IconSim => (kind == ElementKind::Icon).then_some(ElementKind::Icon),
        Source::ImageSim => (kind == ElementKind::Image).then_some(ElementKind::Image),
    }
}

/// Adds truncated Gaussian noise to each coordinate. Falls back to the true
/// box when noise would leave no area.
pub fn jitter_box(rng: &mut ChaCha8Rng, bbox: Rect, sigma: f64) -> Rect {
    if sigma == 0.0 {
        return bbox;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    let mut noisy = |v: f64| (v + normal.sample(rng).clamp(-3.0 * sigma, 3.0 * sigma)).clamp(0.0, 1.0);
    let (mut x1, mut y1, mut x2, mut y2) = (noisy(bbox.x1), noisy(bbox.y1), noisy(bbox.x2), noisy(bbox.y2));
    if x1 > x2 {
        std::mem::swap(&mut x1, &mut x2);
    }
    if y1 > y2 {
        std::mem::swap(&mut y1, &mut y2);
    }
    let r = Rect::new(x1, y1, x2, y2);
    if r.area() > 0.0 {
        r
    } else {
        bbox
    }
}

/// Elements of the foreground window as each enabled source reports them.
pub fn collect_elements(state: &DeviceState, cfg: &DetectorConfig, seed: u64) -> Vec<ScreenElement> {
    let Some(window) = state.foreground_window() else {
        return Vec::new();
    };
    let truth: Vec<ScreenElement> = window
        .visible_nodes()
        .into_iter()
        .map(|n| ScreenElement {
            source: Source::Uia,
            kind: ElementKind::of_node(n.kind),
            content: n.content.clone(),
            bbox: n.bbox,
            node: Some(n.id.clone()),
        })
        .collect();
    let mut out = Vec::new();
    for &source in &cfg.sources {
        if source == Source::Uia {
            out.extend(truth.iter().cloned());
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, source.as_str()));
        let mut seen: Vec<ScreenElement> = Vec::new();
        for t in &truth {
            let Some(kind) = detector_sees(source, t.kind, &t.content) else {
                continue;
            };
            let dropped = rng.gen_bool(cfg.drop_rate);
            let bbox = jitter_box(&mut rng, t.bbox, cfg.jitter);
            if !dropped {
                seen.push(ScreenElement {
                    source,
                    kind,
                    content: t.content.clone(),
                    bbox,
                    node: t.node.clone(),
                });
            }
        }
        if source == Source::OcrSim && cfg.merge_rate > 0.0 {
            seen = fuse_adjacent_text(&mut rng, seen, cfg.merge_rate);
        }
        out.extend(seen);
    }
    out
}

/// Fuses runs of text boxes on the same line, as OCR line grouping does.
fn fuse_adjacent_text(rng: &mut ChaCha8Rng, mut seen: Vec<ScreenElement>, rate: f64) -> Vec<ScreenElement> {
    seen.sort_by(|a, b| a.sort_key_cmp(b));
    let mut out: Vec<ScreenElement> = Vec::new();
    for e in seen {
        if let Some(prev) = out.last_mut() {
            let same_line = prev.bbox.y1 < e.bbox.y2 && e.bbox.y1 < prev.bbox.y2 && prev.bbox.x2 <= e.bbox.x1;
            if same_line && rng.gen_bool(rate) {
                prev.content = format!("{} {}", prev.content, e.content);
                prev.bbox = prev.bbox.union(&e.bbox);
                continue;
            }
        }
        out.push(e);
    }
    out
}

/// Drops detector elements that duplicate a `uia` element and numbers the
/// rest by (y1, x1, source priority).
pub fn merge_som(elements: &[ScreenElement], iou_threshold: f64) -> AnnotatedScreen {
    let uia: Vec<&ScreenElement> = elements.iter().filter(|e| e.source == Source::Uia).collect();
    let mut kept: Vec<ScreenElement> = elements
        .iter()
        .filter(|e| e.source == Source::Uia || !uia.iter().any(|u| u.bbox.iou(&e.bbox) >= iou_threshold))
        .cloned()
        .collect();
    kept.sort_by(|a, b| a.sort_key_cmp(b));
    AnnotatedScreen {
        marks: kept
            .into_iter()
            .enumerate()
            .map(|(id, element)| Mark { id, element })
            .collect(),
        iou_threshold,
        seed: 0,
        window: None,
    }
}

fn sanitize_cell(s: &str) -> String {
    s.replace(['\n', '\r', '\t'], " ").replace('|', "/")
}

/// The pipe table shown to the agent, header first.
pub fn render_element_table(screen: &AnnotatedScreen) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for m in &screen.marks {
        let b = m.element.bbox;
        out.push_str(&format!(
            "{} | {} | {} | [{:.2}, {:.2}, {:.2}, {:.2}]\n",
            m.id,
            m.element.kind,
            sanitize_cell(&m.element.content),
            b.x1,
            b.y1,
            b.x2,
            b.y2
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub id: usize,
    pub kind: ElementKind,
    pub content: String,
    pub bbox: Rect,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("element table line {line}: {message}")]
pub struct TableError {
    pub line: usize,
    pub message: String,
}

/// Parses a table produced by [`render_element_table`].
pub fn parse_element_table(text: &str) -> Result<Vec<TableRow>, TableError> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, message: &str| TableError {
        line: line + 1,
        message: message.to_string(),
    };
    match lines.next() {
        Some((_, h)) if h == TABLE_HEADER => {}
        _ => return Err(bad(0, "missing header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let (head, loc) = line.rsplit_once(" | ").ok_or_else(|| bad(i, "missing location"))?;
        let mut parts = head.splitn(3, " | ");
        let id = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(i, "bad id"))?;
        let kind = parts
            .next()
            .and_then(ElementKind::parse)
            .ok_or_else(|| bad(i, "bad type"))?;
        let content = parts.next().ok_or_else(|| bad(i, "missing content"))?.to_string();
        let nums: Vec<f64> = loc
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| bad(i, "location must be bracketed"))?
            .split(", ")
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(i, "bad coordinate"))?;
        let [x1, y1, x2, y2] = nums[..] else {
            return Err(bad(i, "location needs four numbers"));
        };
        rows.push(TableRow {
            id,
            kind,
            content,
            bbox: Rect::new(x1, y1, x2, y2),
        });
    }
    Ok(rows)
}

/// Places each text-bearing element's content on a character grid at its
/// top-left corner. Later ids overwrite earlier ones; text is cut at the row end.
pub fn render_text_screen(screen: &AnnotatedScreen, cols: usize, rows: usize) -> String {
    let mut grid = vec![vec![' '; cols]; rows];
    for m in &screen.marks {
        let e = &m.element;
        if !e.kind.bears_text() || e.content.is_empty() {
            continue;
        }
        let col = ((e.bbox.x1 * cols as f64).floor() as usize).min(cols.saturating_sub(1));
        let row = ((e.bbox.y1 * rows as f64).floor() as usize).min(rows.saturating_sub(1));
        let text = e.content.replace(['\n', '\r', '\t'], " ");
        for (offset, ch) in text.chars().enumerate() {
            let Some(cell) = grid[row].get_mut(col + offset) else { break };
            *cell = ch;
        }
    }
    grid.into_iter()
        .map(|r| r.into_iter().collect::<String>())
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub instruction: String,
    pub foreground_title: String,
    pub all_window_titles: Vec<String>,
    pub clipboard_text: String,
    pub element_table: String,
    pub text_rendering: String,
    pub screen: AnnotatedScreen,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous_screen: Option<AnnotatedScreen>,
}

pub fn annotate(state: &DeviceState, cfg: &DetectorConfig, seed: u64) -> AnnotatedScreen {
    let mut screen = merge_som(&collect_elements(state, cfg, seed), cfg.iou_threshold);
    screen.seed = seed;
    screen.window = state.foreground.clone();
    screen
}

pub fn build_observation(
    state: &DeviceState,
    cfg: &DetectorConfig,
    instruction: &str,
    previous: Option<AnnotatedScreen>,
    seed: u64,
) -> Observation {
    let screen = annotate(state, cfg, seed);
    Observation {
        instruction: instruction.to_string(),
        foreground_title: state.foreground_window().map(|w| w.title.clone()).unwrap_or_default(),
        all_window_titles: state.windows.iter().map(|w| w.title.clone()).collect(),
        clipboard_text: state.clipboard.display_text().to_string(),
        element_table: render_element_table(&screen),
        text_rendering: render_text_screen(&screen, TEXT_GRID_COLS, TEXT_GRID_ROWS),
        screen,
        previous_screen: previous,
    }
}

// ---------------------------------------------------------------------------
// Debug raster

/// 3×5 digit glyphs, one row per byte (low three bits, MSB left).
const DIGITS: [[u8; 5]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 7, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 1, 1, 1],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];

const GLYPH_SCALE: usize = 2;

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.w && y < self.h {
            let i = (y * self.w + x) * 3;
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    fn fill(&mut self, x0: usize, y0: usize, x1: usize, y1: usize, c: [u8; 3]) {
        for y in y0..y1.min(self.h) {
            for x in x0..x1.min(self.w) {
                self.set(x, y, c);
            }
        }
    }
}

/// Binary PPM (P6) of the marks: 2px boxes in the source color and the id on
/// a filled label at each box's top-right corner.
pub fn render_debug_ppm(screen: &AnnotatedScreen) -> Vec<u8> {
    let (w, h) = (SCREEN_WIDTH_PX as usize, SCREEN_HEIGHT_PX as usize);
    let mut c = Canvas {
        w,
        h,
        px: vec![255; w * h * 3],
    };
    for m in &screen.marks {
        let b = m.element.bbox;
        let color = m.element.source.rgb();
        let px = |v: f64, n: usize| ((v * n as f64).round() as usize).min(n - 1);
        let (x1, y1, x2, y2) = (px(b.x1, w), px(b.y1, h), px(b.x2, w), px(b.y2, h));
        c.fill(x1, y1, x2 + 1, y1 + 2, color);
        c.fill(x1, y2.saturating_sub(1), x2 + 1, y2 + 1, color);
        c.fill(x1, y1, x1 + 2, y2 + 1, color);
        c.fill(x2.saturating_sub(1), y1, x2 + 1, y2 + 1, color);
        let label = m.id.to_string();
        let glyph_w = 4 * GLYPH_SCALE;
        let label_w = label.len() * glyph_w + GLYPH_SCALE;
        let lx = (x2 + 1).saturating_sub(label_w);
        c.fill(lx, y1, lx + label_w, y1 + 6 * GLYPH_SCALE + GLYPH_SCALE, color);
        for (i, d) in label.bytes().enumerate() {
            let glyph = DIGITS[(d - b'0') as usize];
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..3 {
                    if bits & (4 >> col) != 0 {
                        let gx = lx + GLYPH_SCALE + i * glyph_w + col * GLYPH_SCALE;
                        let gy = y1 + GLYPH_SCALE + row * GLYPH_SCALE;
                        c.fill(gx, gy, gx + GLYPH_SCALE, gy + GLYPH_SCALE, [255, 255, 255]);
                    }
                }
            }
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(c.px);
    out
}
