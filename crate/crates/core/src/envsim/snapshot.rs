//! Canonical binary encoding of [`DeviceState`].
//!
//! Layout: the 8-byte magic `WAASNAP1`, then a sequence of fields. Every field
//! is `tag: u8`, `len: u32 little-endian`, `len` payload bytes. Records
//! (windows, files, settings, cookies, timers) nest the same field format in
//! their payload.
//!
//! | tag  | field              | payload                                     |
//! |------|--------------------|---------------------------------------------|
//! | 0x01 | rng_seed           | u64 LE                                      |
//! | 0x02 | tick               | u64 LE                                      |
//! | 0x03 | next_id            | u64 LE                                      |
//! | 0x04 | foreground         | UTF-8 window id (absent when none)          |
//! | 0x10 | window record      | nested, one per window, back to front       |
//! | 0x11 |   id               | UTF-8                                       |
//! | 0x12 |   title            | UTF-8                                       |
//! | 0x13 |   app              | UTF-8                                       |
//! | 0x14 |   viewport         | f64 bits, u64 LE                            |
//! | 0x15 |   document         | UTF-8 (absent when none)                    |
//! | 0x16 |   elements         | compact JSON of the node tree               |
//! | 0x17 |   behaviors        | compact JSON of the window handlers         |
//! | 0x20 | file record        | nested, sorted by path                      |
//! | 0x21 |   path             | UTF-8                                       |
//! | 0x22 |   kind             | u8: 0 dir, 1 file                           |
//! | 0x23 |   hidden           | u8: 0 or 1                                  |
//! | 0x24 |   data             | raw bytes                                   |
//! | 0x30 | clipboard          | u8 kind (0 empty, 1 text, 2 image) + UTF-8  |
//! | 0x40 | settings record    | nested, sorted by app                       |
//! | 0x41 |   app              | UTF-8                                       |
//! | 0x42 |   document         | canonical JSON                              |
//! | 0x50 | cookie record      | nested, in list order                       |
//! | 0x51 |   domain           | UTF-8                                       |
//! | 0x52 |   name             | UTF-8                                       |
//! | 0x53 |   value            | UTF-8                                       |
//! | 0x60 | timer              | compact JSON, in list order                 |

use std::collections::BTreeMap;

use thiserror::Error;

use super::{ClipboardContent, CookieRecord, DeviceState, FileKind, FileNode, WindowState};
use crate::canonical;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"WAASNAP1";

const T_SEED: u8 = 0x01;
const T_TICK: u8 = 0x02;
const T_NEXT_ID: u8 = 0x03;
const T_FOREGROUND: u8 = 0x04;
const T_WINDOW: u8 = 0x10;
const T_W_ID: u8 = 0x11;
const T_W_TITLE: u8 = 0x12;
const T_W_APP: u8 = 0x13;
const T_W_VIEWPORT: u8 = 0x14;
const T_W_DOCUMENT: u8 = 0x15;
const T_W_ELEMENTS: u8 = 0x16;
const T_W_BEHAVIORS: u8 = 0x17;
const T_FILE: u8 = 0x20;
const T_F_PATH: u8 = 0x21;
const T_F_KIND: u8 = 0x22;
const T_F_HIDDEN: u8 = 0x23;
const T_F_DATA: u8 = 0x24;
const T_CLIPBOARD: u8 = 0x30;
const T_SETTINGS: u8 = 0x40;
const T_S_APP: u8 = 0x41;
const T_S_DOC: u8 = 0x42;
const T_COOKIE: u8 = 0x50;
const T_C_DOMAIN: u8 = 0x51;
const T_C_NAME: u8 = 0x52;
const T_C_VALUE: u8 = 0x53;
const T_TIMER: u8 = 0x60;

#[derive(Debug, Error, PartialEq)]
pub enum SnapshotError {
    #[error("bad magic header")]
    BadMagic,
    #[error("truncated field")]
    Truncated,
    #[error("unexpected tag 0x{0:02x}")]
    UnexpectedTag(u8),
    #[error("missing field 0x{0:02x}")]
    Missing(u8),
    #[error("invalid payload for tag 0x{tag:02x}: {message}")]
    Invalid { tag: u8, message: String },
}

struct Writer(Vec<u8>);

impl Writer {
    fn field(&mut self, tag: u8, payload: &[u8]) {
        self.0.push(tag);
        self.0.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        self.0.extend_from_slice(payload);
    }

    fn str(&mut self, tag: u8, s: &str) {
        self.field(tag, s.as_bytes());
    }

    fn u64(&mut self, tag: u8, v: u64) {
        self.field(tag, &v.to_le_bytes());
    }

    fn nested(&mut self, tag: u8, build: impl FnOnce(&mut Writer)) {
        let mut inner = Writer(Vec::new());
        build(&mut inner);
        self.field(tag, &inner.0);
    }
}

fn compact_json<T: serde::Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("state components serialize")
}

/// Deterministic byte encoding of a state. Equal states give equal bytes.
pub fn snapshot(state: &DeviceState) -> Vec<u8> {
    let mut w = Writer(SNAPSHOT_MAGIC.to_vec());
    w.u64(T_SEED, state.rng_seed);
    w.u64(T_TICK, state.tick);
    w.u64(T_NEXT_ID, state.next_id);
    if let Some(fg) = &state.foreground {
        w.str(T_FOREGROUND, fg);
    }
    for win in &state.windows {
        w.nested(T_WINDOW, |n| {
            n.str(T_W_ID, &win.id);
            n.str(T_W_TITLE, &win.title);
            n.str(T_W_APP, &win.app);
            n.u64(T_W_VIEWPORT, win.viewport.to_bits());
            if let Some(doc) = &win.document {
                n.str(T_W_DOCUMENT, doc);
            }
            n.field(T_W_ELEMENTS, &compact_json(&win.elements));
            n.field(T_W_BEHAVIORS, &compact_json(&win.behaviors));
        });
    }
    for (path, node) in &state.files {
        w.nested(T_FILE, |n| {
            n.str(T_F_PATH, path);
            n.field(T_F_KIND, &[matches!(node.kind, FileKind::File) as u8]);
            n.field(T_F_HIDDEN, &[node.hidden as u8]);
            n.field(T_F_DATA, &node.data);
        });
    }
    let (kind, text) = match &state.clipboard {
        ClipboardContent::Empty => (0u8, ""),
        ClipboardContent::Text { text } => (1, text.as_str()),
        ClipboardContent::Image { description } => (2, description.as_str()),
    };
    let mut clip = vec![kind];
    clip.extend_from_slice(text.as_bytes());
    w.field(T_CLIPBOARD, &clip);
    for (app, doc) in &state.settings {
        w.nested(T_SETTINGS, |n| {
            n.str(T_S_APP, app);
            n.str(T_S_DOC, canonical::to_canonical_string(doc).trim_end());
        });
    }
    for c in &state.cookies {
        w.nested(T_COOKIE, |n| {
            n.str(T_C_DOMAIN, &c.domain);
            n.str(T_C_NAME, &c.name);
            n.str(T_C_VALUE, &c.value);
        });
    }
    for t in &state.timers {
        w.field(T_TIMER, &compact_json(t));
    }
    w.0
}

/// Hex SHA-256 of the snapshot.
pub fn digest(state: &DeviceState) -> String {
    canonical::sha256_hex(&snapshot(state))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<Option<(u8, &'a [u8])>, SnapshotError> {
        if self.pos == self.buf.len() {
            return Ok(None);
        }
        if self.buf.len() - self.pos < 5 {
            return Err(SnapshotError::Truncated);
        }
        let tag = self.buf[self.pos];
        let len = u32::from_le_bytes(self.buf[self.pos + 1..self.pos + 5].try_into().expect("4 bytes")) as usize;
        let start = self.pos + 5;
        let end = start.checked_add(len).ok_or(SnapshotError::Truncated)?;
        if end > self.buf.len() {
            return Err(SnapshotError::Truncated);
        }
        self.pos = end;
        Ok(Some((tag, &self.buf[start..end])))
    }

    fn fields(buf: &'a [u8]) -> Result<Vec<(u8, &'a [u8])>, SnapshotError> {
        let mut r = Reader { buf, pos: 0 };
        let mut out = Vec::new();
        while let Some(f) = r.next()? {
            out.push(f);
        }
        Ok(out)
    }
}

fn utf8(tag: u8, b: &[u8]) -> Result<String, SnapshotError> {
    String::from_utf8(b.to_vec()).map_err(|e| SnapshotError::Invalid {
        tag,
        message: e.to_string(),
    })
}

fn u64_of(tag: u8, b: &[u8]) -> Result<u64, SnapshotError> {
    let arr: [u8; 8] = b.try_into().map_err(|_| SnapshotError::Invalid {
        tag,
        message: "expected 8 bytes".into(),
    })?;
    Ok(u64::from_le_bytes(arr))
}

fn json_of<T: serde::de::DeserializeOwned>(tag: u8, b: &[u8]) -> Result<T, SnapshotError> {
    serde_json::from_slice(b).map_err(|e| SnapshotError::Invalid {
        tag,
        message: e.to_string(),
    })
}

fn byte_of(tag: u8, b: &[u8]) -> Result<u8, SnapshotError> {
    match b {
        [v] => Ok(*v),
        _ => Err(SnapshotError::Invalid {
            tag,
            message: "expected 1 byte".into(),
        }),
    }
}

/// Decodes a snapshot produced by [`snapshot`].
pub fn parse_snapshot(bytes: &[u8]) -> Result<DeviceState, SnapshotError> {
    let body = bytes.strip_prefix(SNAPSHOT_MAGIC.as_slice()).ok_or(SnapshotError::BadMagic)?;
    let mut seed = None;
    let mut tick = None;
    let mut next_id = None;
    let mut foreground = None;
    let mut windows = Vec::new();
    let mut files = BTreeMap::new();
    let mut clipboard = None;
    let mut settings = BTreeMap::new();
    let mut cookies = Vec::new();
    let mut timers = Vec::new();

    for (tag, payload) in Reader::fields(body)? {
        match tag {
            T_SEED => seed = Some(u64_of(tag, payload)?),
            T_TICK => tick = Some(u64_of(tag, payload)?),
            T_NEXT_ID => next_id = Some(u64_of(tag, payload)?),
            T_FOREGROUND => foreground = Some(utf8(tag, payload)?),
            T_WINDOW => {
                let (mut id, mut title, mut app, mut viewport, mut document, mut elements, mut behaviors) =
                    (None, None, None, None, None, None, None);
                for (t, p) in Reader::fields(payload)? {
                    match t {
                        T_W_ID => id = Some(utf8(t, p)?),
                        T_W_TITLE => title = Some(utf8(t, p)?),
                        T_W_APP => app = Some(utf8(t, p)?),
                        T_W_VIEWPORT => viewport = Some(f64::from_bits(u64_of(t, p)?)),
                        T_W_DOCUMENT => document = Some(utf8(t, p)?),
                        T_W_ELEMENTS => elements = Some(json_of(t, p)?),
                        T_W_BEHAVIORS => behaviors = Some(json_of(t, p)?),
                        other => return Err(SnapshotError::UnexpectedTag(other)),
                    }
                }
                windows.push(WindowState {
                    id: id.ok_or(SnapshotError::Missing(T_W_ID))?,
                    title: title.ok_or(SnapshotError::Missing(T_W_TITLE))?,
                    app: app.ok_or(SnapshotError::Missing(T_W_APP))?,
                    viewport: viewport.ok_or(SnapshotError::Missing(T_W_VIEWPORT))?,
                    document,
                    elements: elements.ok_or(SnapshotError::Missing(T_W_ELEMENTS))?,
                    behaviors: behaviors.ok_or(SnapshotError::Missing(T_W_BEHAVIORS))?,
                });
            }
            T_FILE => {
                let (mut path, mut kind, mut hidden, mut data) = (None, None, None, None);
                for (t, p) in Reader::fields(payload)? {
                    match t {
                        T_F_PATH => path = Some(utf8(t, p)?),
                        T_F_KIND => {
                            kind = Some(match byte_of(t, p)? {
                                0 => FileKind::Dir,
                                1 => FileKind::File,
                                v => {
                                    return Err(SnapshotError::Invalid {
                                        tag: t,
                                        message: format!("file kind {v}"),
                                    })
                                }
                            })
                        }
                        T_F_HIDDEN => hidden = Some(byte_of(t, p)? != 0),
                        T_F_DATA => data = Some(p.to_vec()),
                        other => return Err(SnapshotError::UnexpectedTag(other)),
                    }
                }
                files.insert(
                    path.ok_or(SnapshotError::Missing(T_F_PATH))?,
                    FileNode {
                        kind: kind.ok_or(SnapshotError::Missing(T_F_KIND))?,
                        hidden: hidden.ok_or(SnapshotError::Missing(T_F_HIDDEN))?,
                        data: data.ok_or(SnapshotError::Missing(T_F_DATA))?,
                    },
                );
            }
            T_CLIPBOARD => {
                let (&kind, text) = payload.split_first().ok_or(SnapshotError::Truncated)?;
                let text = utf8(tag, text)?;
                clipboard = Some(match kind {
                    0 => ClipboardContent::Empty,
                    1 => ClipboardContent::Text { text },
                    2 => ClipboardContent::Image { description: text },
                    v => {
                        return Err(SnapshotError::Invalid {
                            tag,
                            message: format!("clipboard kind {v}"),
                        })
                    }
                });
            }
            T_SETTINGS => {
                let (mut app, mut doc) = (None, None);
                for (t, p) in Reader::fields(payload)? {
                    match t {
                        T_S_APP => app = Some(utf8(t, p)?),
                        T_S_DOC => doc = Some(json_of(t, p)?),
                        other => return Err(SnapshotError::UnexpectedTag(other)),
                    }
                }
                settings.insert(
                    app.ok_or(SnapshotError::Missing(T_S_APP))?,
                    doc.ok_or(SnapshotError::Missing(T_S_DOC))?,
                );
            }
            T_COOKIE => {
                let (mut domain, mut name, mut value) = (None, None, None);
                for (t, p) in Reader::fields(payload)? {
                    match t {
                        T_C_DOMAIN => domain = Some(utf8(t, p)?),
                        T_C_NAME => name = Some(utf8(t, p)?),
                        T_C_VALUE => value = Some(utf8(t, p)?),
                        other => return Err(SnapshotError::UnexpectedTag(other)),
                    }
                }
                cookies.push(CookieRecord {
                    domain: domain.ok_or(SnapshotError::Missing(T_C_DOMAIN))?,
                    name: name.ok_or(SnapshotError::Missing(T_C_NAME))?,
                    value: value.ok_or(SnapshotError::Missing(T_C_VALUE))?,
                });
            }
            T_TIMER => timers.push(json_of(tag, payload)?),
            other => return Err(SnapshotError::UnexpectedTag(other)),
        }
    }

    Ok(DeviceState {
        windows,
        foreground,
        files,
        clipboard: clipboard.ok_or(SnapshotError::Missing(T_CLIPBOARD))?,
        settings,
        cookies,
        rng_seed: seed.ok_or(SnapshotError::Missing(T_SEED))?,
        tick: tick.ok_or(SnapshotError::Missing(T_TICK))?,
        timers,
        next_id: next_id.ok_or(SnapshotError::Missing(T_NEXT_ID))?,
    })
}
