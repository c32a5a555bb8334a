//! Canonical JSON text and content digests.
//!
//! Canonical form: UTF-8, LF line endings, two-space indent, object keys in
//! sorted order (optionally with a fixed key order at the top level), numbers
//! printed with the shortest round-tripping representation, and a single
//! trailing newline.

use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn to_canonical_string(value: &Value) -> String {
    to_canonical_string_with_order(value, &[])
}

/// Like [`to_canonical_string`], but top-level object keys listed in
/// `top_order` come first in that order; the rest follow sorted.
pub fn to_canonical_string_with_order(value: &Value, top_order: &[&str]) -> String {
    let mut out = String::new();
    match value {
        Value::Object(map) if !top_order.is_empty() => {
            let mut keys: Vec<&str> = top_order.iter().copied().filter(|k| map.contains_key(*k)).collect();
            let mut rest: Vec<&str> = map.keys().map(String::as_str).filter(|k| !top_order.contains(k)).collect();
            rest.sort_unstable();
            keys.extend(rest);
            write_object(&mut out, keys.into_iter().map(|k| (k, &map[k])), 0);
        }
        other => write_value(&mut out, other, 0),
    }
    out.push('\n');
    out
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_object<'a>(out: &mut String, entries: impl Iterator<Item = (&'a str, &'a Value)>, level: usize) {
    let entries: Vec<_> = entries.collect();
    if entries.is_empty() {
        out.push_str("{}");
        return;
    }
    out.push_str("{\n");
    for (i, (k, v)) in entries.iter().enumerate() {
        indent(out, level + 1);
        out.push_str(&Value::String((*k).to_string()).to_string());
        out.push_str(": ");
        write_value(out, v, level + 1);
        if i + 1 < entries.len() {
            out.push(',');
        }
        out.push('\n');
    }
    indent(out, level);
    out.push('}');
}

fn write_value(out: &mut String, value: &Value, level: usize) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort_unstable();
            write_object(out, keys.into_iter().map(|k| (k.as_str(), &map[k])), level);
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(out, level + 1);
                write_value(out, item, level + 1);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, level);
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable 64-bit seed derived from a base seed and a label. Independent of
/// host endianness and of scheduling.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
