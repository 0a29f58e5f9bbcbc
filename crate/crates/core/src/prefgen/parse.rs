//! Lenient extraction of a move list from model output.
//!
//! The first `[` that starts a syntactically valid JSON array wins; fences,
//! prose and trailing text around it are ignored. Entries must be objects with
//! a string `worker_id` and positive integer `to_line` / `to_stage`. Extra keys
//! (a per-move "reason", say) are allowed.

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::sim::{Action, Move, Station, WorkerId};

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("no JSON array found")]
    NoJsonArray,
    #[error("entry {index} of the array at byte {offset}: {reason}")]
    BadEntry {
        offset: usize,
        index: usize,
        reason: String,
    },
}

/// Byte offset and contents of the first JSON array in `text`.
pub fn find_json_array(text: &str) -> Option<(usize, Vec<Value>)> {
    for (offset, _) in text.match_indices('[') {
        let mut de = serde_json::Deserializer::from_str(&text[offset..]);
        if let Ok(Value::Array(items)) = serde::Deserialize::deserialize(&mut de) {
            return Some((offset, items));
        }
    }
    None
}

fn positive_index(entry: &serde_json::Map<String, Value>, key: &str) -> Result<usize, String> {
    match entry.get(key) {
        None => Err(format!("missing `{key}`")),
        Some(Value::Number(n)) => match n.as_u64() {
            Some(v) if v >= 1 => Ok(v as usize - 1),
            _ => Err(format!("`{key}` must be a positive integer, got {n}")),
        },
        Some(other) => Err(format!("`{key}` must be a positive integer, got {other}")),
    }
}

pub fn parse_action(text: &str) -> Result<Action, ParseError> {
    let (offset, items) = find_json_array(text).ok_or(ParseError::NoJsonArray)?;
    let mut moves = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let bad = |reason: String| ParseError::BadEntry { offset, index, reason };
        let Value::Object(entry) = item else {
            return Err(bad(format!("expected an object, got {item}")));
        };
        let worker_id = match entry.get("worker_id") {
            Some(Value::String(s)) => WorkerId(s.clone()),
            Some(other) => return Err(bad(format!("`worker_id` must be a string, got {other}"))),
            None => return Err(bad("missing `worker_id`".into())),
        };
        let line = positive_index(entry, "to_line").map_err(bad)?;
        let stage = positive_index(entry, "to_stage").map_err(bad)?;
        moves.push(Move {
            worker_id,
            to: Station::new(line, stage),
        });
    }
    Ok(Action { moves })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_array() {
        assert_eq!(parse_action("[]"), Ok(Action::noop()));
    }

    #[test]
    fn fenced_single_move() {
        let a = parse_action("```json\n[{\"worker_id\":\"w3\",\"to_line\":2,\"to_stage\":1}]\n```").unwrap();
        assert_eq!(a, Action::new(vec![Move::new("w3", Station::new(1, 0))]));
    }

    #[test]
    fn prose_without_array() {
        assert_eq!(parse_action("I would move nobody."), Err(ParseError::NoJsonArray));
    }

    #[test]
    fn invalid_bracket_is_skipped() {
        let a = parse_action("Move [w1] like so: [{\"worker_id\":\"w1\",\"to_line\":1,\"to_stage\":3}]").unwrap();
        assert_eq!(a.moves.len(), 1);
    }

    #[test]
    fn bad_entry_reports_position() {
        let e =
            parse_action("ok: [{\"worker_id\":\"w1\",\"to_line\":1,\"to_stage\":1}, {\"worker_id\":7}]").unwrap_err();
        assert!(
            matches!(
                e,
                ParseError::BadEntry {
                    offset: 4,
                    index: 1,
                    ..
                }
            ),
            "{e:?}"
        );
    }
}
