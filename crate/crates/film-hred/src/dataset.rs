//! Dialogue datasets stored as one JSON document per split:
//!
//! ```json
//! {"dialogs": [{"video_id": "v1", "caption": "...", "summary": "...",
//!               "dialog": [{"question": "...", "answer": "..."}]}]}
//! ```
//!
//! `summary` is optional. Unknown fields are ignored so adapted corpora can
//! keep extra annotations.

use std::fs;
use std::path::{Path, PathBuf};

use film_hred_core::data::{Dialogue, Turn, OFFICIAL_TURNS};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Split names, in the order they are looked up under a data root.
pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

#[derive(Serialize, Deserialize)]
struct RawFile {
    dialogs: Vec<RawDialog>,
}

#[derive(Serialize, Deserialize)]
struct RawDialog {
    video_id: String,
    caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    summary: Option<String>,
    dialog: Vec<RawTurn>,
}

#[derive(Serialize, Deserialize)]
struct RawTurn {
    question: String,
    answer: String,
}

/// `<root>/<split>.json`.
pub fn split_path(root: &Path, split: &str) -> PathBuf {
    root.join(format!("{split}.json"))
}

/// Parses one split. `file` only labels diagnostics.
pub fn parse_dataset(text: &str, file: &str) -> Result<Vec<Dialogue>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let inner = e.inner();
        Error::Schema {
            file: file.to_string(),
            at: e.path().to_string(),
            msg: format!("{} (line {}, column {})", strip_position(&inner.to_string()), inner.line(), inner.column()),
        }
    })?;
    let schema = |at: String, msg: &str| Error::Schema {
        file: file.to_string(),
        at,
        msg: msg.to_string(),
    };
    if raw.dialogs.is_empty() {
        return Err(schema("dialogs".into(), "empty dialogue list"));
    }
    raw.dialogs
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            if d.video_id.trim().is_empty() {
                return Err(schema(format!("dialogs[{i}].video_id"), "empty video id"));
            }
            if d.dialog.is_empty() {
                return Err(schema(format!("dialogs[{i}].dialog"), "dialogue has no turns"));
            }
            Ok(Dialogue {
                video_id: d.video_id,
                caption: d.caption,
                summary: d.summary,
                turns: d
                    .dialog
                    .into_iter()
                    .map(|t| Turn {
                        question: t.question,
                        answer: t.answer,
                    })
                    .collect(),
            })
        })
        .collect()
}

// serde_json appends " at line L column C"; the position is reported separately.
fn strip_position(msg: &str) -> &str {
    msg.rfind(" at line ").map_or(msg, |i| &msg[..i])
}

pub fn load_dataset(path: &Path) -> Result<Vec<Dialogue>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn to_json(dialogues: &[Dialogue]) -> String {
    let raw = RawFile {
        dialogs: dialogues
            .iter()
            .map(|d| RawDialog {
                video_id: d.video_id.clone(),
                caption: d.caption.clone(),
                summary: d.summary.clone(),
                dialog: d
                    .turns
                    .iter()
                    .map(|t| RawTurn {
                        question: t.question.clone(),
                        answer: t.answer.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&raw).expect("dataset serializes");
    s.push('\n');
    s
}

pub fn save_dataset(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    fs::write(path, to_json(dialogues)).map_err(|e| Error::io(path, e))
}

/// Every split file present under `root`, in [`SPLITS`] order.
pub fn load_splits(root: &Path) -> Result<Vec<(&'static str, Vec<Dialogue>)>> {
    let mut out = Vec::new();
    for split in SPLITS {
        let path = split_path(root, split);
        if path.exists() {
            out.push((split, load_dataset(&path)?));
        }
    }
    Ok(out)
}

/// One line per dialogue whose turn count differs from the official ten.
pub fn turn_count_warnings(dialogues: &[Dialogue]) -> Vec<String> {
    dialogues
        .iter()
        .filter(|d| d.turns.len() != OFFICIAL_TURNS)
        .map(|d| format!("dialogue {} has {} turns (official data has {OFFICIAL_TURNS})", d.video_id, d.turns.len()))
        .collect()
}
