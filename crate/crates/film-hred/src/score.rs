//! Answer files (`segment_id<TAB>answer`) and corpus scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use film_hred_core::data::Dialogue;
use film_hred_core::metrics::{relative_improvement, EvalPair, MetricReport};
use film_hred_core::vocab::tokenize;

use crate::error::{Error, Result};

/// Segment id of turn `turn` (0-based) of a dialogue.
pub fn segment_id(video_id: &str, turn: usize) -> String {
    format!("{video_id}#{turn}")
}

pub fn parse_tsv(text: &str, file: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (id, answer) = l.split_once('\t').ok_or_else(|| Error::Parse {
                file: file.to_string(),
                line: i + 1,
                msg: "expected segment_id<TAB>text".into(),
            })?;
            Ok((id.to_string(), answer.to_string()))
        })
        .collect()
}

pub fn read_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, &path.display().to_string())
}

pub fn to_tsv(rows: &[(String, String)]) -> String {
    let mut s = String::new();
    for (id, text) in rows {
        let _ = writeln!(s, "{id}\t{text}");
    }
    s
}

/// References keyed by segment id. Repeated ids add references.
pub fn group_references(rows: &[(String, String)]) -> BTreeMap<String, Vec<String>> {
    let mut refs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (id, text) in rows {
        refs.entry(id.clone()).or_default().push(text.clone());
    }
    refs
}

/// Ground-truth answers of every turn as references.
pub fn dialogue_references(dialogues: &[Dialogue]) -> BTreeMap<String, Vec<String>> {
    let mut refs = BTreeMap::new();
    for d in dialogues {
        for (i, t) in d.turns.iter().enumerate() {
            refs.insert(segment_id(&d.video_id, i), vec![t.answer.clone()]);
        }
    }
    refs
}

/// Pairs candidates with references. The two id sets must agree exactly;
/// otherwise the error lists every offending id.
pub fn align(candidates: &[(String, String)], references: &BTreeMap<String, Vec<String>>) -> Result<Vec<EvalPair<String>>> {
    let mut seen = BTreeSet::new();
    let mut problems = Vec::new();
    let dup: Vec<&str> = candidates.iter().filter(|(id, _)| !seen.insert(id.as_str())).map(|(id, _)| id.as_str()).collect();
    if !dup.is_empty() {
        problems.push(format!("repeated in candidates: {}", dup.join(", ")));
    }
    let extra: Vec<&str> = seen.iter().copied().filter(|id| !references.contains_key(*id)).collect();
    if !extra.is_empty() {
        problems.push(format!("not in references: {}", extra.join(", ")));
    }
    let missing: Vec<&str> = references.keys().map(String::as_str).filter(|id| !seen.contains(id)).collect();
    if !missing.is_empty() {
        problems.push(format!("missing from candidates: {}", missing.join(", ")));
    }
    if !problems.is_empty() {
        return Err(Error::IdMismatch(problems));
    }
    let mut sorted: Vec<&(String, String)> = candidates.iter().collect();
    sorted.sort();
    Ok(sorted
        .into_iter()
        .map(|(id, text)| EvalPair::new(tokenize(text), references[id].iter().map(|r| tokenize(r)).collect()))
        .collect())
}

pub fn score_run(candidates: &[(String, String)], references: &BTreeMap<String, Vec<String>>) -> Result<MetricReport> {
    Ok(MetricReport::compute(&align(candidates, references)?)?)
}

const NAMES: [&str; 6] = ["Bleu_1", "Bleu_2", "Bleu_3", "Bleu_4", "ROUGE_L", "CIDEr"];

fn values(r: &MetricReport) -> [f64; 6] {
    [r.bleu[0], r.bleu[1], r.bleu[2], r.bleu[3], r.rouge_l, r.cider_d]
}

/// One `metric<TAB>value` line per metric, six decimals.
pub fn format_report(r: &MetricReport) -> String {
    let mut s = String::new();
    for (n, v) in NAMES.iter().zip(values(r)) {
        let _ = writeln!(s, "{n}\t{v:.6}");
    }
    s
}

/// `metric<TAB>model<TAB>baseline<TAB>relative` lines.
pub fn format_comparison(model: &MetricReport, baseline: &MetricReport) -> String {
    let mut s = String::new();
    for ((n, a), b) in NAMES.iter().zip(values(model)).zip(values(baseline)) {
        let rel = if b == 0.0 { "inf".to_string() } else { format!("{:+.6}", relative_improvement(a, b)) };
        let _ = writeln!(s, "{n}\t{a:.6}\t{b:.6}\t{rel}");
    }
    s
}
