//! Corpus-level BLEU, ROUGE-L and CIDEr-D over tokenized segments.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One candidate and its references.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPair<T> {
    pub candidate: Vec<T>,
    pub references: Vec<Vec<T>>,
}

impl<T> EvalPair<T> {
    pub fn new(candidate: Vec<T>, references: Vec<Vec<T>>) -> Self {
        EvalPair { candidate, references }
    }
}

fn check_corpus<T>(pairs: &[EvalPair<T>]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::invalid("metric over an empty candidate corpus"));
    }
    if let Some(i) = pairs.iter().position(|p| p.references.is_empty()) {
        return Err(Error::invalid(format!("segment {i} has no references")));
    }
    Ok(())
}

type Counts<T> = BTreeMap<Vec<T>, usize>;

fn ngrams<T: Ord + Clone>(tokens: &[T], n: usize) -> Counts<T> {
    let mut out = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped n-gram matches and total candidate n-grams of one segment.
pub fn modified_precision<T: Ord + Clone>(candidate: &[T], references: &[Vec<T>], n: usize) -> (usize, usize) {
    let cand = ngrams(candidate, n);
    let mut max_ref: Counts<T> = BTreeMap::new();
    for r in references {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = cand
        .iter()
        .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, cand.values().sum())
}

/// Reference length closest to `c`, the shorter one on ties.
fn closest_ref_len<T>(c: usize, references: &[Vec<T>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// BLEU-1 through BLEU-`max_n`, without smoothing.
pub fn bleu<T: Ord + Clone>(pairs: &[EvalPair<T>], max_n: usize) -> Result<Vec<f64>> {
    check_corpus(pairs)?;
    if max_n == 0 {
        return Err(Error::invalid("BLEU order must be at least 1"));
    }
    let mut matched = alloc::vec![0usize; max_n];
    let mut total = alloc::vec![0usize; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for p in pairs {
        for n in 1..=max_n {
            let (m, t) = modified_precision(&p.candidate, &p.references, n);
            matched[n - 1] += m;
            total[n - 1] += t;
        }
        c += p.candidate.len();
        r += closest_ref_len(p.candidate.len(), &p.references);
    }
    if c == 0 {
        return Ok(alloc::vec![0.0; max_n]);
    }
    let bp = if c < r { libm::exp(1.0 - r as f64 / c as f64) } else { 1.0 };
    let mut out = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 1..=max_n {
        if matched[n - 1] == 0 {
            zero = true;
        } else {
            log_sum += libm::log(matched[n - 1] as f64 / total[n - 1] as f64);
        }
        out.push(if zero { 0.0 } else { bp * libm::exp(log_sum / n as f64) });
    }
    Ok(out)
}

fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut row = alloc::vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// LCS F-measure of one candidate against one reference.
pub fn rouge_l_pair<T: Eq>(candidate: &[T], reference: &[T]) -> f64 {
    let lcs = lcs_len(candidate, reference);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / candidate.len() as f64;
    let r = lcs as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Segment mean of the best F-measure over each segment's references.
pub fn rouge_l<T: Eq>(pairs: &[EvalPair<T>]) -> Result<f64> {
    check_corpus(pairs)?;
    let sum: f64 = pairs
        .iter()
        .map(|p| p.references.iter().map(|r| rouge_l_pair(&p.candidate, r)).fold(0.0, f64::max))
        .sum();
    Ok(sum / pairs.len() as f64)
}

pub const CIDER_SIGMA: f64 = 6.0;
const CIDER_N: usize = 4;

struct TfIdf<T> {
    vecs: [BTreeMap<Vec<T>, f64>; CIDER_N],
    norms: [f64; CIDER_N],
    len: usize,
}

fn tfidf<T: Ord + Clone>(tokens: &[T], df: &BTreeMap<Vec<T>, usize>, log_n: f64) -> TfIdf<T> {
    let mut vecs: [BTreeMap<Vec<T>, f64>; CIDER_N] = Default::default();
    let mut norms = [0.0; CIDER_N];
    for n in 1..=CIDER_N {
        for (g, tf) in ngrams(tokens, n) {
            let d = df.get(&g).copied().unwrap_or(0).max(1) as f64;
            let w = tf as f64 * (log_n - libm::log(d));
            norms[n - 1] += w * w;
            vecs[n - 1].insert(g, w);
        }
        norms[n - 1] = libm::sqrt(norms[n - 1]);
    }
    TfIdf { vecs, norms, len: tokens.len() }
}

fn cider_sim<T: Ord>(cand: &TfIdf<T>, reference: &TfIdf<T>) -> [f64; CIDER_N] {
    let delta = cand.len as f64 - reference.len as f64;
    let penalty = libm::exp(-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA));
    let mut out = [0.0; CIDER_N];
    for n in 0..CIDER_N {
        let mut dot = 0.0;
        for (g, &w) in &cand.vecs[n] {
            if let Some(&rw) = reference.vecs[n].get(g) {
                dot += w.min(rw) * rw;
            }
        }
        if cand.norms[n] != 0.0 && reference.norms[n] != 0.0 {
            dot /= cand.norms[n] * reference.norms[n];
        }
        out[n] = dot * penalty;
    }
    out
}

/// CIDEr-D per segment (document frequencies over the reference corpus) and
/// their mean. Needs at least two segments.
pub fn cider_d_segments<T: Ord + Clone>(pairs: &[EvalPair<T>]) -> Result<(f64, Vec<f64>)> {
    check_corpus(pairs)?;
    if pairs.len() < 2 {
        return Err(Error::invalid("CIDEr-D needs a corpus of at least 2 segments for document frequencies"));
    }
    let mut df: BTreeMap<Vec<T>, usize> = BTreeMap::new();
    for p in pairs {
        let mut seen = BTreeSet::new();
        for r in &p.references {
            for n in 1..=CIDER_N {
                seen.extend(ngrams(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let log_n = libm::log(pairs.len() as f64);
    let scores: Vec<f64> = pairs
        .iter()
        .map(|p| {
            let cand = tfidf(&p.candidate, &df, log_n);
            let mut acc = [0.0; CIDER_N];
            for r in &p.references {
                let sims = cider_sim(&cand, &tfidf(r, &df, log_n));
                acc.iter_mut().zip(sims).for_each(|(a, s)| *a += s);
            }
            let mean_n = acc.iter().sum::<f64>() / CIDER_N as f64;
            mean_n / p.references.len() as f64 * 10.0
        })
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Ok((mean, scores))
}

pub fn cider_d<T: Ord + Clone>(pairs: &[EvalPair<T>]) -> Result<f64> {
    cider_d_segments(pairs).map(|(m, _)| m)
}

/// `new / baseline - 1`.
pub fn relative_improvement(new: f64, baseline: f64) -> f64 {
    new / baseline - 1.0
}

/// BLEU-1..4, ROUGE-L and CIDEr-D of one corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider_d: f64,
}

impl MetricReport {
    pub fn compute<T: Ord + Clone>(pairs: &[EvalPair<T>]) -> Result<Self> {
        let b = bleu(pairs, 4)?;
        Ok(MetricReport {
            bleu: [b[0], b[1], b[2], b[3]],
            rouge_l: rouge_l(pairs)?,
            cider_d: cider_d(pairs)?,
        })
    }
}
