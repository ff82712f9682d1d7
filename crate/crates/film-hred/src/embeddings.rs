//! GloVe-style text embeddings: one `token v1 ... vd` line per word.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use film_hred_core::vocab::Vocabulary;
use film_hred_core::{ParamId, ParamSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Width of the published GloVe vectors used by default.
pub const GLOVE_DIM: usize = 300;
/// Out-of-vocabulary rows are drawn from `uniform(-OOV_RANGE, OOV_RANGE)`.
pub const OOV_RANGE: f64 = 0.08;

/// Initial embedding matrix for a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingInit {
    pub dim: usize,
    /// Row-major `[vocab, dim]`.
    pub rows: Vec<f64>,
    /// Whether each vocabulary row came from the file.
    pub found: Vec<bool>,
}

impl EmbeddingInit {
    pub fn hits(&self) -> usize {
        self.found.iter().filter(|f| **f).count()
    }

    /// Fraction of vocabulary entries found in the file.
    pub fn coverage(&self) -> f64 {
        self.hits() as f64 / self.found.len() as f64
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.rows[i..i + self.dim]
    }

    /// Copies the matrix into the embedding parameter `table`.
    pub fn apply(&self, params: &mut ParamSet, table: ParamId) -> Result<()> {
        let t = params.get_mut(table);
        let want = [self.found.len(), self.dim];
        if t.shape().dims() != want {
            return Err(Error::Config(format!(
                "embedding table is {:?}, the loaded vectors are {want:?}; set embed_dim = {}",
                t.shape().dims(),
                self.dim
            )));
        }
        t.data_mut().copy_from_slice(&self.rows);
        Ok(())
    }
}

/// Reads vectors for `vocab` from `reader`. `expected_dim` fixes the width
/// (`None` takes it from the first line). Missing words get seeded random
/// rows.
pub fn read_embeddings<R: BufRead>(reader: R, file: &str, vocab: &Vocabulary, expected_dim: Option<usize>, seed: u64) -> Result<EmbeddingInit> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        file: file.to_string(),
        line,
        msg,
    };
    let mut dim = expected_dim;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(file, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(parse_err(line_no, format!("expected {d} values after {token:?}, found {}", values.len())));
        }
        let Some(id) = vocab.get(token) else { continue };
        if rows[id as usize].is_some() {
            continue;
        }
        let parsed = values
            .iter()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| parse_err(line_no, format!("non-numeric or non-finite value in the vector of {token:?}")))?;
        rows[id as usize] = Some(parsed);
    }
    let dim = dim.ok_or_else(|| parse_err(0, "no vectors in file".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = EmbeddingInit {
        dim,
        rows: Vec::with_capacity(vocab.len() * dim),
        found: Vec::with_capacity(vocab.len()),
    };
    for row in rows {
        out.found.push(row.is_some());
        match row {
            Some(r) => out.rows.extend(r),
            None => out.rows.extend((0..dim).map(|_| rng.gen_range(-OOV_RANGE..OOV_RANGE))),
        }
    }
    Ok(out)
}

pub fn load_embeddings(path: &Path, vocab: &Vocabulary, expected_dim: Option<usize>, seed: u64) -> Result<EmbeddingInit> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(f), &path.display().to_string(), vocab, expected_dim, seed)
}
