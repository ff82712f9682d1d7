//! Central finite-difference validation of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::ParamSet;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates per tensor (chosen at random);
    /// `None` checks every coordinate.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_error() < tol
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

/// `|a - n| / max(1, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1.0, analytic.abs() + numeric.abs())
}

/// Compares the tape's gradient of `loss` against central differences
/// `(f(θ+ε) - f(θ-ε)) / 2ε` for every trainable tensor in `params`.
///
/// `loss` must be deterministic: it is evaluated once on a recording tape and
/// twice per checked coordinate on inference tapes.
pub fn finite_difference_check<F>(params: &ParamSet, mut loss: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new(params);
        let l = loss(&mut tape)?;
        tape.backward(l)?
    };

    let eval = |loss: &mut F, p: &ParamSet| -> Result<f64> {
        let mut tape = Tape::inference(p);
        let l = loss(&mut tape)?;
        let v = tape.scalar(l);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { what: "finite-difference objective".into() })
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport::default();
    for id in params.ids() {
        let tensor = params.get(id);
        if !tensor.requires_grad {
            continue;
        }
        let n = tensor.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let analytic = grads.param(id);
        let mut worst = 0.0f64;
        for &i in &coords {
            let orig = tensor.data()[i];
            work.get_mut(id).data_mut()[i] = orig + opts.eps;
            let plus = eval(&mut loss, &work)?;
            work.get_mut(id).data_mut()[i] = orig - opts.eps;
            let minus = eval(&mut loss, &work)?;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.map_or(0.0, |g| g[i]);
            worst = worst.max(relative_error(a, numeric));
        }
        report.entries.push(GradCheckEntry {
            name: params.name(id).into(),
            max_rel_error: worst,
            checked: coords.len(),
        });
    }
    Ok(report)
}
