//! AMSGrad.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmsgradConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AmsgradConfig {
    fn default() -> Self {
        AmsgradConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AmsgradConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} = {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps must be positive"));
        }
        Ok(())
    }
}

/// Per-parameter moments. Updates follow
/// `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`, `vhat = max(vhat, v)`,
/// `theta -= lr m / (sqrt(vhat) + eps)`, without bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AmsgradState {
    pub config: AmsgradConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub v_hat: Vec<Vec<f64>>,
    pub steps: u64,
}

impl AmsgradState {
    pub fn new(config: AmsgradConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| alloc::vec![0.0; t.numel()]).collect();
        Ok(AmsgradState {
            config,
            m: zeros.clone(),
            v: zeros.clone(),
            v_hat: zeros,
            steps: 0,
        })
    }

    /// Applies one update from the gradients stored in `params`. Tensors
    /// without gradients (frozen) are left untouched. Fails without changing
    /// anything if a gradient is not finite.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::invalid("optimizer state does not match the parameter set"));
        }
        for (name, t) in params.iter() {
            if let Some(g) = t.grad() {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        what: format!("gradient of {name}"),
                    });
                }
            }
        }
        let AmsgradConfig { lr, beta1, beta2, eps } = self.config;
        for (i, t) in params.tensors_mut().enumerate() {
            if !t.requires_grad {
                continue;
            }
            let Some(g) = t.grad().map(<[f64]>::to_vec) else { continue };
            let (m, v, vh) = (&mut self.m[i], &mut self.v[i], &mut self.v_hat[i]);
            for (j, theta) in t.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                vh[j] = vh[j].max(v[j]);
                *theta -= lr * m[j] / (libm::sqrt(vh[j]) + eps);
            }
        }
        self.steps += 1;
        Ok(())
    }
}
