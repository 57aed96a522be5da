use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, NetworkParameters};

/// Optimisation settings shared by the coarse and fine stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub max_iters: u64,
    /// Multiplicative learning-rate decay applied every `decay_every` steps.
    pub decay: f64,
    pub decay_every: u64,
    /// Samples per step; gradients are averaged over the batch.
    pub batch_size: usize,
    /// Edge length of training patches (fine stage) or of the resized volume
    /// (coarse stage).
    pub patch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Include the uncertainty term in the objective.
    pub uncertainty: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            max_iters: 500,
            decay: 0.99,
            decay_every: 500,
            batch_size: 1,
            patch_size: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            uncertainty: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("train: {m}")));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 = {} must be positive", self.lr0));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad(format!("decay = {} must lie in (0, 1]", self.decay));
        }
        if self.max_iters == 0 || self.decay_every == 0 || self.batch_size == 0 || self.patch_size == 0 {
            return bad("max_iters, decay_every, batch_size and patch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam moments must lie in [0, 1) and eps must be positive".into());
        }
        let m = model.size_multiple();
        if !self.patch_size.is_multiple_of(m) {
            return bad(format!("patch_size = {} is not a multiple of {m}", self.patch_size));
        }
        Ok(())
    }
}

/// Step-decayed learning rate `lr0 · decay^⌊step / decay_every⌋`.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    let k = (step / cfg.decay_every) as i32;
    cfg.lr0 * cfg.decay.powi(k)
}

/// Adam with bias correction; moments kept in `f32` like the parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    m: NetworkParameters<f32>,
    v: NetworkParameters<f32>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(params: &NetworkParameters<f32>, cfg: &TrainConfig) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
        }
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut NetworkParameters<f32>, grads: &NetworkParameters<f32>, lr: f64) -> Result<()> {
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr * c2.sqrt() / c1) as f32;
        let eps = (self.eps * c2.sqrt()) as f32;
        for (((name, p), (_, m)), (_, v)) in params.iter_mut().zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            let g = grads.get(name)?;
            if g.shape() != p.shape() {
                return Err(Error::ShapeMismatch(format!("gradient of {name} has shape {:?}", g.shape())));
            }
            for (((p, m), v), &g) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step * *m / (v.sqrt() + eps);
            }
        }
        Ok(())
    }
}
