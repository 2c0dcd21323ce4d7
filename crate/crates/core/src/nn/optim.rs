use serde::{Deserialize, Serialize};

use super::model::{Gradients, Model};
use super::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-7 }
    }
}

/// First and second moment estimates per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Gradients<T>,
    pub v: Gradients<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &Model<T>) -> Self {
        let zeros: Gradients<T> =
            model.layers.iter().map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect()).collect();
        AdamState { m: zeros.clone(), v: zeros, t: 0 }
    }
}

/// One bias-corrected Adam update:
/// `θ ← θ − lr · m̂ / (√v̂ + eps)`.
pub fn adam_step<T: Real>(model: &mut Model<T>, grads: &Gradients<T>, state: &mut AdamState<T>, lr: f64, cfg: &AdamConfig) {
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let corr1 = T::lit(1.0 - cfg.beta1.powi(t));
    let corr2 = T::lit(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::lit(lr), T::lit(cfg.eps));
    for (li, layer) in model.layers.iter_mut().enumerate() {
        for (pi, param) in layer.params.iter_mut().enumerate() {
            let g = grads[li][pi].data();
            let m = state.m[li][pi].data_mut();
            let v = state.v[li][pi].data_mut();
            for (k, p) in param.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + one_b1 * g[k];
                v[k] = b2 * v[k] + one_b2 * g[k] * g[k];
                let m_hat = m[k] / corr1;
                let v_hat = v[k] / corr2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig { factor: 0.1, patience: 10, min_delta: 1e-4, min_lr: 1e-7 }
    }
}

/// Learning-rate reduction on a stalled validation loss.
///
/// After `patience` epochs without an improvement of at least `min_delta`
/// the rate is multiplied by `factor` (floored at `min_lr`), followed by a
/// cooldown of `patience` epochs during which no stall is counted.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    cfg: PlateauConfig,
    best: f64,
    wait: usize,
    cooldown: usize,
}

impl PlateauScheduler {
    pub fn new(cfg: PlateauConfig) -> Self {
        PlateauScheduler { cfg, best: f64::INFINITY, wait: 0, cooldown: 0 }
    }

    /// Feeds one epoch's monitored value and returns the rate for the next epoch.
    pub fn step(&mut self, monitored: f64, lr: f64) -> f64 {
        if self.cooldown > 0 {
            self.cooldown -= 1;
            self.wait = 0;
        }
        if monitored < self.best - self.cfg.min_delta {
            self.best = monitored;
            self.wait = 0;
            return lr;
        }
        if self.cooldown > 0 {
            return lr;
        }
        self.wait += 1;
        if self.wait >= self.cfg.patience {
            let reduced = (lr * self.cfg.factor).max(self.cfg.min_lr);
            if reduced < lr {
                self.cooldown = self.cfg.patience;
                self.wait = 0;
                return reduced;
            }
        }
        lr
    }
}

/// Replays the plateau rule over a monitored-value history starting from
/// `initial_lr` and returns the rate after the last epoch.
pub fn reduce_lr_on_plateau(history: &[f64], cfg: &PlateauConfig, initial_lr: f64) -> f64 {
    let mut sched = PlateauScheduler::new(*cfg);
    history.iter().fold(initial_lr, |lr, &v| sched.step(v, lr))
}
