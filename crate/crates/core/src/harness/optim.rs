//! Adam with decoupled weight decay, the cosine schedule and early stopping.

use std::f64::consts::PI;

use crate::params::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update of a scalar at step `t` (1-based).
///
/// Weight decay shrinks `θ` by `lr·wd·θ` before the moment update.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(theta: &mut f64, g: f64, m: &mut f64, v: &mut f64, t: u64, lr: f64, wd: f64, cfg: &AdamConfig) {
    *theta -= lr * wd * *theta;
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let m_hat = *m / (1.0 - cfg.beta1.powi(t as i32));
    let v_hat = *v / (1.0 - cfg.beta2.powi(t as i32));
    *theta -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
}

/// Moment buffers for every entry of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<F: Real>(store: &ParamStore<F>, cfg: AdamConfig) -> Self {
        let zeros = || store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect::<Vec<_>>();
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies `grads` (one per store entry, store order); frozen entries are skipped.
    pub fn step<F: Real>(&mut self, store: &mut ParamStore<F>, grads: &[Vec<f64>], lr: f64, weight_decay: f64) {
        assert_eq!(grads.len(), store.len(), "one gradient per parameter");
        self.step += 1;
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            if !store.is_trainable(id) {
                continue;
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, p) in store.get_mut(id).data_mut().iter_mut().enumerate() {
                let mut theta = p.as_f64();
                adam_update(&mut theta, grads[k][i], &mut m[i], &mut v[i], self.step, lr, weight_decay, &self.cfg);
                *p = F::lit(theta);
            }
        }
    }
}

/// `lr0·(1 + cos(π·epoch/max_epochs))/2`.
pub fn cosine_lr(epoch: usize, max_epochs: usize, lr0: f64) -> f64 {
    if max_epochs == 0 {
        return lr0;
    }
    lr0 * (1.0 + (PI * epoch as f64 / max_epochs as f64).cos()) / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    pub patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        let (mut theta, mut m, mut v) = (1.0, 0.0, 0.0);
        adam_update(&mut theta, 0.3, &mut m, &mut v, 1, 0.01, 0.0, &cfg);
        let expected = 1.0 - 0.01 * 0.3 / (0.3 + 1e-8);
        assert!((theta - expected).abs() < 1e-15);
        assert!((theta - 0.99).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_cases() {
        let cfg = AdamConfig::default();
        let (mut theta, mut m, mut v) = (2.0, 0.0, 0.0);
        adam_update(&mut theta, 0.0, &mut m, &mut v, 1, 0.1, 0.0, &cfg);
        assert_eq!(theta, 2.0);
        adam_update(&mut theta, 0.0, &mut m, &mut v, 2, 0.1, 0.5, &cfg);
        assert!((theta - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn store_step_skips_frozen() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::ones([2]));
        let b = store.add_frozen("b", Tensor::ones([2]));
        let mut adam = Adam::new(&store, AdamConfig::default());
        adam.step(&mut store, &[vec![1.0, -1.0], vec![1.0, 1.0]], 0.1, 0.0);
        assert!(store.get(a).data()[0] < 1.0 && store.get(a).data()[1] > 1.0);
        assert_eq!(store.get(b).data(), &[1.0, 1.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 10, 0.5), 0.5);
        assert!((cosine_lr(5, 10, 0.5) - 0.25).abs() < 1e-15);
        assert!(cosine_lr(10, 10, 0.5).abs() < 1e-15);
        assert!(cosine_lr(9, 10, 0.5) > 0.0);
    }

    #[test]
    fn patience_one_stops_on_second_epoch() {
        let mut s = EarlyStopper::new(1);
        assert_eq!(s.update(0, 0.5), StopDecision::Improved);
        assert_eq!(s.update(1, 0.5), StopDecision::Stop);
        assert_eq!(s.best_epoch(), 0);
    }
}
