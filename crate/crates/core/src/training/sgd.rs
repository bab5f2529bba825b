use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, LAYER_NAMES};
use crate::Scalar;

/// Momentum SGD with L2 weight decay and a step learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// First epoch at which the rate is multiplied by `decay_factor`.
    pub decay_start: usize,
    /// Further decays happen every `decay_every` epochs after that.
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_start: 40,
            decay_every: 20,
            decay_factor: 0.1,
        }
    }
}

impl SgdConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.decay_start {
            return self.lr;
        }
        let steps = 1 + (epoch - self.decay_start) / self.decay_every.max(1);
        self.lr * self.decay_factor.powi(steps as i32)
    }
}

/// Velocity buffers, one per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T> {
    pub velocity: PolicyParams<T>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(params: &PolicyParams<T>) -> Self {
        let mut velocity = PolicyParams::zeros(params.n_interp, params.m);
        velocity.use_mask = params.use_mask;
        Self { velocity }
    }
}

/// `g ← g + wd·p`, `v ← μ·v + g`, `p ← p − lr(epoch)·v`.
pub fn sgd_step<T: Scalar>(
    params: &mut PolicyParams<T>,
    grads: &PolicyParams<T>,
    state: &mut SgdState<T>,
    cfg: &SgdConfig,
    epoch: usize,
) -> Result<()> {
    if grads.shapes() != params.shapes() || state.velocity.shapes() != params.shapes() {
        return Err(Error::Shape("gradient or velocity does not match parameters".into()));
    }
    for (name, g) in LAYER_NAMES.iter().zip(grads.tensors()) {
        if let Some(pos) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                message: format!("non-finite gradient in {name} at element {pos}"),
            });
        }
    }
    let lr = T::of(cfg.lr_at(epoch));
    let mu = T::of(cfg.momentum);
    let wd = T::of(cfg.weight_decay);
    let grads = grads.tensors();
    for ((p, v), g) in params
        .tensors_mut()
        .into_iter()
        .zip(state.velocity.tensors_mut())
        .zip(grads)
    {
        for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
            let g = g + wd * *p;
            *v = mu * *v + g;
            *p -= lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(n_interp: usize, m: usize) -> PolicyParams<f64> {
        let mut p = PolicyParams::zeros(n_interp, m);
        for t in p.tensors_mut() {
            t.iter_mut().for_each(|x| *x = 1.0);
        }
        p
    }

    #[test]
    fn schedule_steps() {
        let cfg = SgdConfig::default();
        assert_eq!(cfg.lr_at(0), 1e-3);
        assert_eq!(cfg.lr_at(39), 1e-3);
        assert!((cfg.lr_at(40) - 1e-4).abs() < 1e-18);
        assert!((cfg.lr_at(59) - 1e-4).abs() < 1e-18);
        assert!((cfg.lr_at(60) - 1e-5).abs() < 1e-18);
    }

    #[test]
    fn decay_only_step() {
        let mut p = ones(3, 1);
        let g = PolicyParams::zeros(3, 1);
        let mut st = SgdState::new(&p);
        sgd_step(&mut p, &g, &mut st, &SgdConfig::default(), 0).unwrap();
        assert!(p.flatten().iter().all(|&x| (x - 0.9999995).abs() < 1e-15));
    }

    #[test]
    fn vanilla_descent() {
        let mut p = ones(3, 1);
        let mut g = PolicyParams::zeros(3, 1);
        g.fc3_b[0] = 2.0;
        let cfg = SgdConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            ..SgdConfig::default()
        };
        let mut st = SgdState::new(&p);
        sgd_step(&mut p, &g, &mut st, &cfg, 0).unwrap();
        assert_eq!(p.fc3_b[0], 1.0 - 1e-3 * 2.0);
        assert_eq!(p.fc3_b[1], 1.0);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = ones(3, 1);
        let mut g = PolicyParams::zeros(3, 1);
        g.fc1_w[2] = f64::NAN;
        let mut st = SgdState::new(&p);
        let err = sgd_step(&mut p, &g, &mut st, &SgdConfig::default(), 7).unwrap_err();
        assert!(matches!(err, Error::Diverged { epoch: 7, .. }));
        assert!(err.to_string().contains("fc1"));
    }
}
