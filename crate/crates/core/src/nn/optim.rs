//! AdamW with decoupled weight decay and optional AMSGrad, plus the
//! cosine-annealing-with-warm-restarts learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::param::Module;
use super::tensor::Scalar;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub amsgrad: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            amsgrad: false,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    /// Running maximum of `v`; empty unless AMSGrad is on.
    pub v_max: Vec<T>,
}

impl<T: Scalar> MomentState<T> {
    pub fn new(len: usize, amsgrad: bool) -> Self {
        MomentState {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            v_max: if amsgrad { vec![T::zero(); len] } else { Vec::new() },
        }
    }
}

/// One AdamW update of a single tensor. `step` is 1-based.
pub fn adamw_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    state: &mut MomentState<T>,
    step: u64,
    lr: f64,
    cfg: &AdamWConfig,
) {
    assert_eq!(param.len(), grad.len());
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2_sqrt = (1.0 - cfg.beta2.powi(step as i32)).sqrt();
    let step_size = T::of(lr / bc1);
    let decay = T::of(1.0 - lr * cfg.weight_decay);
    let eps = T::of(cfg.eps);
    let bc2_sqrt = T::of(bc2_sqrt);
    let MomentState { m, v, v_max } = state;
    let updates = param.iter_mut().zip(grad).zip(m.iter_mut().zip(v.iter_mut()));
    if cfg.amsgrad {
        for (((p, &g), (m, v)), vm) in updates.zip(v_max.iter_mut()) {
            *p *= decay;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *vm = vm.max(*v);
            *p -= step_size * *m / (vm.sqrt() / bc2_sqrt + eps);
        }
    } else {
        for ((p, &g), (m, v)) in updates {
            *p *= decay;
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() / bc2_sqrt + eps);
        }
    }
}

/// Optimizer state for a whole module, in parameter visitation order.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub cfg: AdamWConfig,
    pub step: u64,
    pub states: Vec<MomentState<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(module: &impl Module<T>, cfg: AdamWConfig) -> Self {
        let mut states = Vec::new();
        module.visit("", &mut |_, p| states.push(MomentState::new(p.len(), cfg.amsgrad)));
        AdamW { cfg, step: 0, states }
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, module: &mut impl Module<T>, lr: f64) -> Result<()> {
        self.step += 1;
        let mut i = 0;
        let mut bad = None;
        let (step, cfg) = (self.step, self.cfg);
        let states = &mut self.states;
        module.visit_mut("", &mut |name, p| {
            if bad.is_none() && p.grad.iter().any(|g| !g.is_finite()) {
                bad = Some(name.to_string());
            }
            adamw_update(&mut p.value, &p.grad, &mut states[i], step, lr, &cfg);
            i += 1;
        });
        match bad {
            Some(name) => Err(Error::Numerical(format!("non-finite gradient in {name}"))),
            None => Ok(()),
        }
    }
}

/// Cosine annealing with warm restarts, driven by (possibly fractional)
/// epoch position `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub eta_min: f64,
    pub t0: f64,
    pub t_mult: f64,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.eta_min && self.eta_min <= self.lr0) || self.t0 < 1.0 || self.t_mult < 1.0 {
            return Err(Error::invalid(format!("invalid schedule {self:?}")));
        }
        Ok(())
    }

    pub fn lr_at(&self, t: f64) -> f64 {
        cosine_warm_restarts(t, self)
    }
}

pub fn cosine_warm_restarts(t: f64, s: &LrSchedule) -> f64 {
    let t = t.max(0.0);
    let mut cycle_len = s.t0;
    let mut t_cur = t;
    if s.t_mult == 1.0 {
        t_cur = t % s.t0;
    } else {
        while t_cur >= cycle_len {
            t_cur -= cycle_len;
            cycle_len *= s.t_mult;
        }
    }
    s.eta_min + (s.lr0 - s.eta_min) * (1.0 + (std::f64::consts::PI * t_cur / cycle_len).cos()) / 2.0
}
