//! AdamW with decoupled weight decay and a cosine learning-rate schedule.

use crate::error::{Result, TensorError};
use crate::graph::Graph;
use crate::params::ParamStore;
use crate::real::Real;

/// `lr(t) = lr_min + ½(lr_max − lr_min)(1 + cos(π·t/T))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(lr_max: f64, lr_min: f64, total_steps: u64) -> Result<Self> {
        if !(lr_min >= 0.0 && lr_max >= lr_min && lr_max.is_finite()) {
            return Err(TensorError::Config(format!(
                "learning rates must satisfy 0 <= lr_min <= lr_max, got {lr_min} and {lr_max}"
            )));
        }
        if total_steps == 0 {
            return Err(TensorError::Config("schedule needs at least one step".into()));
        }
        Ok(CosineSchedule {
            lr_max,
            lr_min,
            total_steps,
        })
    }

    pub fn lr(&self, step: u64) -> f64 {
        let t = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr_min + 0.5 * (self.lr_max - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment buffers and step counters, one slot per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<T> {
    pub step: u64,
    pub param_steps: Vec<u64>,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub schedule: CosineSchedule,
    state: AdamWState<T>,
}

impl<T: Real> AdamW<T> {
    pub fn new(store: &ParamStore<T>, config: AdamWConfig, schedule: CosineSchedule) -> Self {
        let m: Vec<Vec<T>> = store.iter().map(|(_, _, t)| vec![T::zero(); t.numel()]).collect();
        AdamW {
            config,
            schedule,
            state: AdamWState {
                step: 0,
                param_steps: vec![0; m.len()],
                v: m.clone(),
                m,
            },
        }
    }

    pub fn with_state(
        store: &ParamStore<T>,
        config: AdamWConfig,
        schedule: CosineSchedule,
        state: AdamWState<T>,
    ) -> Result<Self> {
        let ok = state.m.len() == store.len()
            && state.v.len() == store.len()
            && state.param_steps.len() == store.len()
            && store
                .iter()
                .all(|(id, _, t)| state.m[id.index()].len() == t.numel() && state.v[id.index()].len() == t.numel());
        if !ok {
            return Err(TensorError::dim("adamw", "optimizer state does not match parameters"));
        }
        Ok(AdamW { config, schedule, state })
    }

    pub fn state(&self) -> &AdamWState<T> {
        &self.state
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr(self.state.step)
    }

    /// Apply one update from the gradients of `graph`'s last backward pass.
    /// Parameters the pass did not reach, and frozen ones, are left untouched.
    /// Returns the learning rate used.
    pub fn step(&mut self, store: &mut ParamStore<T>, graph: &Graph<T>) -> Result<f64> {
        if self.state.step >= self.schedule.total_steps {
            return Err(TensorError::Contract(format!(
                "optimizer already took all {} scheduled steps",
                self.schedule.total_steps
            )));
        }
        let lr = self.current_lr();
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        for (id, grad, reached) in graph.param_grads() {
            let (Some(grad), true) = (grad, reached) else { continue };
            let param = store.get_mut(id);
            if !param.requires_grad() {
                continue;
            }
            if grad.len() != param.numel() {
                return Err(TensorError::dim("adamw", format!("gradient of {} for {} values", grad.len(), param.numel())));
            }
            let k = id.index();
            self.state.param_steps[k] += 1;
            let t = self.state.param_steps[k] as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let (m, v) = (&mut self.state.m[k], &mut self.state.v[k]);
            for (((p, &gv), mi), vi) in param.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gf = gv.f64();
                let mut pf = p.f64();
                pf -= lr * weight_decay * pf;
                let mf = beta1 * mi.f64() + (1.0 - beta1) * gf;
                let vf = beta2 * vi.f64() + (1.0 - beta2) * gf * gf;
                pf -= lr * (mf / bc1) / ((vf / bc2).sqrt() + eps);
                *mi = T::c(mf);
                *vi = T::c(vf);
                *p = T::c(pf);
            }
        }
        self.state.step += 1;
        Ok(lr)
    }
}
