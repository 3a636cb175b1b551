//! AdamW with decoupled weight decay and the 1cycle learning-rate policy.

use std::f64::consts::PI;

use super::{EmbedderParams, Gradients};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Gradients,
    pub v: Gradients,
    pub hyper: AdamWConfig,
}

impl OptimizerState {
    pub fn new(params: &EmbedderParams, hyper: AdamWConfig) -> Self {
        Self {
            step: 0,
            m: params.zero_grads(),
            v: params.zero_grads(),
            hyper,
        }
    }
}

/// One AdamW update in place:
///
/// ```text
/// m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
/// theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
/// ```
pub fn adamw_step(
    params: &mut EmbedderParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::OutOfRange(format!("learning rate must be positive, got {lr}")));
    }
    let tensors = params.tensors_mut();
    if grads.len() != tensors.len()
        || grads.iter().zip(tensors.iter()).any(|(g, t)| g.len() != t.data.len())
        || state.m.len() != tensors.len()
    {
        return Err(Error::ShapeMismatch("gradients do not match parameters".into()));
    }
    let h = state.hyper;
    state.step += 1;
    let bc1 = 1.0 - h.beta1.powi(state.step as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step as i32);
    for (((tensor, g), m), v) in tensors.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..tensor.data.len() {
            m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
            v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let theta = tensor.data[i];
            tensor.data[i] = theta - lr * (m_hat / (v_hat.sqrt() + h.eps) + h.weight_decay * theta);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LRSchedule {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div: f64,
    pub final_div: f64,
}

impl Default for LRSchedule {
    fn default() -> Self {
        Self {
            max_lr: 1e-3,
            total_steps: 1000,
            pct_start: 0.3,
            div: 25.0,
            final_div: 1e4,
        }
    }
}

impl LRSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return Err(Error::InvalidConfig(format!("pct_start must lie in (0, 1), got {}", self.pct_start)));
        }
        if self.total_steps < 2 {
            return Err(Error::InvalidConfig(format!("total_steps must be at least 2, got {}", self.total_steps)));
        }
        for (name, v) in [("max_lr", self.max_lr), ("div", self.div), ("final_div", self.final_div)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

fn cosine(start: f64, end: f64, frac: f64) -> f64 {
    end + (start - end) * 0.5 * (1.0 + (PI * frac).cos())
}

/// 1cycle learning rate at step `t`: cosine warm-up from `max_lr / div` to
/// `max_lr` over the first `pct_start * total_steps` steps, then cosine
/// annealing down to `max_lr / final_div` at the last step.
pub fn onecycle_lr(sched: &LRSchedule, t: usize) -> Result<f64> {
    sched.validate()?;
    if t >= sched.total_steps {
        return Err(Error::OutOfRange(format!(
            "step {t} outside 0..{}",
            sched.total_steps
        )));
    }
    let initial = sched.max_lr / sched.div;
    let min = sched.max_lr / sched.final_div;
    let peak = sched.pct_start * sched.total_steps as f64;
    let last = (sched.total_steps - 1) as f64;
    let t = t as f64;
    Ok(if t <= peak {
        cosine(initial, sched.max_lr, t / peak)
    } else {
        cosine(sched.max_lr, min, ((t - peak) / (last - peak)).min(1.0))
    })
}
