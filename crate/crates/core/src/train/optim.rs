use super::OptimizerConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `peak · min(step / warmup, √(warmup / step))` for `step ≥ 1`.
pub fn learning_rate(step: u64, peak: f64, warmup: u64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    peak * (s / w).min((w / s).sqrt())
}

/// Global L2 norm over all tensors.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: OptimizerConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: OptimizerConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows(), p.cols())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Learning rate the next step will use.
    pub fn next_lr(&self) -> f64 {
        learning_rate(self.step + 1, self.config.peak_lr, self.config.warmup_steps)
    }

    /// Clips, then applies one update. Returns `(lr, pre-clip norm)`.
    pub fn step(&mut self, params: &mut [Tensor], mut grads: Vec<Tensor>) -> Result<(f64, f64)> {
        if grads.len() != params.len() || params.len() != self.m.len() {
            return Err(Error::shape("Adam::step", "parameter and gradient counts differ"));
        }
        let norm = clip_global_norm(&mut grads, self.config.clip_norm);
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("gradient norm is {norm}")));
        }
        self.step += 1;
        let c = &self.config;
        let lr = learning_rate(self.step, c.peak_lr, c.warmup_steps);
        let bc1 = 1.0 - c.beta1.powf(self.step as f64);
        let bc2 = 1.0 - c.beta2.powf(self.step as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            for (mj, gj) in m.iter_mut().zip(g) {
                *mj = c.beta1 * *mj + (1.0 - c.beta1) * gj;
            }
            let v = self.v[i].data_mut();
            for (vj, gj) in v.iter_mut().zip(g) {
                *vj = c.beta2 * *vj + (1.0 - c.beta2) * gj * gj;
            }
            let (m, v) = (self.m[i].data(), self.v[i].data());
            for (j, pj) in p.data_mut().iter_mut().enumerate() {
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                *pj -= lr * mh / (vh.sqrt() + c.epsilon);
            }
        }
        Ok((lr, norm))
    }
}
