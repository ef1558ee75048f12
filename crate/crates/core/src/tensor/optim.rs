//! AdamW with decoupled weight decay, and the warmup + cosine learning-rate
//! schedule.

use super::{Scalar, TensorData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// Per-parameter first/second moments plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamWState<T> {
    pub cfg: AdamWConfig,
    pub m: Vec<TensorData<T>>,
    pub v: Vec<TensorData<T>>,
    pub t: usize,
}

impl<T: Scalar> AdamWState<T> {
    pub fn new(cfg: AdamWConfig, param_shapes: &[Vec<usize>]) -> Self {
        let m = param_shapes.iter().map(|s| TensorData::zeros(s.clone())).collect();
        let v = param_shapes.iter().map(|s| TensorData::zeros(s.clone())).collect();
        AdamWState { cfg, m, v, t: 0 }
    }

    /// One AdamW step over the given (parameter index, gradient) pairs.
    ///
    /// Parameters not listed keep their moments and values untouched, so a
    /// parameter with no path to the loss stays bitwise frozen. Gradients are
    /// consumed by this call; the caller discards its tape afterwards.
    pub fn step(
        &mut self,
        params: &mut [TensorData<T>],
        updates: &[(usize, &[T])],
        lr: f64,
    ) -> Result<()> {
        if lr < 0.0 {
            return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
        }
        self.t += 1;
        let b1 = T::of(self.cfg.beta1);
        let b2 = T::of(self.cfg.beta2);
        let one_b1 = T::of(1.0 - self.cfg.beta1);
        let one_b2 = T::of(1.0 - self.cfg.beta2);
        let eps = T::of(self.cfg.eps);
        let bc1 = T::of(1.0 / (1.0 - self.cfg.beta1.powi(self.t as i32)));
        let bc2 = T::of(1.0 / (1.0 - self.cfg.beta2.powi(self.t as i32)));
        let lr_t = T::of(lr);
        let decay = T::of(lr * self.cfg.weight_decay);
        for &(idx, grad) in updates {
            let p = &mut params[idx];
            if grad.len() != p.data.len() {
                return Err(Error::MissingGrad(format!(
                    "parameter #{idx}: gradient length {} != parameter length {}",
                    grad.len(),
                    p.data.len()
                )));
            }
            let m = &mut self.m[idx].data;
            let v = &mut self.v[idx].data;
            for j in 0..p.data.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + one_b1 * g;
                v[j] = b2 * v[j] + one_b2 * g * g;
                let m_hat = m[j] * bc1;
                let v_hat = v[j] * bc2;
                p.data[j] = p.data[j] - lr_t * m_hat / (v_hat.sqrt() + eps) - decay * p.data[j];
            }
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr`, then cosine decay to `min_lr`.
/// Steps outside [0, total_steps] are clamped.
pub fn cosine_lr(
    step: usize,
    warmup_steps: usize,
    total_steps: usize,
    base_lr: f64,
    min_lr: f64,
) -> f64 {
    let step = step.min(total_steps);
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return min_lr;
    }
    let t = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    min_lr + (base_lr - min_lr) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0, 10, 100, 1e-3, 1e-5), 0.0);
        assert!((cosine_lr(100, 10, 100, 1e-3, 1e-5) - 1e-5).abs() < 1e-18);
        // Warmup end reaches the base rate.
        assert!((cosine_lr(10, 10, 100, 1e-3, 1e-5) - 1e-3).abs() < 1e-12);
        // Halfway through the decay sits at the midpoint.
        let mid = cosine_lr(10 + 45, 10, 100, 1e-3, 1e-5);
        assert!((mid - (1e-3 + 1e-5) / 2.0).abs() < 1e-12, "midpoint {mid}");
        // Clamping beyond the end.
        assert_eq!(cosine_lr(1000, 10, 100, 1e-3, 1e-5), cosine_lr(100, 10, 100, 1e-3, 1e-5));
    }

    #[test]
    fn adamw_zero_lr_zero_decay_is_identity() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut state = AdamWState::<f64>::new(cfg, &[vec![3]]);
        let mut params = vec![TensorData::new(vec![3], vec![1.0, -2.0, 0.5])];
        let grads = vec![0.3, 0.1, -0.7];
        let before = params[0].data.clone();
        state.step(&mut params, &[(0, &grads)], 0.0).unwrap();
        assert_eq!(params[0].data, before);
    }

    #[test]
    fn adamw_single_step_matches_hand_recurrence() {
        // w=1, g=1, beta1=0.9, beta2=0.999, eps=1e-8, wd=0, lr=0.1, t=1.
        let cfg = AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
        let mut state = AdamWState::<f64>::new(cfg, &[vec![1]]);
        let mut params = vec![TensorData::new(vec![1], vec![1.0])];
        state.step(&mut params, &[(0, &[1.0])], 0.1).unwrap();
        // Hand evaluation of the recurrence:
        let m = 0.1 * 1.0; // (1-beta1)*g
        let v = 0.001 * 1.0; // (1-beta2)*g^2
        let m_hat = m / (1.0 - 0.9f64.powi(1));
        let v_hat = v / (1.0 - 0.999f64.powi(1));
        let expected = 1.0 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!(
            (params[0].data[0] - expected).abs() < 1e-15,
            "{} vs {}",
            params[0].data[0],
            expected
        );
    }

    #[test]
    fn adamw_two_steps_shrink_positive_weight() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut state = AdamWState::<f64>::new(cfg, &[vec![1]]);
        let mut params = vec![TensorData::new(vec![1], vec![1.0])];
        state.step(&mut params, &[(0, &[1.0])], 0.1).unwrap();
        let w1 = params[0].data[0];
        state.step(&mut params, &[(0, &[1.0])], 0.1).unwrap();
        let w2 = params[0].data[0];
        assert!(w1 < 1.0 && w2 < w1, "1.0 -> {w1} -> {w2} should decrease");
    }

    #[test]
    fn adamw_skipped_parameters_stay_bitwise_frozen() {
        let cfg = AdamWConfig::default();
        let mut state = AdamWState::<f32>::new(cfg, &[vec![2], vec![2]]);
        let mut params = vec![
            TensorData::new(vec![2], vec![1.0f32, 2.0]),
            TensorData::new(vec![2], vec![3.0f32, 4.0]),
        ];
        let frozen = params[1].data.clone();
        for _ in 0..5 {
            state.step(&mut params, &[(0, &[0.5, -0.5])], 1e-2).unwrap();
        }
        assert_eq!(params[1].data, frozen);
    }
}
