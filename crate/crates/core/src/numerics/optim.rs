use serde::{Deserialize, Serialize};

use super::{Array2, NumericsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2 }
    }
}

/// AdamW with bias correction and decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Vec<Array2>,
    second: Vec<Array2>,
    step: u64,
}

impl AdamW {
    /// Zero moments for parameters of the given shapes.
    pub fn new(config: AdamWConfig, shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Array2::zeros(r, c)).collect::<Vec<_>>();
        Self { config, first: zeros(), second: zeros(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`:
    /// `p ← p − lr·wd·p − lr·m̂ / (√v̂ + eps)`.
    pub fn step(
        &mut self,
        params: &mut [&mut Array2],
        grads: &[Array2],
        lr: f32,
    ) -> Result<(), NumericsError> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(NumericsError::Shape(format!(
                "optimizer tracks {} arrays, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first[i].shape() {
                return Err(NumericsError::Shape(format!(
                    "array {i}: param {:?}, grad {:?}, state {:?}",
                    p.shape(),
                    g.shape(),
                    self.first[i].shape()
                )));
            }
            if !g.is_finite() {
                return Err(NumericsError::NonFinite("adamw gradient"));
            }
        }
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pv, &gv), mv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear warm-up from 0 to `base_lr` over `⌈warmup_frac·total⌉` steps, then
/// linear decay to 0 at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_frac: f64, base_lr: f32) -> f32 {
    let warmup = (warmup_frac * total_steps as f64).ceil() as usize;
    if step < warmup {
        return base_lr * step as f32 / warmup as f32;
    }
    if total_steps <= warmup {
        return base_lr;
    }
    let remaining = total_steps.saturating_sub(step);
    base_lr * remaining as f32 / (total_steps - warmup) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_only_when_gradient_is_zero() {
        let mut p = Array2::row_vector(vec![2.0, -4.0]);
        let mut opt = AdamW::new(AdamWConfig::default(), &[(1, 2)]);
        opt.step(&mut [&mut p], &[Array2::zeros(1, 2)], 0.1).unwrap();
        assert!((p.get(0, 0) - 2.0 * 0.999).abs() < 1e-6);
        assert!((p.get(0, 1) + 4.0 * 0.999).abs() < 1e-6);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        let mut p = Array2::scalar(1.0);
        let mut opt = AdamW::new(cfg, &[(1, 1)]);
        opt.step(&mut [&mut p], &[Array2::scalar(1.0)], 0.05).unwrap();
        assert!((p.get(0, 0) - 0.95).abs() < 1e-6);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut w = Array2::scalar(0.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &[(1, 1)]);
        for _ in 0..100 {
            let g = Array2::scalar(2.0 * (w.get(0, 0) - 3.0));
            opt.step(&mut [&mut w], &[g], 0.1).unwrap();
        }
        assert!((w.get(0, 0) - 3.0).abs() < 0.5, "w = {}", w.get(0, 0));
    }

    #[test]
    fn rejects_non_finite_gradients_and_bad_shapes() {
        let mut p = Array2::scalar(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &[(1, 1)]);
        assert!(opt.step(&mut [&mut p], &[Array2::scalar(f32::NAN)], 0.1).is_err());
        assert!(opt.step(&mut [&mut p], &[Array2::zeros(1, 2)], 0.1).is_err());
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn schedule_landmarks() {
        assert_eq!(lr_at(0, 1000, 0.05, 0.1), 0.0);
        assert!((lr_at(50, 1000, 0.05, 0.1) - 0.1).abs() < 1e-7);
        assert!((lr_at(25, 1000, 0.05, 0.1) - 0.05).abs() < 1e-7);
        let expected = 0.1 * (1000.0 - 525.0) / 950.0;
        assert!((lr_at(525, 1000, 0.05, 0.1) - expected).abs() < 1e-7);
        assert_eq!(lr_at(1000, 1000, 0.05, 0.1), 0.0);
    }
}
