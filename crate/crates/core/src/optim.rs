//! AdamW with decoupled weight decay, and a cosine-annealed learning rate.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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
            weight_decay: 1e-4,
        }
    }
}

/// Optimizer state for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(num_params: usize, cfg: AdamWConfig) -> Self {
        AdamW {
            cfg,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with learning rate `lr`. Entries with `decay_mask[i] == false`
    /// skip weight decay; pass `None` to decay everything.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, decay_mask: Option<&[bool]>) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            if decay_mask.is_none_or(|mask| mask[i]) {
                params[i] -= lr * weight_decay * params[i];
            }
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// `lr(s) = base * (1 + cos(pi * min(s, horizon) / horizon)) / 2`, reaching
/// zero at the horizon and staying there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub horizon: u64,
}

impl CosineSchedule {
    pub fn new(base_lr: f64, horizon: u64) -> Self {
        CosineSchedule { base_lr, horizon }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if self.horizon == 0 {
            return self.base_lr;
        }
        let p = step.min(self.horizon) as f64 / self.horizon as f64;
        0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = CosineSchedule::new(2e-4, 100);
        assert_eq!(s.lr(0), 2e-4);
        assert!((s.lr(50) - 1e-4).abs() < 1e-18);
        assert!(s.lr(100).abs() < 1e-20);
        assert!(s.lr(250).abs() < 1e-20);
        for i in 0..100 {
            assert!(s.lr(i + 1) <= s.lr(i));
        }
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        // with bias correction the first Adam step is lr * sign(g)
        let mut opt = AdamW::new(2, AdamWConfig { weight_decay: 0.0, ..Default::default() });
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5], 0.1, None);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 0.9).abs() < 1e-7);
    }

    #[test]
    fn decay_is_decoupled_and_maskable() {
        let cfg = AdamWConfig { weight_decay: 0.5, ..Default::default() };
        let mut opt = AdamW::new(2, cfg);
        let mut p = vec![2.0, 2.0];
        opt.step(&mut p, &[0.0, 0.0], 0.1, Some(&[true, false]));
        assert!((p[0] - 1.9).abs() < 1e-12);
        assert_eq!(p[1], 2.0);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = AdamW::new(3, AdamWConfig::default());
        let target = [1.5, -2.0, 0.25];
        let mut p = vec![0.0; 3];
        let sched = CosineSchedule::new(0.05, 2000);
        for s in 0..2000 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            opt.step(&mut p, &g, sched.lr(s), None);
        }
        for (x, t) in p.iter().zip(&target) {
            assert!((x - t).abs() < 1e-2, "{x} vs {t}");
        }
    }
}
