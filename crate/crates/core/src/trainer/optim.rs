use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerConfig {
    /// Heavy-ball SGD: `v ← μ·v + g`, `w ← w − η·v`.
    Sgd { lr: f64, momentum: f64 },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd(lr: f64, momentum: f64) -> Self {
        OptimizerConfig::Sgd { lr, momentum }
    }

    pub fn lr(&self) -> f64 {
        match self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => *lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { lr, momentum } => lr >= 0.0 && (0.0..1.0).contains(&momentum),
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr >= 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad optimizer settings: {self:?}")))
        }
    }
}

/// Learning-rate multiplier over training.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Schedule {
    #[default]
    Constant,
    /// `½(1 + cos(π·t/T))` over all `T` steps.
    Cosine,
    /// Multiply by `gamma` every `every_epochs` epochs.
    Step { every_epochs: usize, gamma: f64 },
    /// Multiply by `gamma` at each listed epoch.
    MultiStep { milestones: Vec<usize>, gamma: f64 },
}

impl Schedule {
    /// Learning rate at optimizer step `step` (0-based).
    pub fn lr(&self, base: f64, step: usize, steps_per_epoch: usize, total_steps: usize) -> f64 {
        let epoch = step / steps_per_epoch.max(1);
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let t = step as f64 / total_steps.max(1) as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
            Schedule::Step { every_epochs, gamma } => base * gamma.powi((epoch / (*every_epochs).max(1)) as i32),
            Schedule::MultiStep { milestones, gamma } => {
                base * gamma.powi(milestones.iter().filter(|&&m| epoch >= m).count() as i32)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self { config, first: Vec::new(), second: Vec::new(), steps: 0 }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// One update of `params` with gradients `grads` at learning rate `lr`.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!("{} params but {} grads", params.len(), grads.len())));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            if matches!(self.config, OptimizerConfig::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        self.steps += 1;
        match self.config {
            OptimizerConfig::Sgd { momentum, .. } => {
                for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.first) {
                    let first_step = self.steps == 1;
                    for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *vv = if first_step { *gv } else { momentum * *vv + gv };
                        *pv -= lr * *vv;
                    }
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => {
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
                    for (((pv, gv), mv), vv) in
                        p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
                    {
                        *mv = beta1 * *mv + (1.0 - beta1) * gv;
                        *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                        *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scales `grads` so their joint Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.scale(s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_momentum_matches_hand_recursion() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.9));
        let mut w = Tensor::vector(vec![1.0]);
        opt.step(vec![&mut w], &[Tensor::vector(vec![2.0])], 0.1).unwrap();
        assert!((w.data()[0] - 0.8).abs() < 1e-15);
        opt.step(vec![&mut w], &[Tensor::vector(vec![1.0])], 0.1).unwrap();
        // v = 0.9*2 + 1 = 2.8
        assert!((w.data()[0] - 0.52).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.01));
        let mut w = Tensor::vector(vec![0.0, 0.0]);
        opt.step(vec![&mut w], &[Tensor::vector(vec![5.0, -0.001])], 0.01).unwrap();
        assert!((w.data()[0] + 0.01).abs() < 1e-9);
        assert!((w.data()[1] - 0.01).abs() < 1e-4);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.05));
        let mut w = Tensor::vector(vec![3.0, -2.0]);
        for _ in 0..2000 {
            let g = w.scale(2.0);
            opt.step(vec![&mut w], &[g], 0.05).unwrap();
        }
        assert!(w.max_abs() < 1e-3);
    }

    #[test]
    fn schedules() {
        let c = Schedule::Cosine;
        assert_eq!(c.lr(1.0, 0, 1, 100), 1.0);
        assert!((c.lr(1.0, 50, 1, 100) - 0.5).abs() < 1e-15);
        assert!(c.lr(1.0, 100, 1, 100).abs() < 1e-15);
        let s = Schedule::Step { every_epochs: 5, gamma: 0.99 };
        assert_eq!(s.lr(0.01, 4 * 3, 3, 1000), 0.01);
        assert!((s.lr(0.01, 5 * 3, 3, 1000) - 0.0099).abs() < 1e-15);
        let m = Schedule::MultiStep { milestones: vec![2, 4], gamma: 0.1 };
        assert!((m.lr(1.0, 4, 1, 10) - 0.01).abs() < 1e-15);
        assert_eq!(Schedule::Constant.lr(0.3, 77, 1, 100), 0.3);
    }

    #[test]
    fn clipping() {
        let mut g = vec![Tensor::vector(vec![300.0]), Tensor::vector(vec![400.0])];
        assert_eq!(clip_global_norm(&mut g, 100.0), 500.0);
        assert!((g[0].data()[0] - 60.0).abs() < 1e-12 && (g[1].data()[0] - 80.0).abs() < 1e-12);
        let mut small = vec![Tensor::vector(vec![3.0])];
        clip_global_norm(&mut small, 100.0);
        assert_eq!(small[0].data(), &[3.0]);
    }
}
