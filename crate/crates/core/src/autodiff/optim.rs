use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerMethod {
    Sgd,
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub method: OptimizerMethod,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm cap applied before the update; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: OptimizerMethod::Adam,
            lr: 0.01,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(5.0),
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            method: OptimizerMethod::Sgd,
            lr,
            clip_norm: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::InvalidConfig(format!("clip_norm must be > 0, got {c}")));
            }
        }
        Ok(())
    }
}

/// First-order optimizer with its running state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    velocity: Vec<f64>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            velocity: vec![0.0; num_params],
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update in place. `grad` is clipped to `clip_norm` first.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != grad.len() || theta.len() != self.velocity.len() {
            return Err(Error::LayoutMismatch(format!(
                "optimizer holds {} parameters, got theta {} and grad {}",
                self.velocity.len(),
                theta.len(),
                grad.len()
            )));
        }
        let mut scale = 1.0;
        if let Some(max_norm) = self.config.clip_norm {
            let norm = l2_norm(grad);
            if norm > max_norm {
                scale = max_norm / norm;
            }
        }
        self.steps += 1;
        let lr = self.config.lr;
        match self.config.method {
            OptimizerMethod::Sgd => {
                for (t, g) in theta.iter_mut().zip(grad) {
                    *t -= lr * g * scale;
                }
            }
            OptimizerMethod::SgdMomentum => {
                let mu = self.config.momentum;
                for ((t, g), v) in theta.iter_mut().zip(grad).zip(&mut self.velocity) {
                    *v = mu * *v + g * scale;
                    *t -= lr * *v;
                }
            }
            OptimizerMethod::Adam => {
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
                let bias1 = 1.0 - b1.powi(self.steps as i32);
                let bias2 = 1.0 - b2.powi(self.steps as i32);
                for (((t, g), m), v) in theta
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    let g = g * scale;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *t -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_arithmetic() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1), 1).unwrap();
        let mut theta = [1.0];
        opt.step(&mut theta, &[0.5]).unwrap();
        assert!((theta[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_theta_unchanged() {
        for method in [OptimizerMethod::Sgd, OptimizerMethod::SgdMomentum, OptimizerMethod::Adam] {
            let cfg = OptimizerConfig {
                method,
                ..OptimizerConfig::default()
            };
            let mut opt = Optimizer::new(cfg, 3).unwrap();
            let mut theta = [1.0, -2.0, 0.25];
            for _ in 0..3 {
                opt.step(&mut theta, &[0.0; 3]).unwrap();
            }
            assert_eq!(theta, [1.0, -2.0, 0.25], "{method:?}");
        }
    }

    #[test]
    fn clipping_halves_a_norm_two_gradient() {
        let cfg = OptimizerConfig {
            clip_norm: Some(1.0),
            ..OptimizerConfig::sgd(1.0)
        };
        let mut opt = Optimizer::new(cfg, 2).unwrap();
        let mut theta = [0.0, 0.0];
        opt.step(&mut theta, &[2.0, 0.0]).unwrap();
        assert!((theta[0] + 1.0).abs() < 1e-15);
        assert_eq!(theta[1], 0.0);
    }

    #[test]
    fn non_positive_learning_rate_is_rejected() {
        assert!(Optimizer::new(OptimizerConfig::sgd(0.0), 1).is_err());
        assert!(Optimizer::new(OptimizerConfig::sgd(-1.0), 1).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = OptimizerConfig {
            clip_norm: None,
            ..OptimizerConfig::default()
        };
        let mut opt = Optimizer::new(cfg, 1).unwrap();
        let mut theta = [0.0];
        opt.step(&mut theta, &[3.0]).unwrap();
        assert!((theta[0] + 0.01).abs() < 1e-9);
    }
}
