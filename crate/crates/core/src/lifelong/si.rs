use super::ewc::{check_len, ImportanceMap};
use crate::error::{Error, Result};

/// Running path-integral state for synaptic-intelligence importance.
///
/// Each optimizer step adds `−gradᵢ · Δθᵢ` to `omega_running`, the
/// first-order estimate of how much parameter `i` reduced the loss. The
/// accumulator is reset when a new task starts.
#[derive(Debug, Clone, PartialEq)]
pub struct SiState {
    omega_running: Vec<f64>,
    theta_start: Vec<f64>,
    xi: f64,
}

impl SiState {
    pub fn new(theta_start: Vec<f64>, xi: f64) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(Error::InvalidConfig(format!("SI damping ξ must be > 0, got {xi}")));
        }
        Ok(Self {
            omega_running: vec![0.0; theta_start.len()],
            theta_start,
            xi,
        })
    }

    pub fn omega_running(&self) -> &[f64] {
        &self.omega_running
    }

    pub fn theta_start(&self) -> &[f64] {
        &self.theta_start
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn accumulate_step(&mut self, grad: &[f64], delta_theta: &[f64]) -> Result<()> {
        check_len("gradient", self.omega_running.len(), grad.len())?;
        check_len("parameter step", self.omega_running.len(), delta_theta.len())?;
        for ((w, g), d) in self.omega_running.iter_mut().zip(grad).zip(delta_theta) {
            *w -= g * d;
        }
        Ok(())
    }

    /// `Ω_prev + max(ω, 0) / ((θ_end − θ_start)² + ξ)`.
    pub fn consolidate(&self, omega_prev: &ImportanceMap, theta_end: &[f64]) -> Result<ImportanceMap> {
        check_len("importance", self.omega_running.len(), omega_prev.len())?;
        check_len("parameters", self.omega_running.len(), theta_end.len())?;
        let values = omega_prev
            .as_slice()
            .iter()
            .zip(&self.omega_running)
            .zip(theta_end.iter().zip(&self.theta_start))
            .map(|((prev, w), (end, start))| {
                let drift = end - start;
                prev + w.max(0.0) / (drift * drift + self.xi)
            })
            .collect();
        ImportanceMap::new(values)
    }

    /// Clears the accumulator and records the new task's starting point.
    pub fn reset(&mut self, theta_start: Vec<f64>) -> Result<()> {
        check_len("parameters", self.omega_running.len(), theta_start.len())?;
        self.omega_running.iter_mut().for_each(|w| *w = 0.0);
        self.theta_start = theta_start;
        Ok(())
    }
}
