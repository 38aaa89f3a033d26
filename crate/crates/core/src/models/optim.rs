//! Rectified Adam with a single cosine-annealing cycle.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;
/// Variance-rectification is applied once the SMA length exceeds this.
pub const RHO_THRESHOLD: f64 = 4.0;

/// Learning rate for 1-based `step` of `total`, annealed from `lr0` toward 0.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let phase = (step.saturating_sub(1)) as f64 / total as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos())
}

/// RAdam state for a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct RAdam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    rho_inf: f64,
}

impl RAdam {
    /// State sized for tensors of the given lengths.
    pub fn new(lengths: &[usize]) -> Self {
        Self {
            m: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            v: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            rho_inf: 2.0 / (1.0 - BETA2) - 1.0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Length of the approximated simple moving average at step `t`.
    pub fn rho(&self, t: u64) -> f64 {
        let b2t = BETA2.powi(t as i32);
        self.rho_inf - 2.0 * t as f64 * b2t / (1.0 - b2t)
    }

    /// Applies one update with learning rate `lr`.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::ShapeMismatch(format!("tensor {i} changed length")));
            }
        }
        self.t += 1;
        let t = self.t;
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        let rho_t = self.rho(t);
        let rect = (rho_t > RHO_THRESHOLD).then(|| {
            let ri = self.rho_inf;
            ((rho_t - 4.0) * (rho_t - 2.0) * ri / ((ri - 4.0) * (ri - 2.0) * rho_t)).sqrt()
        });
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * gj;
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * gj * gj;
                let m_hat = m[j] / bc1;
                p[j] -= match rect {
                    Some(r) => lr * r * m_hat / ((v[j] / bc2).sqrt() + EPS),
                    None => lr * m_hat,
                };
            }
        }
        Ok(())
    }
}
