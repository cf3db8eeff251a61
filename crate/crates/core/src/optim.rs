//! AdamW with decoupled weight decay and optional AMSGrad.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;
use crate::{CfaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub amsgrad: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            amsgrad: true,
        }
    }
}

/// Moment buffers for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<F> {
    pub first: Vec<F>,
    pub second: Vec<F>,
    pub max_second: Vec<F>,
}

impl<F: Real> Moments<F> {
    pub fn zeros(len: usize) -> Self {
        Self {
            first: vec![F::zero(); len],
            second: vec![F::zero(); len],
            max_second: vec![F::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    fn is_finite(&self) -> bool {
        self.first
            .iter()
            .chain(&self.second)
            .chain(&self.max_second)
            .all(|v| v.is_finite())
    }
}

/// Optimizer state for a list of parameter groups sharing one step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<F> {
    pub config: AdamWConfig,
    pub step_count: u64,
    pub moments: Vec<Moments<F>>,
}

impl<F: Real> AdamW<F> {
    pub fn new(config: AdamWConfig, group_lens: &[usize]) -> Self {
        Self {
            config,
            step_count: 0,
            moments: group_lens.iter().map(|&n| Moments::zeros(n)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.moments.iter().all(Moments::is_finite)
    }

    /// Applies one update to every `(params, grads)` group. Fails without
    /// touching anything if a gradient is non-finite.
    pub fn step(&mut self, groups: &mut [(&mut [F], &[F])]) -> Result<()> {
        if groups.len() != self.moments.len() {
            return Err(CfaError::Shape(format!(
                "optimizer tracks {} groups, got {}",
                self.moments.len(),
                groups.len()
            )));
        }
        for ((p, g), m) in groups.iter().zip(&self.moments) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(CfaError::Shape("parameter/gradient length mismatch".into()));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(CfaError::NonFiniteGradient);
            }
        }

        self.step_count += 1;
        let c = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2_sqrt = (1.0 - c.beta2.powi(t)).sqrt();
        let decay = F::from_f64_lossy(1.0 - c.lr * c.weight_decay);
        let step_size = F::from_f64_lossy(c.lr / bc1);
        let b1 = F::from_f64_lossy(c.beta1);
        let b2 = F::from_f64_lossy(c.beta2);
        let one = F::one();
        let eps = F::from_f64_lossy(c.eps);
        let bc2_sqrt = F::from_f64_lossy(bc2_sqrt);

        for ((params, grads), m) in groups.iter_mut().zip(&mut self.moments) {
            for i in 0..params.len() {
                let g = grads[i];
                params[i] = params[i] * decay;
                m.first[i] = b1 * m.first[i] + (one - b1) * g;
                m.second[i] = b2 * m.second[i] + (one - b2) * g * g;
                let v = if c.amsgrad {
                    m.max_second[i] = m.max_second[i].max(m.second[i]);
                    m.max_second[i]
                } else {
                    m.second[i]
                };
                let denom = v.sqrt() / bc2_sqrt + eps;
                params[i] = params[i] - step_size * m.first[i] / denom;
            }
        }
        Ok(())
    }
}
