use serde::{Deserialize, Serialize};

use super::Param;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state for one network.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &[&Param<T>]) -> Self {
        Self {
            config,
            first: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            second: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// First and second moment estimates, flattened in parameter order.
    pub fn flat_moments(&self) -> (Vec<T>, Vec<T>) {
        (self.first.concat(), self.second.concat())
    }

    /// Rebuilds optimizer state from [`Adam::flat_moments`] output.
    pub fn restore(
        config: AdamConfig,
        params: &[&Param<T>],
        first: &[T],
        second: &[T],
        steps: u64,
    ) -> Option<Self> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if first.len() != total || second.len() != total {
            return None;
        }
        let mut s = Self::new(config, params);
        let mut offset = 0;
        for (m, v) in s.first.iter_mut().zip(&mut s.second) {
            let n = m.len();
            m.copy_from_slice(&first[offset..offset + n]);
            v.copy_from_slice(&second[offset..offset + n]);
            offset += n;
        }
        s.steps = steps;
        Some(s)
    }

    /// Applies one update from the accumulated gradients. Gradients are left untouched.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) {
        assert_eq!(
            params.len(),
            self.first.len(),
            "optimizer built for a different network"
        );
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let lr = c.lr / (1.0 - c.beta1.powi(t));
        let bias2 = 1.0 - c.beta2.powi(t);
        let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.eps));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let (lr, bias2_sqrt) = (T::lit(lr), T::lit(bias2.sqrt()));
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + one_b1 * g;
                v[i] = b2 * v[i] + one_b2 * g * g;
                p.value[i] -= lr * m[i] / (v[i].sqrt() / bias2_sqrt + eps);
            }
        }
    }
}
