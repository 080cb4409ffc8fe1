use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam moments and hyperparameters for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(dim: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn dim(&self) -> usize {
        self.first_moment.len()
    }

    /// One bias-corrected Adam step, moving `params` against `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let dim = self.dim();
        for actual in [params.len(), grads.len()] {
            if actual != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual,
                });
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        for i in 0..dim {
            let g = grads[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut adam = AdamState::new(3, 0.01);
        let mut params = vec![0.5, -1.0, 2.0];
        adam.step(&mut params, &[0.0; 3]).unwrap();
        assert_eq!(params, vec![0.5, -1.0, 2.0]);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = 1, v_hat = 1 after bias correction, so the step is
        // lr * 1 / (1 + 1e-8).
        let mut adam = AdamState::new(1, 0.001);
        let mut params = vec![0.0];
        adam.step(&mut params, &[1.0]).unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((params[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_runs_are_identical() {
        let run = || {
            let mut adam = AdamState::new(2, 0.05);
            let mut p = vec![1.0, -1.0];
            for i in 0..50 {
                let g = [p[0] * 2.0 + i as f64 * 0.01, (p[1] - 3.0).sin()];
                adam.step(&mut p, &g).unwrap();
            }
            (p, adam)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let mut adam = AdamState::new(2, 0.1);
        let mut p = vec![0.0; 3];
        assert!(matches!(
            adam.step(&mut p, &[0.0; 3]),
            Err(Error::DimensionMismatch { expected: 2, actual: 3 })
        ));
        assert_eq!(adam.step_count, 0);
    }
}
