use serde::{Deserialize, Serialize};

use super::network::{GradientTape, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn step(&mut self, net: &mut Network, tape: &GradientTape) -> Result<()> {
        let mut params = net.params_mut();
        self.step_slices(&mut params, tape)
    }

    pub fn step_slices(&mut self, params: &mut [&mut [f64]], tape: &GradientTape) -> Result<()> {
        if params.len() != tape.buffers.len() || params.len() != self.first_moment.len() {
            return Err(Error::config(
                "adam: parameter/gradient/moment count mismatch",
            ));
        }
        for ((p, g), m) in params.iter().zip(&tape.buffers).zip(&self.first_moment) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(Error::config("adam: tensor shape mismatch"));
            }
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let g = &tape.buffers[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::network::{block, LayerSpec};

    #[test]
    fn zero_gradient_leaves_params() {
        let mut net = Network::new(block(3, 2, true, true), 1).unwrap();
        let before = net.clone();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let tape = net.zero_tape();
        adam.step(&mut net, &tape).unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.5];
        let tape = GradientTape {
            buffers: vec![vec![1.0]],
        };
        let mut adam = AdamState {
            config: AdamConfig {
                learning_rate: 0.1,
                ..AdamConfig::default()
            },
            first_moment: vec![vec![0.0]],
            second_moment: vec![vec![0.0]],
            step_count: 0,
        };
        {
            let mut params: Vec<&mut [f64]> = vec![p.as_mut_slice()];
            adam.step_slices(&mut params, &tape).unwrap();
        }
        // m_hat = 1, v_hat = 1, update = 0.1 / (1 + 1e-8)
        assert!((0.5 - p[0] - 0.1).abs() < 1e-8);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let specs = vec![LayerSpec::Dense {
            input: 2,
            output: 2,
        }];
        let mut a = Network::new(specs.clone(), 3).unwrap();
        let mut b = Network::new(specs, 3).unwrap();
        let mut sa = AdamState::new(&a, AdamConfig::default());
        let mut sb = AdamState::new(&b, AdamConfig::default());
        let tape = GradientTape {
            buffers: vec![vec![0.3, -0.1, 0.2, 0.9], vec![1.0, -2.0]],
        };
        for _ in 0..3 {
            sa.step(&mut a, &tape).unwrap();
            sb.step(&mut b, &tape).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_tape_rejected() {
        let mut net = Network::new(block(3, 2, false, false), 1).unwrap();
        let mut adam = AdamState::new(&net, AdamConfig::default());
        let tape = GradientTape {
            buffers: vec![vec![0.0; 5]],
        };
        assert!(adam.step(&mut net, &tape).is_err());
    }
}
