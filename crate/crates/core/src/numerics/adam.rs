use super::dense::{DenseNet, NetGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
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

/// Optimizer state for one parameter set; moments mirror the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// State for parameter groups of the given flat lengths.
    pub fn new(config: AdamConfig, group_lens: &[usize]) -> Result<Self> {
        if config.learning_rate.is_nan() || config.learning_rate <= 0.0 {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(Self {
            config,
            step_count: 0,
            first_moment: group_lens.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: group_lens.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn for_net(config: AdamConfig, net: &DenseNet) -> Result<Self> {
        let lens: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        Self::new(config, &lens)
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam expects {} parameter groups, got {} params and {} grads",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first_moment[i].len() || g.len() != p.len() {
                return Err(Error::invalid(format!(
                    "group {i}: state {} params {} grads {}",
                    self.first_moment[i].len(),
                    p.len(),
                    g.len()
                )));
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
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

/// Applies one Adam update to every parameter of `net`.
pub fn adam_step(net: &mut DenseNet, grads: &NetGrads, state: &mut AdamState) -> Result<()> {
    let g = grads.slices();
    let mut p = net.param_slices_mut();
    state.step(&mut p, &g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(AdamConfig::default(), &[3]).unwrap();
        let mut p = vec![0.5, -1.25, 3.0];
        let before = p.clone();
        state.step(&mut [&mut p[..]], &[&[0.0, 0.0, 0.0][..]]).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² after bias correction, so Δw = -lr · g / (|g| + ε).
        let mut state = AdamState::new(AdamConfig::default(), &[1]).unwrap();
        let mut w = [0.0];
        state.step(&mut [&mut w[..]], &[&[1.0][..]]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((w[0] - expected).abs() < 1e-15, "{}", w[0]);
    }

    #[test]
    fn identical_params_get_identical_updates() {
        let mut state = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        let mut p = [0.3, 0.3];
        for g in [0.7, -0.2, 1.5] {
            state.step(&mut [&mut p[..]], &[&[g, g][..]]).unwrap();
        }
        assert_eq!(p[0].to_bits(), p[1].to_bits());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut state = AdamState::new(AdamConfig::default(), &[2]).unwrap();
        let mut p = [0.0; 3];
        assert!(state.step(&mut [&mut p[..]], &[&[0.0; 3][..]]).is_err());
        assert_eq!(state.step_count(), 0);
    }
}
