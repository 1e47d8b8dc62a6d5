use serde::{Deserialize, Serialize};

use super::linalg::Scalar;
use super::mlp::Mlp;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// Moment accumulators, mirroring the parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub step: u64,
    /// Updates rejected because of non-finite gradients.
    pub faults: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        Self {
            config,
            state: AdamState {
                first_moment: vec![T::zero(); param_count],
                second_moment: vec![T::zero(); param_count],
                step: 0,
                faults: 0,
            },
        }
    }

    pub fn for_net(config: AdamConfig, net: &Mlp<T>) -> Self {
        Self::new(config, net.params().len())
    }

    /// Bias-corrected descent step along `grads`. Non-finite gradients are
    /// counted and leave the network untouched.
    pub fn step(&mut self, net: &mut Mlp<T>, grads: &[T]) -> Result<(), NnError> {
        let n = net.params().len();
        if grads.len() != n || self.state.first_moment.len() != n {
            return Err(NnError::GradientShape {
                expected: n,
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            self.state.faults += 1;
            return Err(NnError::NonFiniteGradient);
        }
        let c = self.config;
        self.state.step += 1;
        let t = self.state.step as i32;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - c.beta1.powi(t));
        let corr2 = T::from_f64(1.0 - c.beta2.powi(t));
        let lr = T::from_f64(c.learning_rate);
        let eps = T::from_f64(c.epsilon);
        let st = &mut self.state;
        for (((p, g), m), v) in net
            .params_mut()
            .iter_mut()
            .zip(grads)
            .zip(st.first_moment.iter_mut())
            .zip(st.second_moment.iter_mut())
        {
            *m = b1 * *m + (one - b1) * *g;
            *v = b2 * *v + (one - b2) * *g * *g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
        net.bump_version();
        Ok(())
    }
}
