//! RMSProp with additive L2 weight decay.

use std::collections::HashMap;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter state lives in a map keyed by parameter name; update order
/// is the caller's visit order, so runs are deterministic.
pub struct RmsProp {
    pub config: RmsPropConfig,
    second_moment: HashMap<String, Vec<f64>>,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig) -> RmsProp {
        RmsProp {
            config,
            second_moment: HashMap::new(),
        }
    }

    /// `g = grad + weight_decay * param; v = decay*v + (1-decay)*g^2;
    /// param -= learning_rate * g / (sqrt(v) + epsilon)`.
    ///
    /// A parameter with no accumulated gradient is left untouched. The
    /// updated parameter is a fresh leaf, so stale gradients cannot leak
    /// between steps.
    pub fn step(&mut self, name: &str, param: &mut Tensor) {
        let Some(grad) = param.grad() else { return };
        let cfg = self.config;
        let state = self
            .second_moment
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; param.len()]);
        let mut values = param.values().to_vec();
        for i in 0..values.len() {
            let g = grad[i] + cfg.weight_decay * values[i];
            state[i] = cfg.decay * state[i] + (1.0 - cfg.decay) * g * g;
            values[i] -= cfg.learning_rate * g / (state[i].sqrt() + cfg.epsilon);
        }
        *param = Tensor::param(param.shape(), values);
    }

    /// Stored second-moment vectors in name order, for checkpointing.
    pub fn state(&self) -> Vec<(String, Vec<f64>)> {
        let mut entries: Vec<(String, Vec<f64>)> = self
            .second_moment
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        entries
    }

    pub fn load_state(&mut self, entries: &[(String, Vec<f64>)]) {
        self.second_moment = entries.iter().cloned().collect();
    }
}
