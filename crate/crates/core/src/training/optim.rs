use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::denoiser::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction; only parameters that receive gradients move.
pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, grad) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::Checkpoint(format!("gradient for unknown parameter `{name}`")))?;
            grad.ensure_same_shape(&p.value)?;
            let n = grad.len();
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let data = p.value.data_mut();
            for (i, &gi) in grad.data().iter().enumerate() {
                st.m[i] = c.beta1 * st.m[i] + (1.0 - c.beta1) * gi;
                st.v[i] = c.beta2 * st.v[i] + (1.0 - c.beta2) * gi * gi;
                let mh = st.m[i] / bc1;
                let vh = st.v[i] / bc2;
                data[i] -= c.learning_rate * (mh / (vh.sqrt() + c.eps) + c.weight_decay * data[i]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::ParamGroup;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::default();
        store.insert("w", ParamGroup::Spatial, Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap());
        let mut opt = Adam::new(AdamConfig::new(0.1, 0.0));
        let g = Tensor::new(vec![3], vec![2.0, -0.5, 0.0]).unwrap();
        opt.update(&mut store, &BTreeMap::from([("w".to_string(), g)])).unwrap();
        let w = store.tensor("w").unwrap().data();
        // bias-corrected m/sqrt(v) is sign(g) on the first step
        assert!((w[0] - 0.9).abs() < 1e-7);
        assert!((w[1] - 1.1).abs() < 1e-7);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::default();
        store.insert("x", ParamGroup::Spatial, Tensor::new(vec![2], vec![3.0, -2.0]).unwrap());
        let mut opt = Adam::new(AdamConfig::new(0.05, 0.0));
        for _ in 0..2000 {
            let x = store.tensor("x").unwrap().clone();
            let g = x.map(|v| 2.0 * (v - 0.5));
            opt.update(&mut store, &BTreeMap::from([("x".to_string(), g)])).unwrap();
        }
        assert!(store.tensor("x").unwrap().data().iter().all(|v| (v - 0.5).abs() < 1e-3));
    }
}
