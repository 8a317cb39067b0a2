use std::collections::BTreeMap;

use crate::svlr::ParamStore;

/// Adam with bias correction. Weight decay is added to the gradient as
/// `λθ` before the moment updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        Some((self.first.get(name)?, self.second.get(name)?))
    }

    /// Updates every parameter; parameters missing from `grads` get a zero
    /// loss gradient.
    pub fn update(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Vec<f64>>,
        lr: f64,
        weight_decay: f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, theta) in params.iter_mut() {
            let n = theta.len();
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let g = grads.get(name);
            for (i, x) in theta.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i]) + weight_decay * *x;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                *x -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}
