use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::network::ModelWeights;

/// Adam with bias correction; one moment pair per named tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Applies one update. Tensors without a gradient are left unchanged.
    pub fn step(&mut self, weights: &mut ModelWeights, grads: &BTreeMap<String, Tensor>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let moments = &mut self.moments;
        weights.update(|key, param| {
            let Some(g) = grads.get(key) else { return };
            let (m, v) = moments
                .entry(key.to_string())
                .or_insert_with(|| (vec![0.0; g.numel()], vec![0.0; g.numel()]));
            for (i, p) in param.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        });
    }
}
