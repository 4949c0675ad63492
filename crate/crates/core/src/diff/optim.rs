use std::collections::BTreeMap;

use super::params::{GradMap, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

/// Global L2 norm over the selected gradients.
pub fn grad_norm<'a>(grads: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    grads.into_iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Adam with a fixed step size and optional global-norm clipping. Minimizes.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.clip_norm = Some(max_norm);
        self
    }

    /// Applies one update to every parameter accepted by `trainable`.
    /// Returns the pre-clipping gradient norm.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &GradMap,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<f64> {
        let selected: Vec<(&String, &Tensor)> =
            grads.iter().filter(|(name, _)| trainable(name)).collect();
        let norm = grad_norm(selected.iter().map(|(_, g)| *g));
        let clip = match self.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, g) in selected {
            let param = store.get_mut(name)?;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            for i in 0..g.len() {
                let gi = g.data()[i] * clip;
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                param.data_mut()[i] -= self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
            }
        }
        Ok(norm)
    }
}
