//! Gradient accumulation and the AdamW update with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::autograd::Gradients;
use crate::model::{Group, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-parameter gradient sums in a fixed order.
#[derive(Clone, Debug)]
pub struct GradAccumulator<T> {
    sums: Vec<Option<Tensor<T>>>,
    count: usize,
}

impl<T: Scalar> GradAccumulator<T> {
    pub fn new(n_params: usize) -> Self {
        Self { sums: vec![None; n_params], count: 0 }
    }

    pub fn add(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.params() {
            match &mut self.sums[id.0] {
                Some(s) => s.add_assign(g),
                slot => *slot = Some(g.clone()),
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean gradients, `None` for parameters that never received one.
    pub fn mean(&self) -> Vec<Option<Tensor<T>>> {
        let inv = T::one() / T::from_usize_lossy(self.count.max(1));
        self.sums
            .iter()
            .map(|s| {
                s.as_ref().map(|t| {
                    let mut t = t.clone();
                    t.scale_assign(inv);
                    t
                })
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub encoder_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, encoder_lr: 1e-5, beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.01 }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: i32,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, n_params: usize) -> Self {
        Self { config, step: 0, m: vec![None; n_params], v: vec![None; n_params] }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One update; parameters without a gradient are left untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) {
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let ids: Vec<_> = params.ids().collect();
        for (id, g) in ids.into_iter().zip(grads) {
            let Some(g) = g else { continue };
            let lr = match params.entry(id).group {
                Group::Encoder => c.encoder_lr,
                Group::Head => c.lr,
            };
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let p = params.get_mut(id);
            let decay = T::lit(1.0 - lr * c.weight_decay);
            let step_size = T::lit(lr / bc1);
            let denom_scale = T::lit(bc2.sqrt());
            let eps = T::lit(c.eps);
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                *pv *= decay;
                *pv -= step_size * *mv / (vv.sqrt() / denom_scale + eps);
            }
        }
    }
}
