use serde::{Deserialize, Serialize};

use super::{c, Gradients, ParamStore, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite value in parameter {0} after update")]
    NonFiniteParameter(String),
}

/// Adam with bias correction. Moments are allocated lazily per parameter.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Option<Tensor<F>>>,
    v: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update with learning rate `lr` to every trainable
    /// parameter that has a gradient. Nothing is modified when any gradient
    /// is non-finite.
    pub fn update(
        &mut self,
        params: &mut ParamStore<F>,
        grads: &Gradients<F>,
        lr: f64,
    ) -> Result<(), OptimError> {
        for id in params.ids() {
            if grads.get(id).is_some_and(|g| !g.is_finite()) {
                return Err(OptimError::NonFiniteGradient(params.name(id).to_string()));
            }
        }
        self.m.resize(params.len(), None);
        self.v.resize(params.len(), None);
        self.step += 1;
        let t = self.step as f64;
        let cfg = self.config;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let (b1, b2): (F, F) = (c(cfg.beta1), c(cfg.beta2));
        let (one_b1, one_b2): (F, F) = (c(1.0 - cfg.beta1), c(1.0 - cfg.beta2));
        let step_size: F = c(lr / bc1);
        let inv_sqrt_bc2: F = c(1.0 / bc2.sqrt());
        let eps: F = c(cfg.eps);
        for id in params.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            if !params.is_trainable(id) {
                continue;
            }
            let shape = g.shape;
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(shape));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(shape));
            let p = params.get_mut(id);
            for (((pv, &gv), mv), vv) in p
                .data
                .iter_mut()
                .zip(&g.data)
                .zip(&mut m.data)
                .zip(&mut v.data)
            {
                *mv = b1 * *mv + one_b1 * gv;
                *vv = b2 * *vv + one_b2 * gv * gv;
                *pv = *pv - step_size * *mv / (vv.sqrt() * inv_sqrt_bc2 + eps);
            }
            if !p.is_finite() {
                return Err(OptimError::NonFiniteParameter(params.name(id).to_string()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Graph;

    fn quadratic_grads(params: &ParamStore<f64>, id: crate::nn::ParamId) -> Gradients<f64> {
        // loss = sum(x) via the graph: d/dx = 1
        let mut g = Graph::inference(params);
        let x = g.param(id);
        let s = g.mean_length(x);
        let loss = g.jaccard_loss(s, &Tensor::zeros([1, 1, 1]), 1.0);
        g.backward(loss)
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let mut p = ParamStore::new();
        let id = p.add("x", Tensor::from_vec([1, 1, 3], vec![0.2, 0.5, 0.9]), true);
        let before = p.get(id).clone();
        let grads = quadratic_grads(&p, id);
        let mut adam = Adam::new(AdamConfig::default());
        adam.update(&mut p, &grads, 0.0).unwrap();
        assert_eq!(p.get(id), &before);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut p = ParamStore::new();
        let id = p.add("x", Tensor::from_vec([1, 1, 1], vec![0.5]), true);
        let grads = quadratic_grads(&p, id);
        let g = grads.get(id).unwrap().data[0];
        let mut adam = Adam::new(AdamConfig::default());
        adam.update(&mut p, &grads, 0.01).unwrap();
        // bias-corrected first step is lr * sign(g)
        assert!((p.get(id).data[0] - (0.5 - 0.01 * g.signum())).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = ParamStore::new();
        let id = p.add("x", Tensor::from_vec([1, 1, 1], vec![f64::NAN]), true);
        let grads = quadratic_grads(&p, id);
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(
            adam.update(&mut p, &grads, 0.1),
            Err(OptimError::NonFiniteGradient(_))
        ));
    }
}
