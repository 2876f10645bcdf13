//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    /// Toy-scale default; full-scale training used `lr = 1e-6`.
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// One update from the accumulated gradients, which are zeroed afterwards.
    pub fn step(&mut self, params: &mut ParamStore<T>) {
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::one() - T::lit(c.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::lit(c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.epsilon));

        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (i, &g) in grads.iter().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + (T::one() - b1) * g;
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let m_hat = m.data()[i] / bc1;
                let v_hat = v.data()[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.grad.fill(T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Graph;

    #[test]
    fn zero_gradient_is_identity() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row(vec![0.3, -0.7])).unwrap();
        let before = store.get(crate::autodiff::ParamId(0)).value.clone();
        let mut opt = Adam::new(AdamConfig::default(), &store);
        opt.step(&mut store);
        opt.step(&mut store);
        assert_eq!(store.get(crate::autodiff::ParamId(0)).value, before);
        assert_eq!(opt.step, 2);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the update is lr · g/(|g| + ε) ≈ lr.
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::row(vec![1.0f64])).unwrap();
        store.get_mut(id).grad.data_mut()[0] = 1.0;
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &store,
        );
        opt.step(&mut store);
        let theta = store.get(id).value.item();
        assert!((theta - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
        assert_eq!(store.get(id).grad.item(), 0.0);
    }

    #[test]
    fn two_steps_decrease_convex_quadratic() {
        // loss = Σ (w - 3)²
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::row(vec![0.0f64, 1.0])).unwrap();
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            &store,
        );
        let loss = |store: &mut ParamStore<f64>, backprop: bool| {
            let mut g = Graph::new();
            let w = g.param(store, id);
            let shift = g.constant(Tensor::row(vec![-3.0, -3.0]));
            let d = g.add(w, shift).unwrap();
            let sq = g.mul(d, d).unwrap();
            let l = g.sum(sq);
            if backprop {
                g.backward(l, store).unwrap();
            }
            g.value(l).item()
        };
        let l0 = loss(&mut store, true);
        opt.step(&mut store);
        let l1 = loss(&mut store, true);
        opt.step(&mut store);
        let l2 = loss(&mut store, false);
        assert!(l1 < l0 && l2 < l1, "{l0} {l1} {l2}");
    }
}
