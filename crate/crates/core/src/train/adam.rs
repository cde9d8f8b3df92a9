use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

/// Adam moments for every parameter of a store, in id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, learning_rate: f64) -> AdamState {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }

    /// One bias-corrected update from the gradients held in `store`.
    /// Parameters are left untouched if any gradient is non-finite.
    pub fn apply(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for p in store.iter() {
            if !p.grad.is_finite() {
                return Err(Error::Diverged(format!("non-finite gradient for {}", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.len() != p.value.len() {
                return Err(Error::Shape(format!("moment size mismatch for {}", p.name)));
            }
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let g = grads[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Adam update on a standalone tensor list; convenient for tests and small
/// problems outside a [`ParamStore`].
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    let mut store = ParamStore::new();
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "parameter {i} has shape {:?}, gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        let id = store.add(format!("p{i}"), p.clone());
        store.get_mut(id).grad = g.clone();
    }
    state.apply(&mut store)?;
    for (p, updated) in params.iter_mut().zip(store.iter()) {
        *p = updated.value.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0, 3.0])];
        let grads = vec![Tensor::zeros(&[3])];
        let mut state = AdamState::new(&store_of(&params), 1e-3);
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state).unwrap();
        }
        assert_eq!(params[0].data(), &[1.0, -2.0, 3.0]);
        assert_eq!(state.step, 5);
    }

    fn store_of(params: &[Tensor]) -> ParamStore {
        let mut s = ParamStore::new();
        for p in params {
            s.add("p", p.clone());
        }
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![Tensor::vector(vec![0.5, 0.5, 0.5])];
        let grads = vec![Tensor::vector(vec![3.0, -0.01, 1e3])];
        let mut state = AdamState::new(&store_of(&params), 1e-4);
        adam_step(&mut params, &grads, &mut state).unwrap();
        let moved: Vec<f64> = params[0].data().iter().map(|v| v - 0.5).collect();
        assert!((moved[0] + 1e-4).abs() < 1e-9);
        assert!((moved[1] - 1e-4).abs() < 1e-9);
        assert!((moved[2] + 1e-4).abs() < 1e-9);
        assert!(state.second_moment(0).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn quadratic_matches_reference_trace() {
        // Independent scalar trace of the textbook update.
        let (lr, b1, b2, eps) = (1e-4, 0.9f64, 0.999f64, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut trace = Vec::new();
        for t in 1..=1000 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            trace.push(x);
        }

        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(&store_of(&params), lr);
        for expected in trace {
            let g = vec![Tensor::scalar(2.0 * params[0].data()[0])];
            adam_step(&mut params, &g, &mut state).unwrap();
            assert!((params[0].data()[0] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn nan_gradient_rejected_without_update() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let grads = vec![Tensor::vector(vec![0.1, f64::NAN])];
        let mut state = AdamState::new(&store_of(&params), 1e-3);
        let err = adam_step(&mut params, &grads, &mut state).unwrap_err();
        assert!(matches!(err, Error::Diverged(_)));
        assert_eq!(params[0].data(), &[1.0, 2.0]);
        assert_eq!(state.step, 0);
    }
}
