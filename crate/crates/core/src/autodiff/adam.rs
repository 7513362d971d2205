use super::tensor::ParamStore;
use crate::error::{Error, Result};

pub const DEFAULT_LR: f64 = 1e-3;

/// Adam optimizer state with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// One update of every trainable parameter; gradients are cleared after.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, store has {}",
                self.first.len(),
                params.len()
            )));
        }
        for i in 0..params.len() {
            let t = params.get(i);
            if t.requires_grad() && t.grad().is_none() {
                return Err(Error::Graph(format!(
                    "parameter '{}' has no gradient",
                    params.name(i)
                )));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (self.beta1, self.beta2);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            if !t.requires_grad() {
                continue;
            }
            let (values, grad) = t.parts_mut();
            let grad = grad.expect("checked above");
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            for j in 0..values.len() {
                let g = grad[j] as f64;
                let mj = b1 * m[j] as f64 + (1.0 - b1) * g;
                let vj = b2 * v[j] as f64 + (1.0 - b2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let update = self.lr * (mj / bc1) / ((vj / bc2).sqrt() + self.eps);
                values[j] = (values[j] as f64 - update) as f32;
            }
        }
        params.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store(v: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("w", Tensor::new(vec![1], vec![v]).unwrap().with_grad());
        s
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(DEFAULT_LR, 1e-3);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(0.5);
        let mut adam = AdamState::new(&s, DEFAULT_LR);
        for _ in 0..3 {
            s.get_mut(0).accumulate_grad(&[0.0]).unwrap();
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.get(0).values(), &[0.5]);
    }

    #[test]
    fn unit_gradient_matches_closed_form() {
        // Closed form with g = 1 every step: m_t = 1 - b1^t, v_t = 1 - b2^t,
        // so the bias-corrected ratio is exactly 1 and each step moves by
        // lr / (1 + eps).
        let mut s = store(0.0);
        let mut adam = AdamState::new(&s, 1e-3);
        let mut expected = 0.0f64;
        for _ in 0..5 {
            s.get_mut(0).accumulate_grad(&[1.0]).unwrap();
            adam.step(&mut s).unwrap();
            expected -= 1e-3 / (1.0 + 1e-8);
            assert!((s.get(0).values()[0] as f64 - expected).abs() < 1e-7);
            assert!(s.get(0).grad().is_none());
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut s = store(0.0);
        let mut adam = AdamState::new(&s, 1e-3);
        assert!(adam.step(&mut s).is_err());
    }
}
