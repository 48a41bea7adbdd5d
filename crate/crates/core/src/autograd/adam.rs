use crate::autograd::ParamStore;
use crate::error::{Error, Result};

/// Adam with bias correction (Kingma & Ba, 2015). No AMSGrad, no weight decay.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter. Gradients are left in place.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some(p) = store.iter().find(|p| p.trainable && p.grad.is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        if self.m.is_empty() {
            self.m = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != store.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }

        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);

        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grad = p.grad.as_ref().expect("checked above").data();
            for (((w, g), m), v) in p.value.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tensor;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row(vec![0.5, -1.5]));
        store.zero_grad();
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut store).unwrap();
        assert_eq!(store.iter().next().unwrap().value.data(), &[0.5, -1.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0));
        store.get_mut(id).grad = Some(Tensor::scalar(0.37));
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut store).unwrap();
        let moved = 1.0 - store.value(id).item();
        assert!((moved - 1e-3).abs() < 1e-9, "moved {moved}");
        // grads are left for the caller
        assert_eq!(store.get(id).grad.as_ref().unwrap().item(), 0.37);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut store = ParamStore::new();
        store.add("encoder.w", Tensor::scalar(1.0));
        let err = AdamState::new(1e-3).step(&mut store).unwrap_err();
        assert!(matches!(&err, Error::MissingGrad(n) if n == "encoder.w"));
    }

    #[test]
    fn frozen_params_are_skipped() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(1.0));
        store.get_mut(id).grad = Some(Tensor::scalar(1.0));
        store.set_trainable(false);
        AdamState::new(0.1).step(&mut store).unwrap();
        assert_eq!(store.value(id).item(), 1.0);
    }

    /// Scalar reference recurrence, written independently of the store-based update.
    fn reference_adam(w0: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
        for t in 1..=steps {
            let g = 2.0 * (w - 3.0);
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        w
    }

    #[test]
    fn quadratic_matches_reference_and_descends() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(0.0));
        let mut adam = AdamState::new(0.1);
        for _ in 0..10 {
            let w = store.value(id).item();
            store.get_mut(id).grad = Some(Tensor::scalar(2.0 * (w - 3.0)));
            adam.step(&mut store).unwrap();
        }
        let w = store.value(id).item();
        let expected = reference_adam(0.0, 0.1, 10);
        assert!((w - expected).abs() < 1e-12, "{w} vs {expected}");
        assert!((w - 3.0).abs() < 3.0);
    }
}
