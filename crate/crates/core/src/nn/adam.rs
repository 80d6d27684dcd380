use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

/// Adam moments for one [`ParamStore`], in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub learning_rate: f64,
    /// Per-tensor multiplier on `learning_rate`, in store order.
    pub rate_scale: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `store`. `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(store: &ParamStore, learning_rate: f64, beta1: f64) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        AdamState {
            step_count: 0,
            first_moment: zeros(),
            second_moment: zeros(),
            learning_rate,
            rate_scale: vec![1.0; store.len()],
            beta1,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Sets the rate multiplier of every tensor whose name starts with
    /// `prefix`. Returns how many matched.
    pub fn scale_rate(&mut self, store: &ParamStore, prefix: &str, scale: f64) -> usize {
        let mut hits = 0;
        for (name, s) in store.names().zip(self.rate_scale.iter_mut()) {
            if name.starts_with(prefix) {
                *s = scale;
                hits += 1;
            }
        }
        hits
    }

    /// One bias-corrected Adam update of every trainable parameter from its
    /// accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.first_moment.len() != store.len() || self.rate_scale.len() != store.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} tensors, store has {}",
                self.first_moment.len(),
                store.len()
            )));
        }
        for (p, m) in store.iter().zip(&self.first_moment) {
            if p.value.shape() != m.shape() {
                return Err(Error::dim(format!(
                    "optimizer moment for {} has shape {:?}, parameter {:?}",
                    p.name,
                    m.shape(),
                    p.value.shape()
                )));
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, m), v), scale) in store
            .iter_mut()
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
            .zip(&self.rate_scale)
        {
            if !p.trainable {
                continue;
            }
            let lr = lr * scale;
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                md[i] = b1 * md[i] + (1.0 - b1) * g[i];
                vd[i] = b2 * vd[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = md[i] / bc1;
                let v_hat = vd[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Flattened view for checkpointing: `m/<name>`, `v/<name>`, `step`.
    pub fn named_tensors(&self, store: &ParamStore) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * store.len() + 1);
        out.push(("step".to_string(), Tensor::scalar(self.step_count as f64)));
        for ((name, m), v) in store.names().zip(&self.first_moment).zip(&self.second_moment) {
            out.push((format!("m/{name}"), m.clone()));
            out.push((format!("v/{name}"), v.clone()));
        }
        out
    }

    pub fn load_named(&mut self, store: &ParamStore, tensors: &[(String, Tensor)]) -> Result<()> {
        let find = |key: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == key)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Config(format!("optimizer checkpoint lacks {key}")))
        };
        self.step_count = find("step")?.item()? as u64;
        for (i, name) in store.names().enumerate() {
            let m = find(&format!("m/{name}"))?;
            let v = find(&format!("v/{name}"))?;
            if m.shape() != self.first_moment[i].shape() || v.shape() != self.second_moment[i].shape() {
                return Err(Error::dim(format!("optimizer moment shape mismatch for {name}")));
            }
            self.first_moment[i] = m;
            self.second_moment[i] = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(value));
        s.get_mut("w").unwrap().grad = Tensor::scalar(grad);
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = one_param(1.5, 0.0);
        let mut adam = AdamState::new(&s, 0.0002, 0.5);
        adam.step(&mut s).unwrap();
        assert_eq!(s.get("w").unwrap().value.item().unwrap(), 1.5);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate_times_sign() {
        // m_hat = g, v_hat = g^2 after bias correction, so the step is
        // lr * g / (|g| + eps).
        for g in [3.0, -0.25] {
            let mut s = one_param(0.0, g);
            let mut adam = AdamState::new(&s, 0.0002, 0.5);
            adam.step(&mut s).unwrap();
            let expected = -0.0002 * g / (f64::abs(g) + 1e-8);
            let got = s.get("w").unwrap().value.item().unwrap();
            assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        }
    }

    #[test]
    fn identical_state_gives_identical_update() {
        let mut a = one_param(0.3, 0.7);
        let mut b = one_param(0.3, 0.7);
        let mut sa = AdamState::new(&a, 0.01, 0.5);
        let mut sb = sa.clone();
        sa.step(&mut a).unwrap();
        sb.step(&mut b).unwrap();
        assert_eq!(
            a.get("w").unwrap().value.item().unwrap().to_bits(),
            b.get("w").unwrap().value.item().unwrap().to_bits()
        );
        assert_eq!(sa, sb);
    }

    #[test]
    fn rate_scale_shrinks_the_step_of_matching_tensors() {
        let mut s = ParamStore::new();
        s.add("a/w", Tensor::scalar(0.0));
        s.add("b/w", Tensor::scalar(0.0));
        for p in s.iter_mut() {
            p.grad = Tensor::scalar(1.0);
        }
        let mut adam = AdamState::new(&s, 0.01, 0.5);
        assert_eq!(adam.scale_rate(&s, "b/", 0.1), 1);
        adam.step(&mut s).unwrap();
        let a = s.get("a/w").unwrap().value.item().unwrap();
        let b = s.get("b/w").unwrap().value.item().unwrap();
        assert!((a / b - 10.0).abs() < 1e-9, "{a} {b}");
    }

    #[test]
    fn mismatched_store_is_rejected() {
        let a = one_param(0.0, 0.0);
        let mut adam = AdamState::new(&a, 0.01, 0.5);
        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros([2]));
        assert!(matches!(adam.step(&mut other), Err(Error::Dimension(_))));
    }
}
