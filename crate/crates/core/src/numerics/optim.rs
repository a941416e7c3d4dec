use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ParamStore, Scalar, Tensor};

/// AdamW hyperparameters. The learning rate stays fixed for a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| vec![T::zero(); t.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Rebuilds optimizer state from saved moments.
    pub fn from_state(
        config: AdamWConfig,
        step: u64,
        m: Vec<Vec<T>>,
        v: Vec<Vec<T>>,
    ) -> Result<Self> {
        if m.len() != v.len() || m.iter().zip(&v).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Config("optimizer moment lengths differ".into()));
        }
        if v.iter().flatten().any(|&x| x < T::zero()) {
            return Err(Error::Config("negative second moment".into()));
        }
        Ok(Self { config, step, m, v })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.v
    }

    /// One update: `p ← p − lr·wd·p − lr·m̂/(√v̂ + eps)`.
    ///
    /// Every parameter must carry a gradient; the error names the first that
    /// does not. Nothing is modified on error.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        if let Some((_, name, _)) = params.iter().find(|(_, _, t)| t.grad().is_none()) {
            return Err(Error::MissingGrad(name.to_string()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let decay = T::lit(c.lr * c.weight_decay);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let tensor: &mut Tensor<T> = params.get_mut(id);
            let grad = tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = b1 * m[j] + (T::one() - b1) * g;
                v[j] = b2 * v[j] + (T::one() - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p = *p - decay * *p - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(p: f64, g: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.insert("p", Tensor::scalar(p));
        s.get_mut(id).set_grad(vec![g]);
        s
    }

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: wd,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(1.0, 1.0);
        let mut opt = AdamW::new(cfg(0.1, 0.0), &s);
        opt.step(&mut s).unwrap();
        // m̂ = g and v̂ = g², so the step is lr·g/(|g| + eps).
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((s.by_name("p").unwrap().data()[0] - expected).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn zero_grad_no_decay_is_fixed_point() {
        let mut s = scalar_store(1.0, 0.0);
        let mut opt = AdamW::new(cfg(0.1, 0.0), &s);
        opt.step(&mut s).unwrap();
        assert_eq!(s.by_name("p").unwrap().data()[0], 1.0);
    }

    #[test]
    fn decay_only() {
        let mut s = scalar_store(1.0, 0.0);
        let mut opt = AdamW::new(cfg(0.1, 0.01), &s);
        opt.step(&mut s).unwrap();
        assert!((s.by_name("p").unwrap().data()[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut s = ParamStore::<f64>::new();
        s.insert("layer.weight", Tensor::scalar(1.0));
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        match opt.step(&mut s) {
            Err(Error::MissingGrad(name)) => assert_eq!(name, "layer.weight"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(opt.step_count(), 0);
    }

    #[test]
    fn matches_hand_rolled_adam_on_quadratic() {
        // f(p) = (p - 3)², gradient 2(p - 3).
        let mut s = scalar_store(0.5, 0.0);
        let c = cfg(0.05, 0.0);
        let mut opt = AdamW::new(c, &s);

        let (mut p, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * (p - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            p -= 0.05 * mh / (vh.sqrt() + 1e-8);

            let cur = s.by_name("p").unwrap().data()[0];
            let id = s.id("p").unwrap();
            s.get_mut(id).set_grad(vec![2.0 * (cur - 3.0)]);
            opt.step(&mut s).unwrap();
            let got = s.by_name("p").unwrap().data()[0];
            assert!((got - p).abs() < 1e-12, "step {t}: {got} vs {p}");
        }
    }
}
