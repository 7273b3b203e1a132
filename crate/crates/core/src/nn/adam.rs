use serde::{Deserialize, Serialize};

use super::ParameterStore;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coupled (L2-style) decay: `λ·θ` is added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 5e-5,
        }
    }
}

/// First/second moment estimates for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParameterStore<T>, config: AdamConfig) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the accumulated gradients, then clears them.
    ///
    /// Nothing is modified when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParameterStore<T>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::InvalidArgument("optimizer state does not match parameter store".into()));
        }
        for (name, p) in store.iter() {
            let grad = p
                .grad()
                .ok_or_else(|| Error::MissingData(format!("gradient of {name}")))?;
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite {
                    location: format!("gradient of parameter {name} at element {i}"),
                });
            }
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powf(self.t as f64);
        let bc2 = 1.0 - c.beta2.powf(self.t as f64);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (lr, eps, wd) = (T::lit(c.learning_rate), T::lit(c.epsilon), T::lit(c.weight_decay));
        let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));
        for ((_, p), (m, v)) in store.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let grad = p.grad().expect("checked above").to_vec();
            for (i, theta) in p.data_mut().iter_mut().enumerate() {
                let g = grad[i] + wd * *theta;
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(theta: f64) -> ParameterStore<f64> {
        let mut s = ParameterStore::new(0);
        s.insert("theta", Tensor::new([1], vec![theta]).unwrap()).unwrap();
        s
    }

    fn set_grad(s: &mut ParameterStore<f64>, g: f64) {
        let p = s.by_name_mut("theta").unwrap();
        p.zero_grad();
        p.accumulate_grad(&[g]).unwrap();
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(1.0);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        set_grad(&mut s, 1.0);
        adam.step(&mut s).unwrap();
        let theta = s.by_name("theta").unwrap().item();
        assert!((theta - 0.995).abs() < 1e-9, "{theta}");
        assert_eq!(s.by_name("theta").unwrap().grad().unwrap(), &[0.0]);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut s = scalar_store(0.3);
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        let mut adam = AdamState::new(&s, cfg);
        for _ in 0..5 {
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.by_name("theta").unwrap().item(), 0.3);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut s = scalar_store(0.3);
        let cfg = AdamConfig { learning_rate: 0.0, weight_decay: 0.0, ..AdamConfig::default() };
        let mut adam = AdamState::new(&s, cfg);
        for g in [1.0, -3.0, 7.5] {
            set_grad(&mut s, g);
            adam.step(&mut s).unwrap();
        }
        assert_eq!(s.by_name("theta").unwrap().item(), 0.3);
    }

    #[test]
    fn non_finite_gradient_aborts_and_names_parameter() {
        let mut s = scalar_store(1.0);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        set_grad(&mut s, f64::NAN);
        let err = adam.step(&mut s).unwrap_err();
        assert!(err.to_string().contains("theta"));
        assert_eq!(s.by_name("theta").unwrap().item(), 1.0);
        assert_eq!(adam.steps(), 0);
    }

    /// Hand-rolled scalar Adam with coupled decay.
    fn reference_trace(theta0: f64, cfg: AdamConfig, grad: impl Fn(f64) -> f64, steps: usize) -> Vec<f64> {
        let (mut theta, mut m, mut v) = (theta0, 0.0, 0.0);
        let mut out = Vec::new();
        for t in 1..=steps {
            let g = grad(theta) + cfg.weight_decay * theta;
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t as i32));
            let vh = v / (1.0 - cfg.beta2.powi(t as i32));
            theta -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            out.push(theta);
        }
        out
    }

    #[test]
    fn matches_scalar_reference_on_quadratic() {
        let cfg = AdamConfig { learning_rate: 0.1, weight_decay: 0.01, ..AdamConfig::default() };
        // objective (θ - 3)^2
        let grad = |th: f64| 2.0 * (th - 3.0);
        let expect = reference_trace(-1.0, cfg, grad, 10);
        let mut s = scalar_store(-1.0);
        let mut adam = AdamState::new(&s, cfg);
        for e in expect {
            let th = s.by_name("theta").unwrap().item();
            set_grad(&mut s, grad(th));
            adam.step(&mut s).unwrap();
            let got = s.by_name("theta").unwrap().item();
            assert!((got - e).abs() < 1e-10, "{got} vs {e}");
        }
    }
}
