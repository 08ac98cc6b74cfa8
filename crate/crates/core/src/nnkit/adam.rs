use serde::{Deserialize, Serialize};

use super::network::{Gradients, NetworkParams};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients) -> Result<()> {
        if grads.tensors.len() != self.m.len() || params.tensors.len() != self.m.len() {
            return Err(shape_err!("Adam state, parameters and gradients disagree in tensor count"));
        }
        for ((p, g), m) in params.tensors.iter().zip(&grads.tensors).zip(&self.m) {
            if p.len() != g.len() || p.len() != m.len() {
                return Err(shape_err!("gradient shape {:?} vs parameter shape {:?}", g.shape(), p.shape()));
            }
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient passed to Adam".into()));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params.tensors.iter_mut().zip(&grads.tensors).zip(self.m.iter_mut().zip(&mut self.v)) {
            for (((pi, &gi), mi), vi) in p.values_mut().iter_mut().zip(g.values()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *pi -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::tensor::Tensor;
    use super::*;

    fn single(value: f64) -> NetworkParams {
        NetworkParams { seed: 0, tensors: vec![Tensor::new(vec![1], vec![value]).unwrap()] }
    }

    fn grad(value: f64) -> Gradients {
        Gradients { tensors: vec![Tensor::from_raw(vec![1], vec![value])] }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(0.7);
        let mut s = AdamState::new(&p, AdamConfig::default());
        s.step(&mut p, &grad(0.0)).unwrap();
        assert_eq!(p.tensors[0].values()[0], 0.7);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so the step is lr / (1 + eps)
        let mut p = single(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        s.step(&mut p, &grad(1.0)).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.tensors[0].values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr_sign() {
        let mut p = single(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..5000 {
            s.step(&mut p, &grad(-3.0)).unwrap();
            let now = p.tensors[0].values()[0];
            last_step = now - prev;
            prev = now;
        }
        assert!((last_step - 1e-3).abs() < 1e-6, "{last_step}");
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = single(0.0);
        let mut s = AdamState::new(&p, AdamConfig::default());
        assert!(matches!(s.step(&mut p, &grad(f64::NAN)), Err(Error::NonFinite(_))));
        assert_eq!(s.step, 0);
    }
}
