use crate::error::{Result, TensorError};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected first and second moment estimates, one moment
/// buffer pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|t| vec![0.0; t.numel()]).collect();
        Self {
            config,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// Applies one update using the gradients stored on `params`.
    ///
    /// Every tensor must carry a gradient; the check runs before any value
    /// is modified.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(TensorError::Contract(format!(
                "optimizer tracks {} tensors, parameter set has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (e, m) in params.entries().iter().zip(&self.m) {
            match e.tensor.grad() {
                None => {
                    return Err(TensorError::Contract(format!(
                        "missing gradient for `{}`",
                        e.name
                    )))
                }
                Some(g) if g.len() != m.len() => {
                    return Err(TensorError::Contract(format!(
                        "moment buffer size mismatch for `{}`",
                        e.name
                    )))
                }
                Some(_) => {}
            }
        }

        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for ((t, m), v) in params.tensors_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = t.grad().expect("checked above").to_vec();
            for (((p, g), m), v) in t.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamEntry;
    use crate::tensor::Tensor;

    fn params(data: Vec<f64>, grad: Option<Vec<f64>>) -> ParamSet {
        let mut t = Tensor::from_vec(data).unwrap().with_grad(true);
        if let Some(g) = grad {
            t.set_grad(g).unwrap();
        }
        ParamSet::new(vec![ParamEntry {
            layer: 1,
            name: "w".into(),
            tensor: t,
        }])
        .unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let g = vec![0.3, -2.0, 1e-3];
        let mut p = params(vec![1.0, 1.0, 1.0], Some(g.clone()));
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, 0.005).unwrap();
        for (x, g) in p.tensor(0).data().iter().zip(&g) {
            let want = 1.0 - 0.005 * g / (g.abs() + 1e-8);
            assert!((x - want).abs() < 1e-15, "{x} vs {want}");
            assert!(((x - 1.0).abs() - 0.005).abs() < 1e-7);
        }
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = params(vec![0.5, -0.25], Some(vec![0.0, 0.0]));
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        for _ in 0..3 {
            opt.step(&mut p, 0.01).unwrap();
        }
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn identical_state_gives_identical_update() {
        let p0 = params(vec![0.1, 0.2], Some(vec![0.4, -0.6]));
        let opt0 = Adam::new(AdamConfig::default(), &p0);
        let (mut a, mut b) = (p0.clone(), p0.clone());
        let (mut oa, mut ob) = (opt0.clone(), opt0);
        oa.step(&mut a, 0.005).unwrap();
        ob.step(&mut b, 0.005).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(oa, ob);
    }

    #[test]
    fn missing_gradient_is_rejected_without_mutation() {
        let mut p = params(vec![1.0], None);
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        assert!(matches!(opt.step(&mut p, 0.1), Err(TensorError::Contract(_))));
        assert!(p.bit_eq(&before));
        assert_eq!(opt.steps(), 0);
    }
}
