use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Step-scheduled SGD with momentum: the learning rate drops from
/// `learning_rate` to `decayed_rate` at `decay_step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub decay_step: usize,
    pub decayed_rate: f64,
    pub momentum: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 1e-3,
            decay_step: 800,
            decayed_rate: 1e-4,
            momentum: 0.9,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.decayed_rate <= 0.0 {
            return Err(Error::invalid("sgd: learning rates must be positive"));
        }
        if self.decay_step == 0 {
            return Err(Error::invalid("sgd: decay_step must be positive"));
        }
        if self.decayed_rate >= self.learning_rate {
            return Err(Error::invalid(format!(
                "sgd: decayed_rate {} must be below learning_rate {}",
                self.decayed_rate, self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("sgd: momentum must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn rate_at(&self, step: usize) -> f64 {
        if step < self.decay_step {
            self.learning_rate
        } else {
            self.decayed_rate
        }
    }
}

/// Optimizer state: one velocity buffer per parameter, matched by position.
pub struct Sgd<T> {
    config: SgdConfig,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sgd {
            config,
            velocity: Vec::new(),
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// One update: `v ← momentum·v + grad`, `p ← p − lr(step)·v`. Every
    /// parameter must carry a gradient (use zeros for untouched ones);
    /// gradients are cleared afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], step: usize) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::invalid(format!(
                "sgd: parameter count changed from {} to {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.grad().is_none() {
                return Err(Error::invalid(format!(
                    "sgd: parameter {i} has no gradient; run a backward pass first"
                )));
            }
            if self.velocity[i].len() != p.numel() {
                return Err(Error::invalid(format!("sgd: parameter {i} changed size")));
            }
        }
        let lr = T::from_f64(self.config.rate_at(step));
        let mu = T::from_f64(self.config.momentum);
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            {
                let grad = p.grad().unwrap();
                for (v, &g) in vel.iter_mut().zip(grad) {
                    *v = mu * *v + g;
                }
            }
            for (x, &v) in p.data_mut().iter_mut().zip(vel.iter()) {
                *x -= lr * v;
            }
            p.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(lr: f64) -> SgdConfig {
        SgdConfig {
            learning_rate: lr,
            decay_step: 10,
            decayed_rate: lr / 10.0,
            momentum: 0.0,
        }
    }

    #[test]
    fn basic_update() {
        let mut p = Tensor::from_vec(&[1], vec![1.0f32]).unwrap();
        p.set_grad(vec![1.0]).unwrap();
        let mut sgd = Sgd::new(plain(0.1)).unwrap();
        sgd.step(&mut [&mut p], 0).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-7);
        assert!(p.grad().is_none());
    }

    #[test]
    fn decayed_rate_after_decay_step() {
        let mut p = Tensor::from_vec(&[1], vec![1.0f32]).unwrap();
        p.set_grad(vec![1.0]).unwrap();
        let mut sgd = Sgd::new(plain(0.1)).unwrap();
        sgd.step(&mut [&mut p], 10).unwrap();
        assert!((p.data()[0] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = Tensor::from_vec(&[2], vec![3.0f32, -4.0]).unwrap();
        p.set_grad(vec![0.0, 0.0]).unwrap();
        let mut sgd = Sgd::new(plain(0.1)).unwrap();
        sgd.step(&mut [&mut p], 0).unwrap();
        assert_eq!(p.data(), &[3.0, -4.0]);
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut p = Tensor::<f32>::zeros(&[2]);
        let mut sgd = Sgd::new(plain(0.1)).unwrap();
        assert!(sgd.step(&mut [&mut p], 0).is_err());
    }

    #[test]
    fn quadratic_loss_decreases_monotonically() {
        // loss = ½‖p‖², gradient = p; any lr < 1 contracts the iterate.
        let mut p = Tensor::from_vec(&[3], vec![2.0f32, -1.5, 0.5]).unwrap();
        let mut sgd = Sgd::new(SgdConfig {
            learning_rate: 0.5,
            decay_step: 1000,
            decayed_rate: 0.05,
            momentum: 0.0,
        })
        .unwrap();
        let loss = |p: &Tensor<f32>| -> f32 { p.data().iter().map(|v| 0.5 * v * v).sum() };
        let mut prev = loss(&p);
        for step in 0..20 {
            let g = p.data().to_vec();
            p.set_grad(g).unwrap();
            sgd.step(&mut [&mut p], step).unwrap();
            let now = loss(&p);
            assert!(now < prev, "step {step}: {now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn config_validation() {
        assert!(SgdConfig::default().validate().is_ok());
        let bad = SgdConfig {
            decayed_rate: 0.01,
            learning_rate: 0.001,
            ..SgdConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
