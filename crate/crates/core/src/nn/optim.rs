use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::Param;

/// Plain SGD with heavy-ball momentum and L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.0005,
            batch_size: 16,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        // lr == 0 is accepted so that frozen runs can still step buffers.
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// One update of every parameter, then gradients are cleared.
///
/// `g = grad + wd * w; buf = momentum * buf + g; w -= lr * buf`.
/// Fails without touching anything if some parameter has no gradient.
pub fn sgd_step(params: &mut [&mut Param], cfg: &SgdConfig) -> Result<()> {
    let grads = params
        .iter()
        .map(|p| {
            p.value
                .grad()
                .ok_or_else(|| Error::MissingGradient(p.name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    for (p, grad) in params.iter_mut().zip(grads) {
        let mut value = p.value.data().to_vec();
        for ((w, buf), g) in value.iter_mut().zip(p.momentum.iter_mut()).zip(grad) {
            let g = g + cfg.weight_decay * *w;
            *buf = cfg.momentum * *buf + g;
            *w -= cfg.lr * *buf;
        }
        p.set_data(value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn param_with_grad(value: f64, grad: f64) -> Param {
        let p = Param::new("w", Tensor::new(vec![value], &[1]).unwrap());
        p.value.accumulate_grad(&[grad]);
        p
    }

    fn cfg(lr: f64, momentum: f64, weight_decay: f64) -> SgdConfig {
        SgdConfig {
            lr,
            momentum,
            weight_decay,
            batch_size: 1,
        }
    }

    #[test]
    fn vanilla_step() {
        let mut p = param_with_grad(1.0, 1.0);
        sgd_step(&mut [&mut p], &cfg(0.1, 0.0, 0.0)).unwrap();
        assert!((p.value.data()[0] - 0.9).abs() < 1e-15);
        assert!(p.value.grad().is_none());
    }

    #[test]
    fn zero_lr_updates_only_buffer() {
        let mut p = param_with_grad(1.0, 2.0);
        sgd_step(&mut [&mut p], &cfg(0.0, 0.9, 0.0)).unwrap();
        assert_eq!(p.value.data()[0], 1.0);
        assert_eq!(p.momentum[0], 2.0);
    }

    #[test]
    fn momentum_recurrence() {
        // buf1 = 1, w1 = -0.1; buf2 = 0.9 + 1 = 1.9, w2 = -0.1 - 0.19 = -0.29
        let mut p = param_with_grad(0.0, 1.0);
        let c = cfg(0.1, 0.9, 0.0);
        sgd_step(&mut [&mut p], &c).unwrap();
        p.value.accumulate_grad(&[1.0]);
        sgd_step(&mut [&mut p], &c).unwrap();
        assert!((p.value.data()[0] - (-0.29)).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut a = param_with_grad(1.0, 1.0);
        let mut b = Param::new("b", Tensor::new(vec![1.0], &[1]).unwrap());
        let r = sgd_step(&mut [&mut a, &mut b], &cfg(0.1, 0.0, 0.0));
        assert!(matches!(r, Err(Error::MissingGradient(name)) if name == "b"));
        assert_eq!(a.value.data()[0], 1.0);
    }

    #[test]
    fn weight_decay_shrinks_norm() {
        // Heavy-ball decay stays monotone while lr * wd <= (1 - sqrt(momentum))^2.
        for c in [
            SgdConfig::default(),
            cfg(0.1, 0.0, 0.05),
            cfg(0.1, 0.5, 0.05),
        ] {
            let mut p = Param::new("w", Tensor::new(vec![3.0, -4.0, 0.5], &[3]).unwrap());
            let mut last = f64::INFINITY;
            for _ in 0..200 {
                p.value.accumulate_grad(&[0.0; 3]);
                sgd_step(&mut [&mut p], &c).unwrap();
                let norm: f64 = p.value.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(norm < last, "{c:?}");
                last = norm;
            }
        }
    }

    #[test]
    fn validation() {
        assert!(SgdConfig::default().validate().is_ok());
        assert!(cfg(-1.0, 0.0, 0.0).validate().is_err());
        assert!(cfg(0.1, 1.0, 0.0).validate().is_err());
        assert!(cfg(0.1, 0.5, -0.1).validate().is_err());
    }
}
