use std::f64::consts::PI;

use crate::autodiff::tensor::{numel_of, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Gaussian probability density with mean `mu` and standard deviation `sigma`.
pub fn gaussian_density(z: f64, mu: f64, sigma: f64) -> f64 {
    let d = z - mu;
    (-(d * d) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// i.i.d. `N(mu, sigma^2)` samples drawn with Box–Muller from `rng`.
///
/// With `sigma == 0` the result is the constant `mu` and the generator is
/// left untouched.
pub fn gaussian_sample(rng: &mut Rng, shape: &[usize], mu: f64, sigma: f64) -> Result<Tensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let n = numel_of(shape);
    let data = if sigma == 0.0 {
        vec![mu; n]
    } else {
        (0..n).map(|_| rng.normal(mu, sigma)).collect()
    };
    Tensor::new(data, shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_constant() {
        let mut rng = Rng::new(1);
        let before = rng.clone();
        let t = gaussian_sample(&mut rng, &[3, 4], 0.0, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 0.0));
        assert_eq!(rng, before);
    }

    #[test]
    fn density_at_mode() {
        assert!((gaussian_density(0.0, 0.0, 1.0) - 0.398942).abs() < 1e-6);
        assert!((gaussian_density(2.0, 2.0, 0.5) - 2.0 * 0.398942280401).abs() < 1e-9);
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(gaussian_sample(&mut Rng::new(0), &[2], 0.0, -1.0).is_err());
    }

    #[test]
    fn reproducible() {
        let a = gaussian_sample(&mut Rng::new(8), &[100], 1.0, 2.0).unwrap();
        let b = gaussian_sample(&mut Rng::new(8), &[100], 1.0, 2.0).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
