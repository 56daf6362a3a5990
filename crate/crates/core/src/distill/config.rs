use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which distillation signal is added to the task loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Task loss only.
    None,
    /// Noise + generator + channel-wise KL (generative denoise distillation).
    Gdd,
    /// Channel-wise KL on aligned features.
    Cwd,
    /// Masked generative distillation.
    Mgd,
    /// Spatial feature MSE on aligned features.
    Mse,
    /// Temperature-softened logit KL.
    LogitKd,
    /// Noise + generator with spatial MSE (the stochastic-noise-only arm).
    SnOnly,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::None,
        Method::Gdd,
        Method::Cwd,
        Method::Mgd,
        Method::Mse,
        Method::LogitKd,
        Method::SnOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Gdd => "gdd",
            Method::Cwd => "cwd",
            Method::Mgd => "mgd",
            Method::Mse => "mse",
            Method::LogitKd => "logit_kd",
            Method::SnOnly => "sn_only",
        }
    }

    pub fn uses_teacher(self) -> bool {
        self != Method::None
    }

    /// Needs the channel-align layer (feature-based methods).
    pub fn uses_align(self) -> bool {
        matches!(
            self,
            Method::Gdd | Method::Cwd | Method::Mgd | Method::Mse | Method::SnOnly
        )
    }

    pub fn uses_generator(self) -> bool {
        matches!(self, Method::Gdd | Method::Mgd | Method::SnOnly)
    }

    /// Perturbs with Gaussian noise (in the feature or the image).
    pub fn uses_noise(self) -> bool {
        matches!(self, Method::Gdd | Method::SnOnly)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// Where the Gaussian perturbation is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectLocation {
    /// Added to the aligned student feature.
    Feature,
    /// Added to the raw input image before the student forward pass.
    Image,
}

impl InjectLocation {
    pub fn name(self) -> &'static str {
        match self {
            InjectLocation::Feature => "feature",
            InjectLocation::Image => "image",
        }
    }
}

impl fmt::Display for InjectLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InjectLocation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" => Ok(InjectLocation::Feature),
            "image" => Ok(InjectLocation::Image),
            _ => Err(Error::Config(format!("unknown inject location `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub method: Method,
    /// Weight of the distillation term in the total loss.
    pub alpha: f64,
    /// Softmax temperature.
    pub tau: f64,
    /// Noise mean.
    pub mu: f64,
    /// Noise standard deviation.
    pub sigma: f64,
    /// Fraction of masked spatial positions (mgd only).
    pub mask_ratio: f64,
    pub inject_location: InjectLocation,
    /// Generator width; `None` means the teacher's channel count.
    #[serde(default)]
    pub hidden_channels: Option<usize>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            method: Method::Gdd,
            alpha: 5.0,
            tau: 4.0,
            mu: 0.0,
            sigma: 1.0,
            mask_ratio: 0.5,
            inject_location: InjectLocation::Feature,
            hidden_channels: None,
        }
    }
}

impl DistillConfig {
    pub fn none() -> Self {
        DistillConfig {
            method: Method::None,
            ..Self::default()
        }
    }

    /// Every field is checked, including those the method ignores.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !self.mu.is_finite() {
            return bad(format!("mu must be finite, got {}", self.mu));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return bad(format!(
                "mask_ratio must be in [0, 1), got {}",
                self.mask_ratio
            ));
        }
        if self.hidden_channels == Some(0) {
            return bad("hidden_channels must be positive".into());
        }
        Ok(())
    }

    /// Noise goes into the aligned feature (and not the image).
    pub fn feature_noise(&self) -> bool {
        self.method.uses_noise() && self.inject_location == InjectLocation::Feature
    }

    /// Noise goes into the input image.
    pub fn image_noise(&self) -> bool {
        self.method.uses_noise() && self.inject_location == InjectLocation::Image
    }
}
