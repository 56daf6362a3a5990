use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A named trainable tensor plus its SGD momentum buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub momentum: Vec<f64>,
}

impl Param {
    /// Wraps `value` as a gradient-tracked leaf. Tensors that already track
    /// gradients are used as-is, so callers can read their gradients back.
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let value = if value.requires_grad() && value.is_leaf() {
            value
        } else {
            value.to_leaf()
        };
        Param {
            name: name.into(),
            momentum: vec![0.0; value.numel()],
            value,
        }
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Result<Self> {
        Ok(Self::new(name, Tensor::zeros(shape)?))
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    /// Replace the values (same shape), dropping any stale gradient.
    pub fn set_data(&mut self, data: Vec<f64>) -> Result<()> {
        let shape = self.value.shape().to_vec();
        self.value = Tensor::leaf(data, &shape, true)?;
        Ok(())
    }
}

/// Anything owning trainable parameters.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    fn zero_grad(&self) {
        self.params().iter().for_each(|p| p.value.zero_grad());
    }
}

/// Stride-1 convolution layer with bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub padding: usize,
}

impl Conv2d {
    /// Zero-initialized `k x k` convolution named `<prefix>.weight` / `<prefix>.bias`.
    pub fn new(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    ) -> Result<Self> {
        Ok(Conv2d {
            weight: Param::zeros(
                format!("{prefix}.weight"),
                &[out_channels, in_channels, kernel, kernel],
            )?,
            bias: Param::zeros(format!("{prefix}.bias"), &[out_channels])?,
            padding,
        })
    }

    /// Layer over caller-provided tensors.
    pub fn from_tensors(
        prefix: &str,
        weight: Tensor,
        bias: Tensor,
        padding: usize,
    ) -> Result<Self> {
        let ws = weight.shape();
        if ws.len() != 4 || bias.shape() != [ws[0]] {
            return Err(Error::Shape(format!(
                "conv layer `{prefix}`: weight {ws:?} / bias {:?}",
                bias.shape()
            )));
        }
        Ok(Conv2d {
            weight: Param::new(format!("{prefix}.weight"), weight),
            bias: Param::new(format!("{prefix}.bias"), bias),
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weight.shape()[2], self.weight.shape()[3])
    }

    /// Glorot bound `sqrt(6 / (fan_in + fan_out))` with receptive-field fans.
    pub fn glorot_bound(&self) -> f64 {
        let (kh, kw) = self.kernel();
        let fan_in = (self.in_channels() * kh * kw) as f64;
        let fan_out = (self.out_channels() * kh * kw) as f64;
        (6.0 / (fan_in + fan_out)).sqrt()
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init_glorot(&mut self, rng: &mut Rng) -> Result<()> {
        let b = self.glorot_bound();
        let data = (0..self.weight.value.numel())
            .map(|_| rng.uniform_range(-b, b))
            .collect();
        self.weight.set_data(data)?;
        self.bias.set_data(vec![0.0; self.out_channels()])?;
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
        tape.conv2d(x, &self.weight.value, &self.bias.value, 1, self.padding)
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
