use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, Module, Param};
use crate::rng::Rng;

/// Stack of `conv3x3 + ReLU` blocks followed by a `1x1` classifier head.
///
/// Every convolution is same-padded with stride 1, so logits have the input's
/// spatial size. The activation of block `feature_tap` is exposed as the
/// distillation feature.
#[derive(Debug, Clone)]
pub struct SmallCnn {
    in_channels: usize,
    num_classes: usize,
    feature_tap: usize,
    blocks: Vec<Conv2d>,
    head: Conv2d,
}

/// Output of one [`SmallCnn::forward`] call.
#[derive(Debug, Clone)]
pub struct CnnOutput {
    pub logits: Tensor,
    pub feature: Tensor,
}

impl SmallCnn {
    pub fn new(
        in_channels: usize,
        widths: &[usize],
        num_classes: usize,
        feature_tap: usize,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || in_channels == 0 || num_classes == 0 {
            return Err(Error::InvalidArgument(format!(
                "invalid network: in={in_channels} widths={widths:?} classes={num_classes}"
            )));
        }
        if feature_tap >= widths.len() {
            return Err(Error::InvalidArgument(format!(
                "feature tap {feature_tap} out of range for {} blocks",
                widths.len()
            )));
        }
        let mut blocks = Vec::with_capacity(widths.len());
        let mut cin = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            blocks.push(Conv2d::new(&format!("blocks.{i}"), cin, w, 3, 1)?);
            cin = w;
        }
        Ok(SmallCnn {
            in_channels,
            num_classes,
            feature_tap,
            blocks,
            head: Conv2d::new("head", cin, num_classes, 1, 0)?,
        })
    }

    /// Network tapping its last block.
    pub fn with_last_tap(in_channels: usize, widths: &[usize], num_classes: usize) -> Result<Self> {
        Self::new(
            in_channels,
            widths,
            num_classes,
            widths.len().saturating_sub(1),
        )
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_tap(&self) -> usize {
        self.feature_tap
    }

    pub fn widths(&self) -> Vec<usize> {
        self.blocks.iter().map(Conv2d::out_channels).collect()
    }

    /// Channel count of the tapped feature.
    pub fn feature_channels(&self) -> usize {
        self.blocks[self.feature_tap].out_channels()
    }

    pub fn blocks(&self) -> &[Conv2d] {
        &self.blocks
    }

    pub fn head(&self) -> &Conv2d {
        &self.head
    }

    /// Glorot-uniform init of every layer in order (blocks, then head).
    pub fn init_params(&mut self, rng: &mut Rng) -> Result<()> {
        for block in &mut self.blocks {
            block.init_glorot(rng)?;
        }
        self.head.init_glorot(rng)
    }

    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<CnnOutput> {
        if x.ndim() != 4 || x.shape()[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "network expects [N, {}, H, W] input, got {:?}",
                self.in_channels,
                x.shape()
            )));
        }
        let mut h = x.clone();
        let mut feature = None;
        for (i, block) in self.blocks.iter().enumerate() {
            let z = block.forward(tape, &h)?;
            h = tape.relu(&z)?;
            if i == self.feature_tap {
                feature = Some(h.clone());
            }
        }
        let logits = self.head.forward(tape, &h)?;
        Ok(CnnOutput {
            logits,
            feature: feature.expect("tap index validated at construction"),
        })
    }

    /// Rebuild the architecture from checkpoint shapes, tapping the last block.
    pub fn from_param_shapes(shapes: &HashMap<String, Vec<usize>>) -> Result<Self> {
        let missing = |n: &str| Error::Checkpoint(format!("missing parameter `{n}`"));
        let mut widths = Vec::new();
        let mut in_channels = None;
        while let Some(shape) = shapes.get(&format!("blocks.{}.weight", widths.len())) {
            if shape.len() != 4 {
                return Err(Error::Checkpoint(format!(
                    "block weight with shape {shape:?}"
                )));
            }
            in_channels.get_or_insert(shape[1]);
            widths.push(shape[0]);
        }
        let in_channels = in_channels.ok_or_else(|| missing("blocks.0.weight"))?;
        let head = shapes
            .get("head.weight")
            .ok_or_else(|| missing("head.weight"))?;
        Self::with_last_tap(in_channels, &widths, head[0])
    }
}

impl Module for SmallCnn {
    fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.blocks.iter().flat_map(|b| b.params()).collect();
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self
            .blocks
            .iter_mut()
            .flat_map(|b| b.params_mut())
            .collect();
        out.extend(self.head.params_mut());
        out
    }
}

/// Mean over all `N*H*W` pixels of `-log softmax(logits)[label]`.
///
/// `labels` is a row-major `[N, H, W]` class map.
pub fn pixel_cross_entropy(tape: &mut Tape, logits: &Tensor, labels: &[u8]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 4 {
        return Err(Error::Shape(format!(
            "logits must be [N, K, H, W], got {s:?}"
        )));
    }
    let (n, k, hw) = (s[0], s[1], s[2] * s[3]);
    if labels.len() != n * hw {
        return Err(Error::Shape(format!(
            "{} labels for {n}x{}x{} logits",
            labels.len(),
            s[2],
            s[3]
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside [0, {k})"
        )));
    }
    let mut one_hot = vec![0.0; n * k * hw];
    for (i, &l) in labels.iter().enumerate() {
        let (sample, pixel) = (i / hw, i % hw);
        one_hot[(sample * k + l as usize) * hw + pixel] = 1.0;
    }
    let one_hot = Tensor::new(one_hot, s)?;
    let log_p = tape.log_softmax_with_temperature(logits, 1, 1.0)?;
    let picked = tape.mul(&log_p, &one_hot)?;
    let total = tape.sum_all(&picked)?;
    tape.scalar_mul(&total, -1.0 / (n * hw) as f64)
}

/// Outcome of [`inherit_parameters`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InheritReport {
    /// Names copied from the teacher.
    pub copied: Vec<String>,
    /// Names present in both networks whose shapes differ.
    pub skipped: Vec<String>,
}

impl InheritReport {
    pub fn count(&self) -> usize {
        self.copied.len()
    }
}

/// Copy every teacher parameter whose name and shape both match into `student`.
pub fn inherit_parameters(
    student: &mut impl Module,
    teacher: &impl Module,
) -> Result<InheritReport> {
    let source: HashMap<&str, &Param> = teacher
        .params()
        .into_iter()
        .map(|p| (p.name.as_str(), p))
        .collect();
    let mut report = InheritReport::default();
    for p in student.params_mut() {
        let Some(t) = source.get(p.name.as_str()) else {
            continue;
        };
        if t.shape() == p.shape() {
            p.set_data(t.value.data().to_vec())?;
            report.copied.push(p.name.clone());
        } else {
            report.skipped.push(p.name.clone());
        }
    }
    Ok(report)
}
