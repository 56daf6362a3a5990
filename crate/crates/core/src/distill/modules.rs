use crate::autodiff::{Tape, Tensor};
use crate::distill::config::DistillConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Module, Param};
use crate::rng::Rng;

/// 1x1 convolution mapping student channels to teacher channels; the identity
/// when the counts already agree.
#[derive(Debug, Clone)]
pub struct AlignModule {
    in_channels: usize,
    out_channels: usize,
    conv: Option<Conv2d>,
}

impl AlignModule {
    /// Zero-initialized align layer (identity when `cs == ct`).
    pub fn new(cs: usize, ct: usize) -> Result<Self> {
        let conv = (cs != ct)
            .then(|| Conv2d::new("align", cs, ct, 1, 0))
            .transpose()?;
        Ok(AlignModule {
            in_channels: cs,
            out_channels: ct,
            conv,
        })
    }

    pub fn identity(channels: usize) -> Self {
        AlignModule {
            in_channels: channels,
            out_channels: channels,
            conv: None,
        }
    }

    /// Align layer over caller-provided `[Ct, Cs, 1, 1]` weight and `[Ct]` bias.
    pub fn from_tensors(weight: Tensor, bias: Tensor) -> Result<Self> {
        let conv = Conv2d::from_tensors("align", weight, bias, 0)?;
        if conv.kernel() != (1, 1) {
            return Err(Error::Shape("align kernel must be 1x1".into()));
        }
        Ok(AlignModule {
            in_channels: conv.in_channels(),
            out_channels: conv.out_channels(),
            conv: Some(conv),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.conv.is_none()
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn init(&mut self, rng: &mut Rng) -> Result<()> {
        match self.conv.as_mut() {
            Some(c) => c.init_glorot(rng),
            None => Ok(()),
        }
    }

    pub fn apply(&self, tape: &mut Tape, s: &Tensor) -> Result<Tensor> {
        if s.ndim() != 4 || s.shape()[1] != self.in_channels {
            return Err(Error::Shape(format!(
                "align expects [N, {}, H, W], got {:?}",
                self.in_channels,
                s.shape()
            )));
        }
        match &self.conv {
            Some(c) => c.forward(tape, s),
            None => Ok(s.clone()),
        }
    }
}

impl Module for AlignModule {
    fn params(&self) -> Vec<&Param> {
        self.conv.iter().flat_map(|c| c.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.conv.iter_mut().flat_map(|c| c.params_mut()).collect()
    }
}

/// `conv3x3 -> ReLU -> conv3x3`, shape-preserving projector.
#[derive(Debug, Clone)]
pub struct GenerationModule {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl GenerationModule {
    pub fn new(channels: usize, hidden: usize) -> Result<Self> {
        Ok(GenerationModule {
            conv1: Conv2d::new("generator.conv1", channels, hidden, 3, 1)?,
            conv2: Conv2d::new("generator.conv2", hidden, channels, 3, 1)?,
        })
    }

    /// Generator that passes non-negative inputs through unchanged: both
    /// convolutions are centre-tap identities with zero bias, so only the
    /// ReLU acts.
    pub fn identity(channels: usize) -> Result<Self> {
        let mut w = vec![0.0; channels * channels * 9];
        for c in 0..channels {
            w[(c * channels + c) * 9 + 4] = 1.0;
        }
        let layer = |name: &str| {
            Conv2d::from_tensors(
                name,
                Tensor::new(w.clone(), &[channels, channels, 3, 3])?,
                Tensor::zeros(&[channels])?,
                1,
            )
        };
        Self::from_layers(layer("generator.conv1")?, layer("generator.conv2")?)
    }

    pub fn from_layers(conv1: Conv2d, conv2: Conv2d) -> Result<Self> {
        let ok = conv1.kernel() == (3, 3)
            && conv2.kernel() == (3, 3)
            && conv1.padding == 1
            && conv2.padding == 1
            && conv1.out_channels() == conv2.in_channels()
            && conv2.out_channels() == conv1.in_channels();
        if !ok {
            return Err(Error::Shape(
                "generator layers must be C->hid->C 3x3 same-padded".into(),
            ));
        }
        Ok(GenerationModule { conv1, conv2 })
    }

    pub fn channels(&self) -> usize {
        self.conv1.in_channels()
    }

    pub fn hidden(&self) -> usize {
        self.conv1.out_channels()
    }

    pub fn init(&mut self, rng: &mut Rng) -> Result<()> {
        self.conv1.init_glorot(rng)?;
        self.conv2.init_glorot(rng)
    }

    pub fn generate(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 4 || x.shape()[1] != self.channels() {
            return Err(Error::Shape(format!(
                "generator expects [N, {}, H, W], got {:?}",
                self.channels(),
                x.shape()
            )));
        }
        let h = self.conv1.forward(tape, x)?;
        let h = tape.relu(&h)?;
        self.conv2.forward(tape, &h)
    }
}

impl Module for GenerationModule {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.conv1.params();
        p.extend(self.conv2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv1.params_mut();
        p.extend(self.conv2.params_mut());
        p
    }
}

/// Training-time helpers owned by the distillation loss, discarded after
/// training.
#[derive(Debug, Clone)]
pub struct Auxiliary {
    pub align: AlignModule,
    pub generator: Option<GenerationModule>,
}

impl Auxiliary {
    /// Modules required by `cfg.method` between `cs` student and `ct` teacher
    /// channels, Glorot-initialized from `rng`. `None` when the method uses
    /// no feature auxiliaries.
    pub fn for_method(
        cfg: &DistillConfig,
        cs: usize,
        ct: usize,
        rng: &mut Rng,
    ) -> Result<Option<Self>> {
        if !cfg.method.uses_align() {
            return Ok(None);
        }
        let mut align = AlignModule::new(cs, ct)?;
        align.init(rng)?;
        let generator = if cfg.method.uses_generator() {
            let mut g = GenerationModule::new(ct, cfg.hidden_channels.unwrap_or(ct))?;
            g.init(rng)?;
            Some(g)
        } else {
            None
        };
        Ok(Some(Auxiliary { align, generator }))
    }

    /// `Cs*Ct + Ct` (align, when present) `+ 9*Ct*hid + hid + 9*hid*Ct + Ct`.
    pub fn closed_form_param_count(cs: usize, ct: usize, hidden: Option<usize>) -> usize {
        let align = if cs != ct { cs * ct + ct } else { 0 };
        let generator = hidden.map_or(0, |hid| 9 * ct * hid + hid + 9 * hid * ct + ct);
        align + generator
    }
}

impl Module for Auxiliary {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.align.params();
        if let Some(g) = &self.generator {
            p.extend(g.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.align.params_mut();
        if let Some(g) = &mut self.generator {
            p.extend(g.params_mut());
        }
        p
    }
}
