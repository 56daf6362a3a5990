use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Backward rule: receives the output adjoint and the output values, returns
/// one adjoint per input (`None` for inputs that do not need one).
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>>>;

struct Record {
    inputs: Vec<Tensor>,
    output: Tensor,
    backward: BackwardFn,
}

/// Ordered log of primitive operations executed in a forward pass.
///
/// Every primitive is a method on `Tape`. An operation is recorded only when
/// at least one input requires a gradient; its output then requires one too.
/// [`Tape::backward`] replays the records in reverse, accumulating adjoints
/// into the `grad` slot of every leaf that requires a gradient. A tape can be
/// replayed exactly once.
pub struct Tape {
    records: Vec<Record>,
    recording: bool,
    consumed: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            records: Vec::new(),
            recording: true,
            consumed: false,
        }
    }

    /// A tape that never records: outputs never require gradients.
    pub fn no_grad() -> Self {
        Tape {
            records: Vec::new(),
            recording: false,
            consumed: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub(crate) fn tracks(&self, inputs: &[&Tensor]) -> bool {
        self.recording && inputs.iter().any(|t| t.requires_grad())
    }

    /// Wrap freshly computed output values, recording `backward` when needed.
    pub(crate) fn push(
        &mut self,
        op: &str,
        inputs: &[&Tensor],
        data: Vec<f64>,
        shape: Vec<usize>,
        backward: impl Fn(&[f64], &[f64]) -> Vec<Option<Vec<f64>>> + 'static,
    ) -> Result<Tensor> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(op.to_string()));
        }
        if !self.tracks(inputs) {
            return Ok(Tensor::from_parts(data, shape, false, true));
        }
        let output = Tensor::from_parts(data, shape, true, false);
        self.records.push(Record {
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            output: output.clone(),
            backward: Box::new(backward),
        });
        Ok(output)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: &Tensor) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        if !loss.is_scalar() {
            return Err(Error::NonScalarLoss(loss.shape().to_vec()));
        }
        self.consumed = true;
        if !loss.requires_grad() {
            self.records.clear();
            return Ok(());
        }
        loss.accumulate_grad(&[1.0]);
        while let Some(record) = self.records.pop() {
            let Some(g) = record.output.take_grad() else {
                continue;
            };
            let grads = (record.backward)(&g, record.output.data());
            debug_assert_eq!(grads.len(), record.inputs.len());
            for (input, grad) in record.inputs.iter().zip(grads) {
                if let Some(grad) = grad {
                    if input.requires_grad() {
                        input.accumulate_grad_owned(grad);
                    }
                }
            }
        }
        Ok(())
    }
}
