use crate::autodiff::tape::Tape;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Where a gradient check was worst.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compare tape adjoints of scalar `f` with central differences.
///
/// Returns the worst relative error `|a - n| / max(|a|, |n|, 1e-8)` over all
/// coordinates of all `inputs`.
pub fn check_gradients<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    check_gradients_report(f, inputs, h).map(|r| r.max_rel_error)
}

pub fn check_gradients_report<F>(f: F, inputs: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor>,
{
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {h}"
        )));
    }
    if inputs.iter().flat_map(|t| t.data()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "gradient check inputs must be finite".into(),
        ));
    }
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::to_leaf).collect();
    let mut tape = Tape::new();
    let out = f(&mut tape, &leaves)?;
    if !out.is_scalar() {
        return Err(Error::NonScalarLoss(out.shape().to_vec()));
    }
    tape.backward(&out)?;

    let eval = |which: usize, index: usize, value: f64| -> Result<f64> {
        let probe: Vec<Tensor> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if i == which {
                    let mut data = t.data().to_vec();
                    data[index] = value;
                    Tensor::new(data, t.shape())
                } else {
                    Ok(t.detach())
                }
            })
            .collect::<Result<_>>()?;
        Ok(f(&mut Tape::no_grad(), &probe)?.item())
    };

    let mut worst = GradCheckReport {
        max_rel_error: 0.0,
        input: 0,
        index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for (which, (leaf, input)) in leaves.iter().zip(inputs).enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for (index, &x) in input.data().iter().enumerate() {
            let numeric = (eval(which, index, x + h)? - eval(which, index, x - h)?) / (2.0 * h);
            let a = analytic[index];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst.max_rel_error {
                worst = GradCheckReport {
                    max_rel_error: rel,
                    input: which,
                    index,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(worst)
}
