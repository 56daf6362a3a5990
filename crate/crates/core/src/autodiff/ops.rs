use crate::autodiff::tape::Tape;
use crate::autodiff::tensor::{numel_of, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    ScalarMul(f64),
    Exp,
    Log,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{op}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
pub(crate) fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    Ok(())
}

/// Tempered softmax along `axis`, computed with max subtraction.
pub fn softmax_values(data: &[f64], shape: &[usize], axis: usize, tau: f64) -> Vec<f64> {
    let (outer, len, inner) = axis_extents(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let max = (0..len)
                .map(|j| data[base + j * inner])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                let e = ((data[base + j * inner] - max) / tau).exp();
                out[base + j * inner] = e;
                total += e;
            }
            for j in 0..len {
                out[base + j * inner] /= total;
            }
        }
    }
    out
}

/// Log of the tempered softmax along `axis`.
pub fn log_softmax_values(data: &[f64], shape: &[usize], axis: usize, tau: f64) -> Vec<f64> {
    let (outer, len, inner) = axis_extents(shape, axis);
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let max = (0..len)
                .map(|j| data[base + j * inner])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..len {
                total += ((data[base + j * inner] - max) / tau).exp();
            }
            let log_total = total.ln();
            for j in 0..len {
                out[base + j * inner] = (data[base + j * inner] - max) / tau - log_total;
            }
        }
    }
    out
}

/// Calls `f(input_index, output_index)` for every input element in ascending
/// order, where `out_strides` is 0 on reduced axes.
fn visit_reduced(shape: &[usize], out_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let Some(last) = shape.len().checked_sub(1) else {
        f(0, 0);
        return;
    };
    let (n_last, s_last) = (shape[last], out_strides[last]);
    let outer: usize = shape[..last].iter().product();
    let mut idx = vec![0usize; last];
    let mut base = 0;
    let mut i = 0;
    for _ in 0..outer {
        for j in 0..n_last {
            f(i, base + j * s_last);
            i += 1;
        }
        for ax in (0..last).rev() {
            idx[ax] += 1;
            base += out_strides[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            base -= out_strides[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

impl Tape {
    pub fn elementwise(
        &mut self,
        op: ElementwiseOp,
        a: &Tensor,
        b: Option<&Tensor>,
    ) -> Result<Tensor> {
        let missing = || Error::InvalidArgument(format!("{op:?} needs two operands"));
        match op {
            ElementwiseOp::Add => self.add(a, b.ok_or_else(missing)?),
            ElementwiseOp::Sub => self.sub(a, b.ok_or_else(missing)?),
            ElementwiseOp::Mul => self.mul(a, b.ok_or_else(missing)?),
            ElementwiseOp::ScalarMul(s) => self.scalar_mul(a, s),
            ElementwiseOp::Exp => self.exp(a),
            ElementwiseOp::Log => self.log(a),
            ElementwiseOp::Relu => self.relu(a),
        }
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("add", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let (ga, gb) = (a.requires_grad(), b.requires_grad());
        self.push("add", &[a, b], data, a.shape().to_vec(), move |g, _| {
            vec![ga.then(|| g.to_vec()), gb.then(|| g.to_vec())]
        })
    }

    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("sub", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let (ga, gb) = (a.requires_grad(), b.requires_grad());
        self.push("sub", &[a, b], data, a.shape().to_vec(), move |g, _| {
            vec![
                ga.then(|| g.to_vec()),
                gb.then(|| g.iter().map(|v| -v).collect()),
            ]
        })
    }

    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("mul", a, b)?;
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
        let (ga, gb) = (a.requires_grad(), b.requires_grad());
        let (ca, cb) = (a.clone(), b.clone());
        self.push("mul", &[a, b], data, a.shape().to_vec(), move |g, _| {
            let da = ga.then(|| g.iter().zip(cb.data()).map(|(g, y)| g * y).collect());
            let db = gb.then(|| g.iter().zip(ca.data()).map(|(g, x)| g * x).collect());
            vec![da, db]
        })
    }

    pub fn scalar_mul(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        let data = a.data().iter().map(|x| x * s).collect();
        self.push("scalar_mul", &[a], data, a.shape().to_vec(), move |g, _| {
            vec![Some(g.iter().map(|v| v * s).collect())]
        })
    }

    pub fn exp(&mut self, a: &Tensor) -> Result<Tensor> {
        let data = a.data().iter().map(|x| x.exp()).collect();
        self.push("exp", &[a], data, a.shape().to_vec(), |g, out| {
            vec![Some(g.iter().zip(out).map(|(g, y)| g * y).collect())]
        })
    }

    pub fn log(&mut self, a: &Tensor) -> Result<Tensor> {
        if let Some(bad) = a.data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "log of non-positive value {bad}"
            )));
        }
        let data = a.data().iter().map(|x| x.ln()).collect();
        let ca = a.clone();
        self.push("log", &[a], data, a.shape().to_vec(), move |g, _| {
            vec![Some(g.iter().zip(ca.data()).map(|(g, x)| g / x).collect())]
        })
    }

    /// ReLU with subgradient 0 at 0.
    pub fn relu(&mut self, a: &Tensor) -> Result<Tensor> {
        let data = a
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        self.push("relu", &[a], data, a.shape().to_vec(), |g, out| {
            vec![Some(
                g.iter()
                    .zip(out)
                    .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
                    .collect(),
            )]
        })
    }

    pub fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Result<Tensor> {
        if numel_of(shape) != a.numel() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} to {shape:?}",
                a.shape()
            )));
        }
        self.push(
            "reshape",
            &[a],
            a.data().to_vec(),
            shape.to_vec(),
            |g, _| vec![Some(g.to_vec())],
        )
    }

    /// Sum or mean over `axes`, which are removed from the shape.
    ///
    /// Each output element accumulates its inputs in ascending flat-index
    /// order, so results are bit-reproducible.
    pub fn reduce(&mut self, op: ReduceOp, a: &Tensor, axes: &[usize]) -> Result<Tensor> {
        let shape = a.shape();
        let mut reduced = vec![false; shape.len()];
        for &ax in axes {
            check_axis(shape, ax)?;
            if reduced[ax] {
                return Err(Error::InvalidArgument(format!("axis {ax} repeated")));
            }
            reduced[ax] = true;
        }
        let out_shape: Vec<usize> = shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        // Stride into the output for each input axis (0 on reduced axes).
        let mut out_strides = vec![0usize; shape.len()];
        let mut acc = 1;
        for ax in (0..shape.len()).rev() {
            if !reduced[ax] {
                out_strides[ax] = acc;
                acc *= shape[ax];
            }
        }
        let count = (a.numel() / numel_of(&out_shape)) as f64;
        let scale = match op {
            ReduceOp::Sum => 1.0,
            ReduceOp::Mean => 1.0 / count,
        };
        let mut data = vec![0.0; numel_of(&out_shape)];
        if out_shape.is_empty() {
            data[0] = a.data().iter().fold(0.0, |acc, x| acc + x);
        } else {
            let x = a.data();
            visit_reduced(shape, &out_strides, |i, o| data[o] += x[i]);
        }
        if op == ReduceOp::Mean {
            data.iter_mut().for_each(|v| *v /= count);
        }
        let in_shape = shape.to_vec();
        let numel = a.numel();
        self.push("reduce", &[a], data, out_shape, move |g, _| {
            let grad = if g.len() == 1 {
                vec![g[0] * scale; numel]
            } else {
                let mut grad = vec![0.0; numel];
                visit_reduced(&in_shape, &out_strides, |i, o| grad[i] = g[o] * scale);
                grad
            };
            vec![Some(grad)]
        })
    }

    pub fn sum_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let axes: Vec<usize> = (0..a.ndim()).collect();
        self.reduce(ReduceOp::Sum, a, &axes)
    }

    pub fn mean_all(&mut self, a: &Tensor) -> Result<Tensor> {
        let axes: Vec<usize> = (0..a.ndim()).collect();
        self.reduce(ReduceOp::Mean, a, &axes)
    }

    /// `exp(x / tau)` normalized along `axis`.
    pub fn softmax_with_temperature(
        &mut self,
        x: &Tensor,
        axis: usize,
        tau: f64,
    ) -> Result<Tensor> {
        check_tau(tau)?;
        check_axis(x.shape(), axis)?;
        let shape = x.shape().to_vec();
        let data = softmax_values(x.data(), &shape, axis, tau);
        let (outer, len, inner) = axis_extents(&shape, axis);
        self.push("softmax", &[x], data, shape, move |g, y| {
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: f64 = (0..len)
                        .map(|j| g[base + j * inner] * y[base + j * inner])
                        .sum();
                    for j in 0..len {
                        let k = base + j * inner;
                        dx[k] = y[k] * (g[k] - dot) / tau;
                    }
                }
            }
            vec![Some(dx)]
        })
    }

    /// `log(softmax(x / tau))` along `axis`.
    pub fn log_softmax_with_temperature(
        &mut self,
        x: &Tensor,
        axis: usize,
        tau: f64,
    ) -> Result<Tensor> {
        check_tau(tau)?;
        check_axis(x.shape(), axis)?;
        let shape = x.shape().to_vec();
        let data = log_softmax_values(x.data(), &shape, axis, tau);
        let (outer, len, inner) = axis_extents(&shape, axis);
        self.push("log_softmax", &[x], data, shape, move |g, y| {
            let mut dx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let total: f64 = (0..len).map(|j| g[base + j * inner]).sum();
                    for j in 0..len {
                        let k = base + j * inner;
                        dx[k] = (g[k] - y[k].exp() * total) / tau;
                    }
                }
            }
            vec![Some(dx)]
        })
    }
}
