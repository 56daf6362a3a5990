use matrixmultiply::dgemm;

use crate::autodiff::tape::Tape;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Static geometry of one conv2d call.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    // 1x1, stride 1, no padding: the input plane already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

fn geometry(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Geometry> {
    let (is, ws) = (input.shape(), weight.shape());
    if is.len() != 4 || ws.len() != 4 {
        return Err(Error::Shape(format!(
            "conv2d expects 4-d input and weight, got {is:?} and {ws:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
    }
    if is[1] != ws[1] {
        return Err(Error::Shape(format!(
            "conv2d input has {} channels but weight expects {}",
            is[1], ws[1]
        )));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::Shape(format!(
            "conv2d bias shape {:?} does not match {} output channels",
            bias.shape(),
            ws[0]
        )));
    }
    let (h, w, kh, kw) = (is[2], is[3], ws[2], ws[3]);
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::Shape(format!(
            "kernel {kh}x{kw} does not fit padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    Ok(Geometry {
        n: is[0],
        cin: is[1],
        h,
        w,
        cout: ws[0],
        kh,
        kw,
        stride,
        padding,
        ho: (h + 2 * padding - kh) / stride + 1,
        wo: (w + 2 * padding - kw) / stride + 1,
    })
}

/// Unfold one sample `[cin, h, w]` into `[cin*kh*kw, ho*wo]`.
fn im2col(g: &Geometry, sample: &[f64], cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.cin {
        let plane = &sample[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut cols[((c * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add columns `[cin*kh*kw, ho*wo]` back into a sample `[cin, h, w]`.
fn col2im(g: &Geometry, cols: &[f64], sample: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.cin {
        let plane = &mut sample[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &cols[((c * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = op(a) * op(b) + beta * c` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: extents checked above; the three slices do not alias.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Stride-1 layout: every channel holds the zero-padded `[N, Hp, Wp]` grid
/// as one flat row, followed by enough zero slack that each kernel tap is a
/// constant offset into the row. A convolution then becomes one GEMM per tap
/// with no unfolded copy; outputs at grid positions past `ho`/`wo` are junk
/// and dropped.
#[derive(Debug, Clone, Copy)]
struct Grid {
    hp: usize,
    wp: usize,
    /// `n * hp * wp`
    len: usize,
    /// `len` plus slack.
    row: usize,
}

impl Grid {
    fn new(g: &Geometry) -> Self {
        let (hp, wp) = (g.h + 2 * g.padding, g.w + 2 * g.padding);
        let len = g.n * hp * wp;
        Grid {
            hp,
            wp,
            len,
            row: len + (g.kh - 1) * wp + g.kw - 1,
        }
    }

    fn tap_offset(&self, ky: usize, kx: usize) -> usize {
        ky * self.wp + kx
    }

    /// `[N, C, H, W]` into padded channel-major rows.
    fn pack_input(&self, g: &Geometry, x: &[f64]) -> Vec<f64> {
        let mut buf = vec![0.0; g.cin * self.row];
        for s in 0..g.n {
            for c in 0..g.cin {
                for y in 0..g.h {
                    let src = &x[((s * g.cin + c) * g.h + y) * g.w..][..g.w];
                    let at = c * self.row
                        + s * self.hp * self.wp
                        + (y + g.padding) * self.wp
                        + g.padding;
                    buf[at..at + g.w].copy_from_slice(src);
                }
            }
        }
        buf
    }

    /// Inverse of `pack_input` for gradients: interior of each padded row.
    fn unpack_input(&self, g: &Geometry, buf: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; g.n * g.cin * g.h * g.w];
        for s in 0..g.n {
            for c in 0..g.cin {
                for y in 0..g.h {
                    let at = c * self.row
                        + s * self.hp * self.wp
                        + (y + g.padding) * self.wp
                        + g.padding;
                    x[((s * g.cin + c) * g.h + y) * g.w..][..g.w]
                        .copy_from_slice(&buf[at..at + g.w]);
                }
            }
        }
        x
    }

    fn out_index(&self, g: &Geometry, s: usize, co: usize, oy: usize) -> (usize, usize) {
        (
            co * self.len + s * self.hp * self.wp + oy * self.wp,
            ((s * g.cout + co) * g.ho + oy) * g.wo,
        )
    }
}

fn conv_stride1(
    g: Geometry,
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
) -> (Vec<f64>, Grid, Vec<f64>) {
    let grid = Grid::new(&g);
    let xp = grid.pack_input(&g, input.data());
    let taps = g.kh * g.kw;
    let mut acc = vec![0.0; g.cout * grid.len];
    for ky in 0..g.kh {
        for kx in 0..g.kw {
            let off = grid.tap_offset(ky, kx);
            gemm(
                g.cout,
                g.cin,
                grid.len,
                &weight.data()[ky * g.kw + kx..],
                (g.cin * taps, taps),
                &xp[off..],
                (grid.row, 1),
                1.0,
                &mut acc,
                (grid.len, 1),
            );
        }
    }
    let mut out = vec![0.0; g.n * g.cout * g.positions()];
    for s in 0..g.n {
        for co in 0..g.cout {
            let b = bias.data()[co];
            for oy in 0..g.ho {
                let (src, dst) = grid.out_index(&g, s, co, oy);
                for (d, v) in out[dst..dst + g.wo].iter_mut().zip(&acc[src..src + g.wo]) {
                    *d = v + b;
                }
            }
        }
    }
    (out, grid, xp)
}

/// Backward of [`conv_stride1`]; `xp` is the packed input.
fn conv_stride1_backward(
    g: &Geometry,
    grid: &Grid,
    xp: &[f64],
    weight: &[f64],
    grad: &[f64],
    (gi, gw): (bool, bool),
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let taps = g.kh * g.kw;
    let mut gg = vec![0.0; g.cout * grid.len];
    for s in 0..g.n {
        for co in 0..g.cout {
            for oy in 0..g.ho {
                let (dst, src) = grid.out_index(g, s, co, oy);
                gg[dst..dst + g.wo].copy_from_slice(&grad[src..src + g.wo]);
            }
        }
    }
    let dw = gw.then(|| {
        let mut dw = vec![0.0; g.cout * g.cin * taps];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                // dW[:, :, ky, kx] = G[cout, grid] * shift(X)^T[grid, cin]
                gemm(
                    g.cout,
                    grid.len,
                    g.cin,
                    &gg,
                    (grid.len, 1),
                    &xp[grid.tap_offset(ky, kx)..],
                    (1, grid.row),
                    1.0,
                    &mut dw[ky * g.kw + kx..],
                    (g.cin * taps, taps),
                );
            }
        }
        dw
    });
    let dx = gi.then(|| {
        let mut dxp = vec![0.0; g.cin * grid.row];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                // shift(dX)[cin, grid] += W[:, :, ky, kx]^T * G[cout, grid]
                gemm(
                    g.cin,
                    g.cout,
                    grid.len,
                    &weight[ky * g.kw + kx..],
                    (taps, g.cin * taps),
                    &gg,
                    (grid.len, 1),
                    1.0,
                    &mut dxp[grid.tap_offset(ky, kx)..],
                    (grid.row, 1),
                );
            }
        }
        grid.unpack_input(g, &dxp)
    });
    (dx, dw)
}

fn bias_grad(g: &Geometry, grad: &[f64]) -> Vec<f64> {
    let p = g.positions();
    let mut db = vec![0.0; g.cout];
    for (i, row) in grad.chunks_exact(p).enumerate() {
        db[i % g.cout] += row.iter().sum::<f64>();
    }
    db
}

impl Tape {
    /// 2-d cross-correlation with zero padding.
    ///
    /// `input` is `[N, Cin, H, W]`, `weight` `[Cout, Cin, kh, kw]`, `bias`
    /// `[Cout]`; the result is `[N, Cout, H', W']` with
    /// `H' = (H + 2*padding - kh) / stride + 1`.
    pub fn conv2d(
        &mut self,
        input: &Tensor,
        weight: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let g = geometry(input, weight, bias, stride, padding)?;
        if g.stride == 1 && !g.is_pointwise() {
            let (out, grid, xp) = conv_stride1(g, input, weight, bias);
            let (gi, gw, gb) = (
                input.requires_grad(),
                weight.requires_grad(),
                bias.requires_grad(),
            );
            let wt = weight.clone();
            let out_shape = vec![g.n, g.cout, g.ho, g.wo];
            return self.push(
                "conv2d",
                &[input, weight, bias],
                out,
                out_shape,
                move |grad, _| {
                    let (dx, dw) = conv_stride1_backward(&g, &grid, &xp, wt.data(), grad, (gi, gw));
                    vec![dx, dw, gb.then(|| bias_grad(&g, grad))]
                },
            );
        }
        let (k, p) = (g.patch(), g.positions());
        let in_len = g.cin * g.h * g.w;
        let out_len = g.cout * p;
        let mut out = vec![0.0; g.n * out_len];
        let mut cols = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; k * p]
        };
        for s in 0..g.n {
            let sample = &input.data()[s * in_len..(s + 1) * in_len];
            let dst = &mut out[s * out_len..(s + 1) * out_len];
            for (co, row) in dst.chunks_exact_mut(p).enumerate() {
                row.fill(bias.data()[co]);
            }
            let b = if g.is_pointwise() {
                sample
            } else {
                im2col(&g, sample, &mut cols);
                &cols
            };
            gemm(
                g.cout,
                k,
                p,
                weight.data(),
                (k, 1),
                b,
                (p, 1),
                1.0,
                dst,
                (p, 1),
            );
        }

        let (gi, gw, gb) = (
            input.requires_grad(),
            weight.requires_grad(),
            bias.requires_grad(),
        );
        let (x, wt) = (input.clone(), weight.clone());
        let out_shape = vec![g.n, g.cout, g.ho, g.wo];
        self.push(
            "conv2d",
            &[input, weight, bias],
            out,
            out_shape,
            move |grad, _| {
                let mut dx = gi.then(|| vec![0.0; g.n * in_len]);
                let mut dw = gw.then(|| vec![0.0; g.cout * k]);
                let mut db = gb.then(|| vec![0.0; g.cout]);
                let mut cols = vec![0.0; k * p];
                let mut dcols = if gi && !g.is_pointwise() {
                    vec![0.0; k * p]
                } else {
                    Vec::new()
                };
                for s in 0..g.n {
                    let gs = &grad[s * out_len..(s + 1) * out_len];
                    if let Some(db) = db.as_mut() {
                        for (co, row) in gs.chunks_exact(p).enumerate() {
                            db[co] += row.iter().sum::<f64>();
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        let sample = &x.data()[s * in_len..(s + 1) * in_len];
                        let b = if g.is_pointwise() {
                            sample
                        } else {
                            im2col(&g, sample, &mut cols);
                            &cols
                        };
                        // dW += G[cout, p] * cols^T[p, k]
                        gemm(g.cout, p, k, gs, (p, 1), b, (1, p), 1.0, dw, (k, 1));
                    }
                    if let Some(dx) = dx.as_mut() {
                        let dst = &mut dx[s * in_len..(s + 1) * in_len];
                        // dcols = W^T[k, cout] * G[cout, p]
                        if g.is_pointwise() {
                            gemm(
                                k,
                                g.cout,
                                p,
                                wt.data(),
                                (1, k),
                                gs,
                                (p, 1),
                                0.0,
                                dst,
                                (p, 1),
                            );
                        } else {
                            gemm(
                                k,
                                g.cout,
                                p,
                                wt.data(),
                                (1, k),
                                gs,
                                (p, 1),
                                0.0,
                                &mut dcols,
                                (p, 1),
                            );
                            col2im(&g, &dcols, dst);
                        }
                    }
                }
                vec![dx, dw, db]
            },
        )
    }
}
