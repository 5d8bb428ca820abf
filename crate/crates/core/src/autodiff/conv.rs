//! Direct (loop-nest) convolution kernels and their graph ops.
//!
//! Every output element is accumulated as `bias`, then taps in
//! `(in_channel, ky, kx)` order. [`conv2d_point`] follows the same order, so
//! a single-location evaluation reproduces the full-tensor result exactly.

use std::rc::Rc;

use super::{BackwardFn, Tensor, TensorError, Var};

/// Kernel sizes accepted by the masked (context-model) convolution.
pub const MASKED_KERNELS: [usize; 2] = [5, 7];

/// Mask type A for a `k × k` kernel: `true` for taps strictly before the
/// centre in raster order.
pub fn causal_mask(k: usize) -> Vec<bool> {
    let center = (k / 2) * k + k / 2;
    (0..k * k).map(|i| i < center).collect()
}

#[derive(Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

/// Output columns `ox` for which `ox * stride + k - pad` lands in `0..len`.
#[inline]
fn valid_range(out_len: usize, len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi_num = (len + pad) as isize - 1 - k as isize;
    if hi_num < 0 {
        return (0, 0);
    }
    let hi = (hi_num as usize / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, cout: usize) -> Result<(), TensorError> {
    if let Some(b) = bias {
        if b.numel() != cout {
            return Err(TensorError::Shape {
                op,
                detail: format!("bias has {} entries, expected cout = {cout}", b.numel()),
            });
        }
    }
    Ok(())
}

fn conv_geom(
    op: &'static str,
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<ConvGeom, TensorError> {
    let (batch, cin, h, w) = input.dims4(op)?;
    let (cout, wcin, kh, kw) = weight.dims4(op)?;
    if wcin != cin {
        return Err(TensorError::Shape {
            op,
            detail: format!("in_channels: input has {cin}, weight expects {wcin}"),
        });
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::Shape {
            op,
            detail: format!("kernel {kh}x{kw} must have odd sides"),
        });
    }
    if stride == 0 {
        return Err(TensorError::Config(format!("{op}: stride must be >= 1")));
    }
    let span_h = h + 2 * pad;
    let span_w = w + 2 * pad;
    if span_h < kh {
        return Err(TensorError::Shape {
            op,
            detail: format!("height {h} with pad {pad} is smaller than kernel {kh}"),
        });
    }
    if span_w < kw {
        return Err(TensorError::Shape {
            op,
            detail: format!("width {w} with pad {pad} is smaller than kernel {kw}"),
        });
    }
    Ok(ConvGeom {
        batch,
        cin,
        cout,
        h,
        w,
        kh,
        kw,
        oh: (span_h - kh) / stride + 1,
        ow: (span_w - kw) / stride + 1,
        stride,
        pad,
    })
}

fn conv2d_forward_raw(g: ConvGeom, x: &[f64], wt: &[f64], bias: Option<&[f64]>, mask: Option<&[bool]>) -> Vec<f64> {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![0.0; g.batch * g.cout * op];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let out_plane = &mut out[(b * g.cout + co) * op..][..op];
            out_plane.fill(bias.map_or(0.0, |bv| bv[co]));
            for ci in 0..g.cin {
                let in_plane = &x[(b * g.cin + ci) * ip..][..ip];
                let wbase = (co * g.cin + ci) * g.kh * g.kw;
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(g.oh, g.h, ky, g.stride, g.pad);
                    for kx in 0..g.kw {
                        let tap = ky * g.kw + kx;
                        if mask.is_some_and(|m| !m[tap]) {
                            continue;
                        }
                        let wv = wt[wbase + tap];
                        let (ox0, ox1) = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let in_row = &in_plane[iy * g.w..][..g.w];
                            let out_row = &mut out_plane[oy * g.ow..][..g.ow];
                            if g.stride == 1 {
                                let shift = kx as isize - g.pad as isize;
                                let src = &in_row[(ox0 as isize + shift) as usize..][..ox1 - ox0];
                                for (o, &v) in out_row[ox0..ox1].iter_mut().zip(src) {
                                    *o += wv * v;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    out_row[ox] += wv * in_row[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`; masked taps get exactly
/// zero weight gradient.
fn conv2d_backward_raw(
    g: ConvGeom,
    x: &[f64],
    wt: &[f64],
    grad_out: &[f64],
    mask: Option<&[bool]>,
    needs: (bool, bool),
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut gx = if needs.0 { vec![0.0; x.len()] } else { Vec::new() };
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; g.cout];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let go = &grad_out[(b * g.cout + co) * op..][..op];
            gb[co] += go.iter().sum::<f64>();
            for ci in 0..g.cin {
                let in_off = (b * g.cin + ci) * ip;
                let wbase = (co * g.cin + ci) * g.kh * g.kw;
                for ky in 0..g.kh {
                    let (oy0, oy1) = valid_range(g.oh, g.h, ky, g.stride, g.pad);
                    for kx in 0..g.kw {
                        let tap = ky * g.kw + kx;
                        if mask.is_some_and(|m| !m[tap]) {
                            continue;
                        }
                        let wv = wt[wbase + tap];
                        let (ox0, ox1) = valid_range(g.ow, g.w, kx, g.stride, g.pad);
                        let mut acc = 0.0;
                        for oy in oy0..oy1 {
                            let iy = oy * g.stride + ky - g.pad;
                            let row = in_off + iy * g.w;
                            for ox in ox0..ox1 {
                                let ix = ox * g.stride + kx - g.pad;
                                let gv = go[oy * g.ow + ox];
                                acc += gv * x[row + ix];
                                if needs.0 {
                                    gx[row + ix] += wv * gv;
                                }
                            }
                        }
                        gw[wbase + tap] += acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

/// Stride-1 convolution evaluated at the single output location `(oy, ox)`
/// of batch item `batch`, writing all `cout` values into `out`.
///
/// Bit-identical to the corresponding elements of the full-tensor forward.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_point(
    input: &Tensor,
    batch: usize,
    weight: &Tensor,
    bias: Option<&Tensor>,
    pad: usize,
    mask: Option<&[bool]>,
    oy: usize,
    ox: usize,
    out: &mut [f64],
) {
    let (_, cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (cout, _, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    let x = input.data();
    let wt = weight.data();
    for (co, slot) in out.iter_mut().enumerate().take(cout) {
        let mut acc = bias.map_or(0.0, |b| b.data()[co]);
        for ci in 0..cin {
            let in_plane = &x[(batch * cin + ci) * h * w..][..h * w];
            let wbase = (co * cin + ci) * kh * kw;
            for ky in 0..kh {
                let iy = oy as isize + ky as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let tap = ky * kw + kx;
                    if mask.is_some_and(|m| !m[tap]) {
                        continue;
                    }
                    let ix = ox as isize + kx as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    acc += wt[wbase + tap] * in_plane[iy as usize * w + ix as usize];
                }
            }
        }
        *slot = acc;
    }
}

fn conv_transpose_geom(input: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom, TensorError> {
    const OP: &str = "conv_transpose2d";
    let (batch, cin, h, w) = input.dims4(OP)?;
    let (wcin, cout, kh, kw) = weight.dims4(OP)?;
    if wcin != cin {
        return Err(TensorError::Shape {
            op: OP,
            detail: format!("in_channels: input has {cin}, weight expects {wcin}"),
        });
    }
    if stride == 0 {
        return Err(TensorError::Config(format!("{OP}: stride must be >= 1")));
    }
    let full_h = (h - 1) * stride + kh;
    let full_w = (w - 1) * stride + kw;
    if full_h <= 2 * pad || full_w <= 2 * pad {
        return Err(TensorError::Shape {
            op: OP,
            detail: format!("pad {pad} leaves no output for {h}x{w} input"),
        });
    }
    Ok(ConvGeom {
        batch,
        cin,
        cout,
        h,
        w,
        kh,
        kw,
        oh: full_h - 2 * pad,
        ow: full_w - 2 * pad,
        stride,
        pad,
    })
}

/// Input columns `ix` for which `ix * stride + k - pad` lands in `0..out_len`.
#[inline]
fn scatter_range(in_len: usize, out_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    valid_range(in_len, out_len, k, stride, pad)
}

fn conv_transpose_forward_raw(g: ConvGeom, x: &[f64], wt: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut out = vec![0.0; g.batch * g.cout * op];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let out_plane = &mut out[(b * g.cout + co) * op..][..op];
            out_plane.fill(bias.map_or(0.0, |bv| bv[co]));
            for ci in 0..g.cin {
                let in_plane = &x[(b * g.cin + ci) * ip..][..ip];
                let wbase = (ci * g.cout + co) * g.kh * g.kw;
                for ky in 0..g.kh {
                    let (iy0, iy1) = scatter_range(g.h, g.oh, ky, g.stride, g.pad);
                    for kx in 0..g.kw {
                        let wv = wt[wbase + ky * g.kw + kx];
                        let (ix0, ix1) = scatter_range(g.w, g.ow, kx, g.stride, g.pad);
                        for iy in iy0..iy1 {
                            let oy = iy * g.stride + ky - g.pad;
                            let in_row = &in_plane[iy * g.w..][..g.w];
                            let out_row = &mut out_plane[oy * g.ow..][..g.ow];
                            for ix in ix0..ix1 {
                                out_row[ix * g.stride + kx - g.pad] += wv * in_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_transpose_backward_raw(
    g: ConvGeom,
    x: &[f64],
    wt: &[f64],
    grad_out: &[f64],
    need_x: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (ip, op) = (g.h * g.w, g.oh * g.ow);
    let mut gx = if need_x { vec![0.0; x.len()] } else { Vec::new() };
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; g.cout];
    for b in 0..g.batch {
        for co in 0..g.cout {
            let go = &grad_out[(b * g.cout + co) * op..][..op];
            gb[co] += go.iter().sum::<f64>();
            for ci in 0..g.cin {
                let in_off = (b * g.cin + ci) * ip;
                let wbase = (ci * g.cout + co) * g.kh * g.kw;
                for ky in 0..g.kh {
                    let (iy0, iy1) = scatter_range(g.h, g.oh, ky, g.stride, g.pad);
                    for kx in 0..g.kw {
                        let wv = wt[wbase + ky * g.kw + kx];
                        let (ix0, ix1) = scatter_range(g.w, g.ow, kx, g.stride, g.pad);
                        let mut acc = 0.0;
                        for iy in iy0..iy1 {
                            let oy = iy * g.stride + ky - g.pad;
                            for ix in ix0..ix1 {
                                let gv = go[oy * g.ow + ix * g.stride + kx - g.pad];
                                let xi = in_off + iy * g.w + ix;
                                acc += gv * x[xi];
                                if need_x {
                                    gx[xi] += wv * gv;
                                }
                            }
                        }
                        gw[wbase + ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

fn bias_data(bias: &Option<Rc<Tensor>>) -> Option<&[f64]> {
    bias.as_deref().map(Tensor::data)
}

impl<'g> Var<'g> {
    /// Cross-correlation with `weight` of shape `[cout, cin, kh, kw]`.
    pub fn conv2d(
        &self,
        weight: &Var<'g>,
        bias: Option<&Var<'g>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g>, TensorError> {
        self.conv2d_impl("conv2d", weight, bias, stride, pad, None)
    }

    /// Strictly causal (mask type A) `kernel × kernel` convolution, stride 1,
    /// padding `kernel / 2`.
    pub fn masked_conv2d(
        &self,
        weight: &Var<'g>,
        bias: Option<&Var<'g>>,
        kernel: usize,
    ) -> Result<Var<'g>, TensorError> {
        if !MASKED_KERNELS.contains(&kernel) {
            return Err(TensorError::Config(format!(
                "masked_conv2d: unsupported kernel size {kernel} (expected 5 or 7)"
            )));
        }
        let ws = weight.shape();
        if ws.len() != 4 || ws[2] != kernel || ws[3] != kernel {
            return Err(TensorError::Shape {
                op: "masked_conv2d",
                detail: format!("weight {ws:?} does not match kernel {kernel}"),
            });
        }
        self.conv2d_impl(
            "masked_conv2d",
            weight,
            bias,
            1,
            kernel / 2,
            Some(Rc::new(causal_mask(kernel))),
        )
    }

    fn conv2d_impl(
        &self,
        op: &'static str,
        weight: &Var<'g>,
        bias: Option<&Var<'g>>,
        stride: usize,
        pad: usize,
        mask: Option<Rc<Vec<bool>>>,
    ) -> Result<Var<'g>, TensorError> {
        let x = self.value();
        let w = weight.value();
        let b = bias.map(|b| b.value());
        let geom = conv_geom(op, &x, &w, stride, pad)?;
        check_bias(op, b.as_deref(), geom.cout)?;
        let out = conv2d_forward_raw(geom, x.data(), w.data(), bias_data(&b), mask.as_deref().map(|m| &m[..]));
        let out = Tensor::new(vec![geom.batch, geom.cout, geom.oh, geom.ow], out)?;
        let mut parents = vec![*self, *weight];
        parents.extend(bias.copied());
        let make = move || -> BackwardFn {
            Box::new(move |g: &[f64], needs: &[bool]| {
                let (gx, gw, gb) = conv2d_backward_raw(
                    geom,
                    x.data(),
                    w.data(),
                    g,
                    mask.as_deref().map(|m| &m[..]),
                    (needs[0], needs[1]),
                );
                let mut grads = vec![needs[0].then_some(gx), needs[1].then_some(gw)];
                if needs.len() > 2 {
                    grads.push(needs[2].then_some(gb));
                }
                grads
            })
        };
        Ok(self.graph().record(out, &parents, make))
    }

    /// Transposed convolution with `weight` of shape `[cin, cout, kh, kw]`;
    /// output side is `(H - 1) * stride - 2 * pad + kh`.
    pub fn conv_transpose2d(
        &self,
        weight: &Var<'g>,
        bias: Option<&Var<'g>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'g>, TensorError> {
        let x = self.value();
        let w = weight.value();
        let b = bias.map(|b| b.value());
        let geom = conv_transpose_geom(&x, &w, stride, pad)?;
        check_bias("conv_transpose2d", b.as_deref(), geom.cout)?;
        let out = conv_transpose_forward_raw(geom, x.data(), w.data(), bias_data(&b));
        let out = Tensor::new(vec![geom.batch, geom.cout, geom.oh, geom.ow], out)?;
        let mut parents = vec![*self, *weight];
        parents.extend(bias.copied());
        let make = move || -> BackwardFn {
            Box::new(move |g: &[f64], needs: &[bool]| {
                let (gx, gw, gb) = conv_transpose_backward_raw(geom, x.data(), w.data(), g, needs[0]);
                let mut grads = vec![needs[0].then_some(gx), needs[1].then_some(gw)];
                if needs.len() > 2 {
                    grads.push(needs[2].then_some(gb));
                }
                grads
            })
        };
        Ok(self.graph().record(out, &parents, make))
    }
}
