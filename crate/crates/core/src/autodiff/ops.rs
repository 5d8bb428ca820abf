//! Elementwise, reduction and channel-layout ops.
//!
//! The scalar kernels are `pub(crate)` so that point-wise inference code in
//! the network can reproduce tensor results bit for bit.

use std::rc::Rc;

use super::{Tensor, TensorError, Var};

pub const LEAKY_SLOPE: f64 = 0.2;

#[inline]
pub(crate) fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// In-place softmax over `values[start + k * stride]` for `k in 0..groups`.
pub(crate) fn softmax_strided(values: &mut [f64], start: usize, stride: usize, groups: usize) {
    let mut max = f64::NEG_INFINITY;
    for k in 0..groups {
        max = max.max(values[start + k * stride]);
    }
    let mut sum = 0.0;
    for k in 0..groups {
        let e = libm::exp(values[start + k * stride] - max);
        values[start + k * stride] = e;
        sum += e;
    }
    for k in 0..groups {
        values[start + k * stride] /= sum;
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

fn guard_finite(op: &'static str, t: &Tensor) -> Result<(), TensorError> {
    if cfg!(debug_assertions) && !t.is_finite() {
        return Err(TensorError::NonFinite { op });
    }
    Ok(())
}

impl<'g> Var<'g> {
    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> (Tensor, impl FnOnce() -> super::BackwardFn) {
        let input = self.value();
        let out = Tensor::from_fn(input.shape(), |i| f(input.data()[i]));
        let saved_out = Rc::new(out.clone());
        let make = move || -> super::BackwardFn {
            Box::new(move |g: &[f64], _: &[bool]| {
                let grad = g
                    .iter()
                    .zip(input.data())
                    .zip(saved_out.data())
                    .map(|((g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(grad)]
            })
        };
        (out, make)
    }

    pub fn leaky_relu(&self) -> Var<'g> {
        let (out, make) = self.unary(leaky_relu, |x, _| if x >= 0.0 { 1.0 } else { LEAKY_SLOPE });
        self.graph().record(out, &[*self], make)
    }

    pub fn sigmoid(&self) -> Var<'g> {
        let (out, make) = self.unary(sigmoid, |_, y| y * (1.0 - y));
        self.graph().record(out, &[*self], make)
    }

    pub fn softplus(&self) -> Var<'g> {
        let (out, make) = self.unary(softplus, |x, _| sigmoid(x));
        self.graph().record(out, &[*self], make)
    }

    pub fn square(&self) -> Var<'g> {
        let (out, make) = self.unary(|x| x * x, |x, _| 2.0 * x);
        self.graph().record(out, &[*self], make)
    }

    pub fn exp(&self) -> Result<Var<'g>, TensorError> {
        let (out, make) = self.unary(libm::exp, |_, y| y);
        guard_finite("exp", &out)?;
        Ok(self.graph().record(out, &[*self], make))
    }

    pub fn log(&self) -> Result<Var<'g>, TensorError> {
        let (out, make) = self.unary(libm::log, |x, _| 1.0 / x);
        guard_finite("log", &out)?;
        Ok(self.graph().record(out, &[*self], make))
    }

    pub fn scale(&self, factor: f64) -> Var<'g> {
        let (out, make) = self.unary(move |x| x * factor, move |_, _| factor);
        self.graph().record(out, &[*self], make)
    }

    pub fn add_scalar(&self, offset: f64) -> Var<'g> {
        let (out, make) = self.unary(move |x| x + offset, |_, _| 1.0);
        self.graph().record(out, &[*self], make)
    }

    /// Sum with `other`, which is either the same shape or a per-channel
    /// vector of length `C` broadcast over a `[B, C, H, W]` tensor.
    pub fn add(&self, other: &Var<'g>) -> Result<Var<'g>, TensorError> {
        let a = self.value();
        let b = other.value();
        if a.shape() == b.shape() {
            let out = Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[i]);
            let make =
                || -> super::BackwardFn { Box::new(|g: &[f64], _: &[bool]| vec![Some(g.to_vec()), Some(g.to_vec())]) };
            return Ok(self.graph().record(out, &[*self, *other], make));
        }
        let (_, c, h, w) = a.dims4("add")?;
        if b.numel() != c {
            return Err(shape_err(
                "add",
                format!("cannot broadcast {:?} onto {:?}", b.shape(), a.shape()),
            ));
        }
        let plane = h * w;
        let out = Tensor::from_fn(a.shape(), |i| a.data()[i] + b.data()[(i / plane) % c]);
        let make = move || -> super::BackwardFn {
            Box::new(move |g: &[f64], _: &[bool]| {
                let mut gb = vec![0.0; c];
                for (i, v) in g.iter().enumerate() {
                    gb[(i / plane) % c] += v;
                }
                vec![Some(g.to_vec()), Some(gb)]
            })
        };
        Ok(self.graph().record(out, &[*self, *other], make))
    }

    pub fn sub(&self, other: &Var<'g>) -> Result<Var<'g>, TensorError> {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Var<'g>) -> Result<Var<'g>, TensorError> {
        let a = self.value();
        let b = other.value();
        if a.shape() != b.shape() {
            return Err(shape_err(
                "mul",
                format!("operand shapes differ: {:?} vs {:?}", a.shape(), b.shape()),
            ));
        }
        let out = Tensor::from_fn(a.shape(), |i| a.data()[i] * b.data()[i]);
        let make = move || -> super::BackwardFn {
            Box::new(move |g: &[f64], needs: &[bool]| {
                let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(g, y)| g * y).collect());
                let gb = needs[1].then(|| g.iter().zip(a.data()).map(|(g, x)| g * x).collect());
                vec![ga, gb]
            })
        };
        Ok(self.graph().record(out, &[*self, *other], make))
    }

    pub fn sum(&self) -> Var<'g> {
        let input = self.value();
        let n = input.numel();
        let out = Tensor::scalar(input.data().iter().sum());
        let make = move || -> super::BackwardFn { Box::new(move |g: &[f64], _: &[bool]| vec![Some(vec![g[0]; n])]) };
        self.graph().record(out, &[*self], make)
    }

    pub fn mean(&self) -> Var<'g> {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Concatenation of 4-D tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<'g>]) -> Result<Var<'g>, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat_channels", "no inputs".into()))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let (b, _, h, w) = values[0].dims4("concat_channels")?;
        let mut channels = Vec::with_capacity(parts.len());
        for v in &values {
            let (vb, vc, vh, vw) = v.dims4("concat_channels")?;
            if (vb, vh, vw) != (b, h, w) {
                return Err(shape_err(
                    "concat_channels",
                    format!("spatial/batch mismatch: {:?} vs {:?}", v.shape(), values[0].shape()),
                ));
            }
            channels.push(vc);
        }
        let total: usize = channels.iter().sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(b * total * plane);
        for bi in 0..b {
            for (v, &c) in values.iter().zip(&channels) {
                out.extend_from_slice(&v.data()[bi * c * plane..(bi + 1) * c * plane]);
            }
        }
        let out = Tensor::new(vec![b, total, h, w], out)?;
        let make = move || -> super::BackwardFn {
            Box::new(move |g: &[f64], needs: &[bool]| {
                let mut grads: Vec<Option<Vec<f64>>> = channels
                    .iter()
                    .zip(needs)
                    .map(|(&c, &n)| n.then(|| Vec::with_capacity(b * c * plane)))
                    .collect();
                for bi in 0..b {
                    let mut offset = bi * total * plane;
                    for (grad, &c) in grads.iter_mut().zip(&channels) {
                        if let Some(grad) = grad {
                            grad.extend_from_slice(&g[offset..offset + c * plane]);
                        }
                        offset += c * plane;
                    }
                }
                grads
            })
        };
        Ok(first.graph().record(out, parts, make))
    }

    /// Channels `start..start + len` of a 4-D tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Var<'g>, TensorError> {
        let input = self.value();
        let (b, c, h, w) = input.dims4("slice_channels")?;
        if start + len > c || len == 0 {
            return Err(shape_err(
                "slice_channels",
                format!("channels {start}..{} out of range for {c}", start + len),
            ));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(b * len * plane);
        for bi in 0..b {
            let base = (bi * c + start) * plane;
            out.extend_from_slice(&input.data()[base..base + len * plane]);
        }
        let out = Tensor::new(vec![b, len, h, w], out)?;
        let make = move || -> super::BackwardFn {
            Box::new(move |g: &[f64], _: &[bool]| {
                let mut grad = vec![0.0; b * c * plane];
                for bi in 0..b {
                    let dst = (bi * c + start) * plane;
                    let src = bi * len * plane;
                    grad[dst..dst + len * plane].copy_from_slice(&g[src..src + len * plane]);
                }
                vec![Some(grad)]
            })
        };
        Ok(self.graph().record(out, &[*self], make))
    }

    /// Softmax across `groups` channel blocks: with `C = channels / groups`,
    /// channels `c, C + c, 2C + c, ...` form one distribution at every pixel.
    pub fn softmax_channel_groups(&self, groups: usize) -> Result<Var<'g>, TensorError> {
        let input = self.value();
        let (b, channels, h, w) = input.dims4("softmax_channel_groups")?;
        if groups == 0 || channels % groups != 0 {
            return Err(TensorError::Config(format!(
                "softmax_channel_groups: {channels} channels not divisible into {groups} groups"
            )));
        }
        let per = channels / groups;
        let plane = h * w;
        let stride = per * plane;
        let mut data = input.data().to_vec();
        for bi in 0..b {
            for start in 0..per * plane {
                softmax_strided(&mut data, bi * channels * plane + start, stride, groups);
            }
        }
        let out = Tensor::new(input.shape().to_vec(), data)?;
        let saved = Rc::new(out.clone());
        let make = move || -> super::BackwardFn {
            Box::new(move |g: &[f64], _: &[bool]| {
                let y = saved.data();
                let mut grad = vec![0.0; y.len()];
                for bi in 0..b {
                    for start in 0..per * plane {
                        let base = bi * channels * plane + start;
                        let dot: f64 = (0..groups).map(|k| g[base + k * stride] * y[base + k * stride]).sum();
                        for k in 0..groups {
                            let i = base + k * stride;
                            grad[i] = y[i] * (g[i] - dot);
                        }
                    }
                }
                vec![Some(grad)]
            })
        };
        Ok(self.graph().record(out, &[*self], make))
    }
}
