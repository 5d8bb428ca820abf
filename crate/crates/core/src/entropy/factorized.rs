use super::{EntropyError, SymbolGrid};
use crate::autodiff::{sigmoid, softplus, BackwardFn, Tensor, TensorError, Var};

/// Number of stacked monotone layers.
pub const PRIOR_LAYERS: usize = 3;

/// Lower bound applied to likelihoods during training.
pub const LIKELIHOOD_BOUND: f64 = 1e-9;

/// Clamps `p` to [`LIKELIHOOD_BOUND`] while letting NaN through, so a broken
/// model shows up as a non-finite loss.
#[inline]
pub(crate) fn bound_likelihood(p: f64) -> f64 {
    if p.is_nan() {
        p
    } else {
        p.max(LIKELIHOOD_BOUND)
    }
}

/// Learned per-channel univariate distribution for the hyper-latent.
///
/// The cumulative is `sigmoid(f(u))` with `f` a chain of scalar layers
/// `h ← softplus(m)·h + b`, each but the last followed by
/// `h ← h + tanh(a)·tanh(h)`. Every layer has positive slope, so `f` is
/// strictly increasing and unbounded in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedPrior {
    channels: usize,
    /// `[layer][channel]`, raw (pre-softplus).
    matrices: Vec<f64>,
    /// `[layer][channel]`.
    biases: Vec<f64>,
    /// `[layer][channel]` for the first `PRIOR_LAYERS - 1` layers, raw (pre-tanh).
    gates: Vec<f64>,
}

/// Parameter shapes `(matrix, bias, gate)` for `channels` channels.
pub fn prior_shapes(channels: usize) -> [Vec<usize>; 3] {
    [
        vec![PRIOR_LAYERS, channels],
        vec![PRIOR_LAYERS, channels],
        vec![PRIOR_LAYERS - 1, channels],
    ]
}

impl FactorizedPrior {
    pub fn from_tensors(matrix: &Tensor, bias: &Tensor, gate: &Tensor) -> Result<Self, EntropyError> {
        let channels = matrix.shape().last().copied().unwrap_or(0);
        let shapes = prior_shapes(channels);
        if matrix.shape() != shapes[0].as_slice()
            || bias.shape() != shapes[1].as_slice()
            || gate.shape() != shapes[2].as_slice()
        {
            return Err(EntropyError::Params(format!(
                "factorized prior shapes {:?} {:?} {:?}",
                matrix.shape(),
                bias.shape(),
                gate.shape()
            )));
        }
        let all_finite = [matrix, bias, gate].iter().all(|t| t.is_finite());
        if !all_finite {
            return Err(EntropyError::Params(
                "factorized prior has non-finite parameters".into(),
            ));
        }
        Ok(Self {
            channels,
            matrices: matrix.data().to_vec(),
            biases: bias.data().to_vec(),
            gates: gate.data().to_vec(),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Logit of the cumulative, `f(u)`, for `channel`.
    pub fn logit(&self, channel: usize, u: f64) -> f64 {
        let mut h = u;
        for l in 0..PRIOR_LAYERS {
            let i = l * self.channels + channel;
            h = softplus(self.matrices[i]) * h + self.biases[i];
            if l + 1 < PRIOR_LAYERS {
                h += libm::tanh(self.gates[i]) * libm::tanh(h);
            }
        }
        h
    }

    /// Cumulative distribution of `channel` at `u`.
    pub fn cdf(&self, channel: usize, u: f64) -> f64 {
        sigmoid(self.logit(channel, u))
    }

    /// Probability of `symbol`, with the edge bins absorbing the tails.
    pub fn pmf(&self, symbol: i32, channel: usize, grid: &SymbolGrid) -> Result<f64, EntropyError> {
        grid.check(symbol)?;
        if channel >= self.channels {
            return Err(EntropyError::Params(format!("channel {channel} >= {}", self.channels)));
        }
        let (lo, hi) = grid.bin_edges(symbol);
        Ok(self.bin_mass(channel, lo, hi))
    }

    /// Masses of every symbol of `grid` for `channel`.
    pub fn pmf_table(&self, channel: usize, grid: &SymbolGrid) -> Vec<f64> {
        (grid.lo..=grid.hi)
            .map(|s| {
                let (lo, hi) = grid.bin_edges(s);
                self.bin_mass(channel, lo, hi)
            })
            .collect()
    }

    fn bin_mass(&self, channel: usize, lo: Option<f64>, hi: Option<f64>) -> f64 {
        let fl = lo.map(|e| self.logit(channel, e));
        let fh = hi.map(|e| self.logit(channel, e));
        match (fl, fh) {
            (None, None) => 1.0,
            (None, Some(h)) => sigmoid(h),
            (Some(l), None) => sigmoid(-l),
            (Some(l), Some(h)) => sigmoid_diff(l, h),
        }
    }
}

/// `sigmoid(hi) - sigmoid(lo)`, evaluated on the side where both terms are
/// small to avoid cancellation.
#[inline]
fn sigmoid_diff(lo: f64, hi: f64) -> f64 {
    if lo + hi > 0.0 {
        sigmoid(-lo) - sigmoid(-hi)
    } else {
        sigmoid(hi) - sigmoid(lo)
    }
}

/// Intermediate values of one evaluation of `f(u)`.
struct Trace {
    /// Input to each layer.
    inputs: [f64; PRIOR_LAYERS],
    /// Pre-gate value of each layer.
    pre: [f64; PRIOR_LAYERS],
    out: f64,
}

fn trace(m: &[f64], b: &[f64], a: &[f64], channels: usize, channel: usize, u: f64) -> Trace {
    let mut t = Trace {
        inputs: [0.0; PRIOR_LAYERS],
        pre: [0.0; PRIOR_LAYERS],
        out: 0.0,
    };
    let mut h = u;
    for l in 0..PRIOR_LAYERS {
        let i = l * channels + channel;
        t.inputs[l] = h;
        h = softplus(m[i]) * h + b[i];
        t.pre[l] = h;
        if l + 1 < PRIOR_LAYERS {
            h += libm::tanh(a[i]) * libm::tanh(h);
        }
    }
    t.out = h;
    t
}

/// Back-propagates `upstream = dL/df` through one trace, accumulating
/// parameter gradients; returns `dL/du`.
#[allow(clippy::too_many_arguments)]
fn backprop(
    t: &Trace,
    upstream: f64,
    m: &[f64],
    a: &[f64],
    channels: usize,
    channel: usize,
    gm: &mut [f64],
    gb: &mut [f64],
    ga: &mut [f64],
) -> f64 {
    let mut g = upstream;
    for l in (0..PRIOR_LAYERS).rev() {
        let i = l * channels + channel;
        if l + 1 < PRIOR_LAYERS {
            let th = libm::tanh(t.pre[l]);
            let ta = libm::tanh(a[i]);
            ga[i] += g * th * (1.0 - ta * ta);
            g *= 1.0 + ta * (1.0 - th * th);
        }
        gb[i] += g;
        gm[i] += g * t.inputs[l] * sigmoid(m[i]);
        g *= softplus(m[i]);
    }
    g
}

/// Total bits `Σ −log₂ p(z)` of continuous (noisy) hyper-latents under the
/// prior, where `p(z) = c(z + ½) − c(z − ½)` and `c` is the cumulative of the
/// element's channel. Differentiable in the prior parameters and in `z`.
pub fn factorized_bits<'g>(
    matrix: &Var<'g>,
    bias: &Var<'g>,
    gate: &Var<'g>,
    z: &Var<'g>,
) -> Result<Var<'g>, TensorError> {
    let (m, b, a) = (matrix.value(), bias.value(), gate.value());
    let zt = z.value();
    let (_, channels, h, w) = zt.dims4("factorized_bits")?;
    let shapes = prior_shapes(channels);
    if m.shape() != shapes[0].as_slice() || b.shape() != shapes[1].as_slice() || a.shape() != shapes[2].as_slice() {
        return Err(TensorError::Shape {
            op: "factorized_bits",
            detail: format!("prior parameters do not match {channels} channels"),
        });
    }
    let plane = h * w;
    let mut total = 0.0;
    for (idx, &u) in zt.data().iter().enumerate() {
        let c = (idx / plane) % channels;
        let lo = trace(m.data(), b.data(), a.data(), channels, c, u - 0.5);
        let hi = trace(m.data(), b.data(), a.data(), channels, c, u + 0.5);
        let p = bound_likelihood(sigmoid_diff(lo.out, hi.out));
        total -= libm::log2(p);
    }
    let make = move || -> BackwardFn {
        Box::new(move |g: &[f64], needs: &[bool]| {
            let upstream = g[0];
            let (md, bd, ad) = (m.data(), b.data(), a.data());
            let mut gm = vec![0.0; md.len()];
            let mut gb = vec![0.0; bd.len()];
            let mut ga = vec![0.0; ad.len()];
            let mut gz = vec![0.0; zt.numel()];
            for (idx, &u) in zt.data().iter().enumerate() {
                let c = (idx / plane) % channels;
                let lo = trace(md, bd, ad, channels, c, u - 0.5);
                let hi = trace(md, bd, ad, channels, c, u + 0.5);
                let p = sigmoid_diff(lo.out, hi.out);
                if p < LIKELIHOOD_BOUND {
                    continue;
                }
                let dbits_dp = -upstream / (p * std::f64::consts::LN_2);
                let (sl, sh) = (sigmoid(lo.out), sigmoid(hi.out));
                let dlo = -dbits_dp * sl * (1.0 - sl);
                let dhi = dbits_dp * sh * (1.0 - sh);
                let du_lo = backprop(&lo, dlo, md, ad, channels, c, &mut gm, &mut gb, &mut ga);
                let du_hi = backprop(&hi, dhi, md, ad, channels, c, &mut gm, &mut gb, &mut ga);
                gz[idx] = du_lo + du_hi;
            }
            vec![
                needs[0].then_some(gm),
                needs[1].then_some(gb),
                needs[2].then_some(ga),
                needs[3].then_some(gz),
            ]
        })
    };
    Ok(matrix
        .graph()
        .record(Tensor::scalar(total), &[*matrix, *bias, *gate, *z], make))
}

/// Initial prior parameters: a broad cumulative (overall slope about 1/10)
/// with small random offsets per channel.
pub fn prior_init<R: rand::Rng + ?Sized>(channels: usize, rng: &mut R) -> [Tensor; 3] {
    const INIT_SCALE: f64 = 10.0;
    let slope = (1.0 / INIT_SCALE).powf(1.0 / PRIOR_LAYERS as f64);
    // softplus(raw) = slope
    let raw = (slope.exp() - 1.0).ln();
    let [ms, bs, gs] = prior_shapes(channels);
    [
        Tensor::full(&ms, raw),
        Tensor::from_fn(&bs, |_| rng.gen_range(-0.5..0.5)),
        Tensor::zeros(&gs),
    ]
}
