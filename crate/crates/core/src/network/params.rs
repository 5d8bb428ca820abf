use crate::autodiff::{conv2d_point, leaky_relu, softmax_strided, softplus, Tensor};
use crate::entropy::Component;

use super::ModelWeights;
use crate::autodiff::causal_mask;

/// Mixture parameters for a whole tensor of symbols. Each field is
/// `[B, K·C, h, w]`, which is the `[B, K, C, h, w]` layout flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub k: usize,
    pub weights: Tensor,
    pub means: Tensor,
    pub scales: Tensor,
}

impl GmmParams {
    pub fn new(k: usize, weights: Tensor, means: Tensor, scales: Tensor) -> Self {
        debug_assert_eq!(weights.shape(), means.shape());
        debug_assert_eq!(weights.shape(), scales.shape());
        Self {
            k,
            weights,
            means,
            scales,
        }
    }

    /// Number of coded channels `C`.
    pub fn channels(&self) -> usize {
        self.weights.shape()[1] / self.k
    }

    pub fn height(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.weights.shape()[3]
    }

    /// All parameters at one spatial location.
    pub fn at(&self, b: usize, y: usize, x: usize) -> LocationParams {
        let kc = self.weights.shape()[1];
        let pick = |t: &Tensor| (0..kc).map(|i| t.at4(b, i, y, x)).collect();
        LocationParams {
            k: self.k,
            weights: pick(&self.weights),
            means: pick(&self.means),
            scales: pick(&self.scales),
        }
    }
}

/// Parameters at one location, `K·C` entries each, component `k` of
/// channel `c` at `k·C + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationParams {
    pub k: usize,
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl LocationParams {
    pub fn channels(&self) -> usize {
        self.weights.len() / self.k
    }

    /// Mixture of channel `c`.
    pub fn mixture(&self, c: usize) -> Vec<Component> {
        let channels = self.channels();
        (0..self.k)
            .map(|kk| {
                let i = kk * channels + c;
                Component {
                    weight: self.weights[i],
                    mean: self.means[i],
                    scale: self.scales[i],
                }
            })
            .collect()
    }

    /// Exact bitwise equality, treating `-0.0` and `0.0` as different.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let same =
            |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        self.k == other.k
            && same(&self.weights, &other.weights)
            && same(&self.means, &other.means)
            && same(&self.scales, &other.scales)
    }
}

/// Turns raw head outputs `(logits | means | raw scales)` into parameters.
/// Same arithmetic as the graph ops, element for element.
fn finish_head(mut raw: Vec<f64>, k: usize, floor: f64) -> LocationParams {
    let kc = raw.len() / 3;
    let channels = kc / k;
    let scales = raw[2 * kc..].iter().map(|&r| softplus(r) + floor).collect();
    let means = raw[kc..2 * kc].to_vec();
    raw.truncate(kc);
    for c in 0..channels {
        softmax_strided(&mut raw, c, channels, k);
    }
    LocationParams {
        k,
        weights: raw,
        means,
        scales,
    }
}

fn dense(weights: &ModelWeights, prefix: &str, input: Vec<f64>) -> Vec<f64> {
    let w = weights.tensor(&format!("{prefix}.weight"));
    let b = weights.tensor(&format!("{prefix}.bias"));
    let n = input.len();
    let input = Tensor::new(vec![1, n, 1, 1], input).expect("flat input");
    let mut out = vec![0.0; w.shape()[0]];
    conv2d_point(&input, 0, w, Some(b), 0, None, 0, 0, &mut out);
    out
}

fn head_at(
    weights: &ModelWeights,
    prefix: &str,
    mut merged: Vec<f64>,
    features: &Tensor,
    b: usize,
    oy: usize,
    ox: usize,
) -> LocationParams {
    merged.extend((0..features.shape()[1]).map(|c| features.at4(b, c, oy, ox)));
    let mut hidden = dense(weights, &format!("{prefix}.fc1"), merged);
    hidden.iter_mut().for_each(|v| *v = leaky_relu(*v));
    let raw = dense(weights, &format!("{prefix}.fc2"), hidden);
    let cfg = weights.config();
    finish_head(raw, cfg.mixtures_k, cfg.scale_floor)
}

fn masked_at(
    weights: &ModelWeights,
    key: &str,
    kernel: usize,
    input: &Tensor,
    b: usize,
    oy: usize,
    ox: usize,
) -> Vec<f64> {
    let w = weights.tensor(&format!("{key}.weight"));
    let bias = weights.tensor(&format!("{key}.bias"));
    let mut out = vec![0.0; w.shape()[0]];
    let mask = causal_mask(kernel);
    conv2d_point(input, b, w, Some(bias), kernel / 2, Some(&mask), oy, ox, &mut out);
    out
}

/// Latent mixture parameters at one location, reading only latents that
/// precede `(oy, ox)` in raster order. Bit-identical to the same location of
/// the full-tensor head.
pub fn params_y_at(
    weights: &ModelWeights,
    hyper: &Tensor,
    y_hat: &Tensor,
    b: usize,
    oy: usize,
    ox: usize,
) -> LocationParams {
    let cfg = weights.config();
    let ctx = if cfg.use_context_y {
        masked_at(weights, "context_y", 5, y_hat, b, oy, ox)
    } else {
        vec![0.0; 2 * cfg.filters_n]
    };
    head_at(weights, "params_y", ctx, hyper, b, oy, ox)
}

/// Pixel mixture parameters at one location; see [`params_y_at`].
pub fn params_x_at(
    weights: &ModelWeights,
    features: &Tensor,
    x: &Tensor,
    b: usize,
    oy: usize,
    ox: usize,
) -> LocationParams {
    let cfg = weights.config();
    let ctx = if cfg.use_context_x {
        masked_at(weights, "context_x", cfg.mask_kernel_x, x, b, oy, ox)
    } else {
        vec![0.0; cfg.filters_n]
    };
    head_at(weights, "params_x", ctx, features, b, oy, ox)
}
