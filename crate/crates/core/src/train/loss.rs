use rand::Rng;
use serde::Serialize;

use crate::autodiff::{Tensor, TensorError, Var};
use crate::codec::Image;
use crate::entropy::{factorized_bits, gmm_bits, noisy_quantize, round_quantize, Likelihood, SymbolGrid};
use crate::network::{ModelWeights, Network};

/// Loss components, each in bits per sub-pixel except the L2 term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub r_x: f64,
    pub r_y: f64,
    pub r_z: f64,
    /// `λ · mean((x − x̄)²)` with `x̄` the pixel mixture mean.
    pub lambda_term: f64,
}

impl LossParts {
    pub fn is_finite(&self) -> bool {
        [self.total, self.r_x, self.r_y, self.r_z, self.lambda_term]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Training objective on a normalized batch `[B, 3, H, W]`: the three rate
/// terms under noise-relaxed latents, plus the λ-weighted L2 distance
/// between the pixels and their mixture mean.
pub fn loss<'g, R: Rng + ?Sized>(
    net: &Network<'g>,
    batch: &Tensor,
    lambda: f64,
    rng: &mut R,
) -> Result<(Var<'g>, LossParts), TensorError> {
    let graph = net.graph();
    let k = net.config().mixtures_k;
    let x = graph.constant(batch.clone());
    let (b, _, h, w) = batch.dims4("loss")?;
    let subpixels = (b * 3 * h * w) as f64;

    let y = net.analysis(&x)?;
    let z = net.hyper_analysis(&y)?;
    let z_tilde = noisy_quantize(&z, rng);
    let y_tilde = noisy_quantize(&y, rng);

    let bits_z = factorized_bits(
        &net.var("prior.matrix"),
        &net.var("prior.bias"),
        &net.var("prior.gate"),
        &z_tilde,
    )?;
    let hyper = net.hyper_synthesis(&z_tilde)?;
    let py = net.params_y(&hyper, &y_tilde)?;
    let bits_y = gmm_bits(
        &py.weights,
        &py.means,
        &py.scales,
        &y_tilde,
        Likelihood::Noisy { step: 1.0 },
    )?;

    let features = net.synthesis(&y_tilde)?;
    let px = net.params_x(&features, &x)?;
    let bits_x = gmm_bits(
        &px.weights,
        &px.means,
        &px.scales,
        &x,
        Likelihood::Binned(SymbolGrid::pixels()),
    )?;

    let rate = bits_x.add(&bits_y)?.add(&bits_z)?.scale(1.0 / subpixels);
    let (total, lambda_term) = if lambda > 0.0 {
        let mse = x.sub(&px.mixture_mean(k)?)?.square().mean();
        let term = mse.scale(lambda);
        (rate.add(&term)?, term.item())
    } else {
        (rate, 0.0)
    };
    let parts = LossParts {
        total: total.item(),
        r_x: bits_x.item() / subpixels,
        r_y: bits_y.item() / subpixels,
        r_z: bits_z.item() / subpixels,
        lambda_term,
    };
    Ok((total, parts))
}

/// Ideal code lengths of one image with rounded latents, without
/// determinization or table quantization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub bits_x: f64,
    pub bits_y: f64,
    pub bits_z: f64,
}

impl RateEstimate {
    pub fn total(&self) -> f64 {
        self.bits_x + self.bits_y + self.bits_z
    }
}

pub fn rounded_rate(weights: &ModelWeights, image: &Image) -> Result<RateEstimate, TensorError> {
    let graph = crate::autodiff::Graph::new();
    let net = Network::bind(&graph, weights, false);
    let (pix, lat) = (SymbolGrid::pixels(), SymbolGrid::latents());
    let padded = image.pad_to_multiple(weights.config().pad_multiple());
    let x = graph.constant(padded.to_tensor(&pix));
    let y = net.analysis(&x)?;
    let z = net.hyper_analysis(&y)?;
    let y_hat = graph.constant(round_quantize(&y.value(), &lat).to_tensor());
    let z_hat = graph.constant(round_quantize(&z.value(), &lat).to_tensor());
    let bits_z = factorized_bits(
        &net.var("prior.matrix"),
        &net.var("prior.bias"),
        &net.var("prior.gate"),
        &z_hat,
    )?;
    let py = net.params_y(&net.hyper_synthesis(&z_hat)?, &y_hat)?;
    let bits_y = gmm_bits(&py.weights, &py.means, &py.scales, &y_hat, Likelihood::Binned(lat))?;
    let px = net.params_x(&net.synthesis(&y_hat)?, &x)?;
    let bits_x = gmm_bits(&px.weights, &px.means, &px.scales, &x, Likelihood::Binned(pix))?;
    Ok(RateEstimate {
        bits_x: bits_x.item(),
        bits_y: bits_y.item(),
        bits_z: bits_z.item(),
    })
}
