//! Discretized probability models and rate accounting.
//!
//! Pixels and latents are coded as integer symbols on a [`SymbolGrid`]. The
//! mass of a symbol is the mixture (or prior) cumulative difference across
//! its bin, with the first and last bins absorbing the tails so that every
//! table sums to one without renormalizing.

mod cdf;
mod factorized;
mod gmm;
mod likelihood;
mod quantize;

#[cfg(test)]
mod tests;

pub use cdf::{QuantizedCdf, CDF_PRECISION, CDF_TOTAL};
pub use factorized::{factorized_bits, prior_init, prior_shapes, FactorizedPrior, LIKELIHOOD_BOUND, PRIOR_LAYERS};
pub use gmm::{gmm_pmf, gmm_pmf_table, mixture_mean, std_normal_cdf, Component};
pub use likelihood::{gmm_bits, Likelihood};
pub use quantize::{noisy_quantize, round_quantize, Quantized};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("symbol {symbol} outside grid {lo}..={hi}")]
    SymbolOutOfRange { symbol: i32, lo: i32, hi: i32 },
    #[error("{symbols} symbols cannot each receive mass at 16-bit precision")]
    Precision { symbols: usize },
    #[error("invalid probability {0}; expected a value in (0, 1]")]
    InvalidProbability(f64),
    #[error("invalid distribution parameters: {0}")]
    Params(String),
}

/// Inclusive integer alphabet `lo..=hi`; symbol `s` sits at
/// `offset + s · step_norm` on the model's normalized axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolGrid {
    pub lo: i32,
    pub hi: i32,
    pub step_norm: f64,
    pub offset: f64,
}

pub const LATENT_BOUND: i32 = 127;

impl SymbolGrid {
    /// 8-bit samples on `[−1, 1]`: step `2/255`, sample 0 at −1.
    pub const fn pixels() -> Self {
        Self {
            lo: 0,
            hi: 255,
            step_norm: 2.0 / 255.0,
            offset: -1.0,
        }
    }

    /// Integer latents `−127..=127` in their own units.
    pub const fn latents() -> Self {
        Self {
            lo: -LATENT_BOUND,
            hi: LATENT_BOUND,
            step_norm: 1.0,
            offset: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.hi < self.lo
    }

    /// Normalized value of `symbol`.
    #[inline]
    pub fn value(&self, symbol: i32) -> f64 {
        self.offset + symbol as f64 * self.step_norm
    }

    /// Width of the grid on the normalized axis.
    pub fn span(&self) -> f64 {
        (self.hi - self.lo) as f64 * self.step_norm
    }

    /// Boundary between `symbol` and `symbol + 1`.
    #[inline]
    pub fn upper_edge(&self, symbol: i32) -> f64 {
        self.offset + (symbol as f64 + 0.5) * self.step_norm
    }

    /// Lower and upper edges of a symbol's bin; `None` marks an absorbed tail.
    #[inline]
    pub fn bin_edges(&self, symbol: i32) -> (Option<f64>, Option<f64>) {
        let lo = (symbol > self.lo).then(|| self.upper_edge(symbol - 1));
        let hi = (symbol < self.hi).then(|| self.upper_edge(symbol));
        (lo, hi)
    }

    /// Closest symbol to a normalized value, clamped to the grid.
    pub fn nearest_symbol(&self, value: f64) -> i32 {
        let s = ((value - self.offset) / self.step_norm).round();
        s.clamp(self.lo as f64, self.hi as f64) as i32
    }

    pub fn check(&self, symbol: i32) -> Result<(), EntropyError> {
        if symbol < self.lo || symbol > self.hi {
            return Err(EntropyError::SymbolOutOfRange {
                symbol,
                lo: self.lo,
                hi: self.hi,
            });
        }
        Ok(())
    }
}

/// Ideal code length `Σ −log₂ p` of a sequence of symbol probabilities.
pub fn rate_bits(probs: &[f64]) -> Result<f64, EntropyError> {
    let mut bits = 0.0;
    for &p in probs {
        if !(p > 0.0 && p <= 1.0) {
            return Err(EntropyError::InvalidProbability(p));
        }
        bits -= libm::log2(p);
    }
    Ok(bits)
}

/// Builds the coder table for one mixture.
pub fn build_cdf(mixture: &[Component], grid: &SymbolGrid) -> Result<QuantizedCdf, EntropyError> {
    QuantizedCdf::from_pmf(&gmm_pmf_table(mixture, grid))
}
