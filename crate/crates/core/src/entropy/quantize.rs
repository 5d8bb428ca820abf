use rand::Rng;

use super::SymbolGrid;
use crate::autodiff::{Tensor, Var};

/// Training-time stand-in for rounding: adds iid uniform noise from the open
/// interval `(−½, ½)`. The gradient passes through unchanged.
pub fn noisy_quantize<'g, R: Rng + ?Sized>(y: &Var<'g>, rng: &mut R) -> Var<'g> {
    let shape = y.shape();
    let noise = Tensor::from_fn(&shape, |_| loop {
        let u: f64 = rng.gen::<f64>() - 0.5;
        if u != -0.5 {
            break u;
        }
    });
    y.add(&y.graph().constant(noise))
        .expect("noise has the same shape as its input")
}

/// Integer symbols from rounding, with out-of-grid values clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub shape: Vec<usize>,
    pub symbols: Vec<i32>,
    /// Number of elements that were clamped to the grid bounds.
    pub clamp_count: usize,
}

impl Quantized {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.symbols.iter().map(|&s| s as f64).collect())
            .expect("shape matches symbol count")
    }
}

/// Rounds half away from zero, then clamps to `grid`.
pub fn round_quantize(y: &Tensor, grid: &SymbolGrid) -> Quantized {
    let mut clamp_count = 0;
    let symbols = y
        .data()
        .iter()
        .map(|&v| {
            let r = v.round();
            if r < grid.lo as f64 || r.is_nan() {
                clamp_count += 1;
                grid.lo
            } else if r > grid.hi as f64 {
                clamp_count += 1;
                grid.hi
            } else {
                r as i32
            }
        })
        .collect();
    Quantized {
        shape: y.shape().to_vec(),
        symbols,
        clamp_count,
    }
}
