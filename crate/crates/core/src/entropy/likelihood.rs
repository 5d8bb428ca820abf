use super::factorized::{bound_likelihood, LIKELIHOOD_BOUND};
use super::gmm::normal_tail;
use super::SymbolGrid;
use crate::autodiff::{BackwardFn, Tensor, TensorError, Var};

/// How a target value is turned into a probability mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Likelihood {
    /// Targets sit on `grid`; the mass is integrated over the symbol's bin
    /// and the edge bins absorb the tails (exactly what the coder uses).
    Binned(SymbolGrid),
    /// Continuous (noise-relaxed) targets: mass of `[t − step/2, t + step/2]`.
    Noisy { step: f64 },
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn density(t: f64) -> f64 {
    INV_SQRT_2PI * libm::exp(-0.5 * t * t)
}

#[inline]
fn cdf(t: f64) -> f64 {
    if t < 0.0 {
        normal_tail(t)
    } else {
        1.0 - normal_tail(t)
    }
}

/// Standardized mass of one component between edges plus the density terms
/// the gradients need: `(mass, φ(b) − φ(a), φ(b)·b − φ(a)·a)`.
#[inline]
fn component_terms(lo: Option<f64>, hi: Option<f64>, mean: f64, scale: f64) -> (f64, f64, f64) {
    let ta = lo.map(|e| (e - mean) / scale);
    let tb = hi.map(|e| (e - mean) / scale);
    let mass = match (ta, tb) {
        (None, None) => 1.0,
        (None, Some(b)) => cdf(b),
        (Some(a), None) => 1.0 - cdf(a),
        (Some(a), Some(b)) => {
            if a >= 0.0 {
                normal_tail(a) - normal_tail(b)
            } else if b <= 0.0 {
                normal_tail(b) - normal_tail(a)
            } else {
                1.0 - normal_tail(a) - normal_tail(b)
            }
        }
    };
    let (pa, pta) = ta.map_or((0.0, 0.0), |a| {
        let p = density(a);
        (p, p * a)
    });
    let (pb, ptb) = tb.map_or((0.0, 0.0), |b| {
        let p = density(b);
        (p, p * b)
    });
    (mass, pb - pa, ptb - pta)
}

/// Total bits `Σ −log₂ p(target)` under per-element Gaussian mixtures.
///
/// `weights`, `means`, `scales` are `[B, K·C, H, W]` with component `k` of
/// channel `c` at channel index `k·C + c`; `target` is `[B, C, H, W]`.
/// Differentiable in the mixture parameters, and in the target for
/// [`Likelihood::Noisy`].
pub fn gmm_bits<'g>(
    weights: &Var<'g>,
    means: &Var<'g>,
    scales: &Var<'g>,
    target: &Var<'g>,
    likelihood: Likelihood,
) -> Result<Var<'g>, TensorError> {
    let (w, mu, sg, t) = (weights.value(), means.value(), scales.value(), target.value());
    let (b, c, h, wd) = t.dims4("gmm_bits")?;
    let (wb, kc, wh, ww) = w.dims4("gmm_bits")?;
    if (wb, wh, ww) != (b, h, wd) || c == 0 || kc % c != 0 || mu.shape() != w.shape() || sg.shape() != w.shape() {
        return Err(TensorError::Shape {
            op: "gmm_bits",
            detail: format!(
                "mixture {:?}/{:?}/{:?} does not match target {:?}",
                w.shape(),
                mu.shape(),
                sg.shape(),
                t.shape()
            ),
        });
    }
    let k = kc / c;
    let plane = h * wd;
    let edges = move |value: f64| -> (Option<f64>, Option<f64>) {
        match likelihood {
            Likelihood::Binned(grid) => grid.bin_edges(grid.nearest_symbol(value)),
            Likelihood::Noisy { step } => (Some(value - 0.5 * step), Some(value + 0.5 * step)),
        }
    };
    // Flat index of component `kk` for target element (bi, ci, p).
    let comp = move |bi: usize, ci: usize, kk: usize, p: usize| ((bi * kc) + kk * c + ci) * plane + p;

    let mut total = 0.0;
    for bi in 0..b {
        for ci in 0..c {
            for p in 0..plane {
                let (lo, hi) = edges(t.data()[(bi * c + ci) * plane + p]);
                let mut prob = 0.0;
                for kk in 0..k {
                    let i = comp(bi, ci, kk, p);
                    let (mass, _, _) = component_terms(lo, hi, mu.data()[i], sg.data()[i]);
                    prob += w.data()[i] * mass;
                }
                total -= libm::log2(bound_likelihood(prob));
            }
        }
    }

    let make = move || -> BackwardFn {
        Box::new(move |g: &[f64], needs: &[bool]| {
            let upstream = g[0];
            let mut gw = vec![0.0; w.numel()];
            let mut gmu = vec![0.0; w.numel()];
            let mut gsg = vec![0.0; w.numel()];
            let mut gt = vec![0.0; t.numel()];
            let mut terms = vec![(0.0, 0.0, 0.0); k];
            for bi in 0..b {
                for ci in 0..c {
                    for p in 0..plane {
                        let ti = (bi * c + ci) * plane + p;
                        let (lo, hi) = edges(t.data()[ti]);
                        let mut prob = 0.0;
                        for (kk, term) in terms.iter_mut().enumerate() {
                            let i = comp(bi, ci, kk, p);
                            *term = component_terms(lo, hi, mu.data()[i], sg.data()[i]);
                            prob += w.data()[i] * term.0;
                        }
                        if prob < LIKELIHOOD_BOUND {
                            continue;
                        }
                        let dp = -upstream / (prob * std::f64::consts::LN_2);
                        for (kk, &(mass, dphi, dphit)) in terms.iter().enumerate() {
                            let i = comp(bi, ci, kk, p);
                            let (wk, sk) = (w.data()[i], sg.data()[i]);
                            gw[i] = dp * mass;
                            gmu[i] = -dp * wk * dphi / sk;
                            gsg[i] = -dp * wk * dphit / sk;
                            gt[ti] += dp * wk * dphi / sk;
                        }
                    }
                }
            }
            let target_grad = matches!(likelihood, Likelihood::Noisy { .. }) && needs[3];
            vec![
                needs[0].then_some(gw),
                needs[1].then_some(gmu),
                needs[2].then_some(gsg),
                target_grad.then_some(gt),
            ]
        })
    };
    Ok(weights
        .graph()
        .record(Tensor::scalar(total), &[*weights, *means, *scales, *target], make))
}
