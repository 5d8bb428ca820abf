use super::{EntropyError, SymbolGrid};

/// One Gaussian component of a discretized mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub scale: f64,
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Beyond this many standard deviations both tails are below `1e-300`.
const TAIL_CUTOFF: f64 = 38.0;

/// Standard normal tail mass `P(Z > |t|)`.
#[inline]
pub(crate) fn normal_tail(t: f64) -> f64 {
    let a = t.abs();
    if a > TAIL_CUTOFF {
        0.0
    } else {
        0.5 * libm::erfc(a * FRAC_1_SQRT_2)
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(t: f64) -> f64 {
    if t < 0.0 {
        normal_tail(t)
    } else {
        1.0 - normal_tail(t)
    }
}

/// Standardized position of a bin edge, with the lower/upper tail mass at
/// that edge computed from a single `erfc` call.
#[derive(Clone, Copy)]
struct Edge {
    t: f64,
    tail: f64,
}

impl Edge {
    #[inline]
    fn new(edge: f64, c: &Component) -> Self {
        let t = (edge - c.mean) / c.scale;
        Self {
            t,
            tail: normal_tail(t),
        }
    }

    #[inline]
    fn cdf(self) -> f64 {
        if self.t < 0.0 {
            self.tail
        } else {
            1.0 - self.tail
        }
    }

    #[inline]
    fn sf(self) -> f64 {
        if self.t < 0.0 {
            1.0 - self.tail
        } else {
            self.tail
        }
    }
}

/// Mass between two edges; `None` stands for −∞ / +∞.
#[inline]
fn bin_mass(lower: Option<Edge>, upper: Option<Edge>) -> f64 {
    match (lower, upper) {
        (None, None) => 1.0,
        (None, Some(u)) => u.cdf(),
        (Some(l), None) => l.sf(),
        (Some(l), Some(u)) => {
            if l.t >= 0.0 {
                l.tail - u.tail
            } else if u.t <= 0.0 {
                u.tail - l.tail
            } else {
                1.0 - l.tail - u.tail
            }
        }
    }
}

/// Probability of `symbol` under the mixture integrated over its bin. The
/// first and last bins absorb the tails, so the masses over the full grid sum
/// to one.
pub fn gmm_pmf(symbol: i32, mixture: &[Component], grid: &SymbolGrid) -> Result<f64, EntropyError> {
    grid.check(symbol)?;
    let (lo_edge, hi_edge) = grid.bin_edges(symbol);
    Ok(mixture.iter().fold(0.0, |acc, c| {
        let lower = lo_edge.map(|e| Edge::new(e, c));
        let upper = hi_edge.map(|e| Edge::new(e, c));
        acc + c.weight * bin_mass(lower, upper)
    }))
}

/// Masses of every symbol of `grid`, in symbol order. Each entry equals
/// [`gmm_pmf`] for that symbol bit for bit.
pub fn gmm_pmf_table(mixture: &[Component], grid: &SymbolGrid) -> Vec<f64> {
    let n = grid.len();
    let mut pmf = vec![0.0; n];
    let mut edges: Vec<Edge> = Vec::with_capacity(n.saturating_sub(1));
    for c in mixture {
        edges.clear();
        edges.extend((0..n - 1).map(|i| Edge::new(grid.upper_edge(grid.lo + i as i32), c)));
        for (i, slot) in pmf.iter_mut().enumerate() {
            let lower = (i > 0).then(|| edges[i - 1]);
            let upper = (i + 1 < n).then(|| edges[i]);
            *slot += c.weight * bin_mass(lower, upper);
        }
    }
    pmf
}

/// Mixture density mean `Σ w_k μ_k`.
pub fn mixture_mean(mixture: &[Component]) -> f64 {
    mixture.iter().map(|c| c.weight * c.mean).sum()
}
