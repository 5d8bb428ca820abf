//! Snapping mixture parameters to fixed lattices so that the encoder and
//! decoder build identical coding tables from them.
//!
//! * weights: integer counts out of 4096 per channel, largest remainder
//! * means: multiples of 1/1024 of one symbol step
//! * scales: one of 256 geometric levels from the scale floor to the grid span

use crate::entropy::SymbolGrid;
use crate::network::{GmmParams, LocationParams};

pub const WEIGHT_UNITS: u32 = 1 << 12;
pub const MEAN_SUBSTEPS: f64 = 1024.0;
pub const SCALE_LEVELS: usize = 256;

/// Lattice for one symbol grid and scale floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    mean_quantum: f64,
    log_floor: f64,
    log_step: f64,
}

impl Lattice {
    pub fn new(grid: &SymbolGrid, scale_floor: f64) -> Self {
        let log_floor = libm::log(scale_floor);
        let log_span = libm::log(grid.span());
        Self {
            mean_quantum: grid.step_norm / MEAN_SUBSTEPS,
            log_floor,
            log_step: (log_span - log_floor) / (SCALE_LEVELS - 1) as f64,
        }
    }

    pub fn mean(&self, m: f64) -> f64 {
        (m / self.mean_quantum).round() * self.mean_quantum
    }

    pub fn scale_level(&self, s: f64) -> usize {
        let pos = (libm::log(s) - self.log_floor) / self.log_step;
        pos.round().clamp(0.0, (SCALE_LEVELS - 1) as f64) as usize
    }

    pub fn scale(&self, s: f64) -> f64 {
        libm::exp(self.log_floor + self.scale_level(s) as f64 * self.log_step)
    }
}

/// Integer counts summing to `total`, proportional to `weights`: floors
/// first, then leftover units to the largest fractional parts (lowest index
/// on ties). Overshoot is taken from the largest counts.
pub fn largest_remainder(weights: &[f64], total: u32) -> Vec<u32> {
    let scaled: Vec<f64> = weights.iter().map(|&w| w.max(0.0) * total as f64).collect();
    let mut counts: Vec<u32> = scaled.iter().map(|&v| v.floor().min(total as f64) as u32).collect();
    let assigned: i64 = counts.iter().map(|&c| c as i64).sum();
    let mut left = total as i64 - assigned;
    if left > 0 {
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (scaled[a] - scaled[a].floor(), scaled[b] - scaled[b].floor());
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
    }
    while left < 0 {
        let i = (0..counts.len())
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)))
            .expect("nonempty");
        counts[i] -= 1;
        left += 1;
    }
    counts
}

/// Snaps one location's parameters; idempotent.
pub fn determinize(params: &LocationParams, lattice: &Lattice) -> LocationParams {
    let channels = params.channels();
    let k = params.k;
    let mut weights = vec![0.0; params.weights.len()];
    let mut group = vec![0.0; k];
    for c in 0..channels {
        for (kk, g) in group.iter_mut().enumerate() {
            *g = params.weights[kk * channels + c];
        }
        for (kk, n) in largest_remainder(&group, WEIGHT_UNITS).into_iter().enumerate() {
            weights[kk * channels + c] = n as f64 / WEIGHT_UNITS as f64;
        }
    }
    LocationParams {
        k,
        weights,
        means: params.means.iter().map(|&m| lattice.mean(m)).collect(),
        scales: params.scales.iter().map(|&s| lattice.scale(s)).collect(),
    }
}

/// [`determinize`] at every location of a parameter tensor.
pub fn determinize_all(params: &GmmParams, lattice: &Lattice) -> GmmParams {
    let mut out = params.clone();
    let kc = params.weights.shape()[1];
    let (b, h, w) = (params.weights.shape()[0], params.height(), params.width());
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                let d = determinize(&params.at(bi, y, x), lattice);
                for i in 0..kc {
                    out.weights.set4(bi, i, y, x, d.weights[i]);
                    out.means.set4(bi, i, y, x, d.means[i]);
                    out.scales.set4(bi, i, y, x, d.scales[i]);
                }
            }
        }
    }
    out
}
