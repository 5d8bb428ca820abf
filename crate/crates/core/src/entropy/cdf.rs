use super::EntropyError;

pub const CDF_PRECISION: u32 = 16;
pub const CDF_TOTAL: u32 = 1 << CDF_PRECISION;

/// Fixed-point cumulative frequency table: `cum[0] = 0`, `cum[n] = 2^16`,
/// strictly increasing, so every symbol has mass at least `2^-16`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCdf {
    cum: Vec<u32>,
}

impl QuantizedCdf {
    /// Quantizes a pmf: `floor(p * 2^16)` per symbol, raised to at least 1,
    /// then the total is repaired on the largest entries (lowest index wins
    /// ties) until it is exactly `2^16`.
    pub fn from_pmf(pmf: &[f64]) -> Result<Self, EntropyError> {
        let n = pmf.len();
        if n < 2 || n > (CDF_TOTAL / 2) as usize {
            return Err(EntropyError::Precision { symbols: n });
        }
        let scale = CDF_TOTAL as f64;
        let mut freq: Vec<u32> = pmf
            .iter()
            .map(|&p| {
                let f = (p * scale).floor();
                if f.is_nan() || f < 1.0 {
                    1
                } else if f > scale {
                    CDF_TOTAL
                } else {
                    f as u32
                }
            })
            .collect();
        let sum: u64 = freq.iter().map(|&f| f as u64).sum();
        let total = CDF_TOTAL as u64;
        if sum < total {
            let i = argmax(&freq);
            freq[i] += (total - sum) as u32;
        } else {
            let mut excess = sum - total;
            while excess > 0 {
                let i = argmax(&freq);
                let take = excess.min(freq[i] as u64 - 1);
                freq[i] -= take as u32;
                excess -= take;
            }
        }
        let mut cum = Vec::with_capacity(n + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freq {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, CDF_TOTAL);
        Ok(Self { cum })
    }

    /// Number of symbols (indices `0..len`).
    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cum(&self) -> &[u32] {
        &self.cum
    }

    /// `(start, frequency)` of symbol index `idx`.
    #[inline]
    pub fn range(&self, idx: usize) -> (u32, u32) {
        (self.cum[idx], self.cum[idx + 1] - self.cum[idx])
    }

    /// Quantized probability of symbol index `idx`.
    pub fn probability(&self, idx: usize) -> f64 {
        self.range(idx).1 as f64 / CDF_TOTAL as f64
    }

    /// Symbol index whose interval contains `value` (`value < 2^16`).
    #[inline]
    pub fn find(&self, value: u32) -> usize {
        // Largest idx with cum[idx] <= value.
        self.cum.partition_point(|&c| c <= value) - 1
    }
}

fn argmax(freq: &[u32]) -> usize {
    let mut best = 0;
    for (i, &f) in freq.iter().enumerate() {
        if f > freq[best] {
            best = i;
        }
    }
    best
}
