//! Byte-oriented range coder over 16-bit cumulative frequency tables.
//!
//! The encoder keeps a 64-bit `low` (33 significant bits, the top one being a
//! pending carry) and a 32-bit `range`. Bytes are shifted out once `range`
//! drops below 2^24; a run of `0xFF` bytes is held back until it is known
//! whether a carry will ripple through it. The very first byte of the
//! classic layout is always zero and is not stored.

use super::CoderError;
use crate::entropy::{QuantizedCdf, CDF_PRECISION, CDF_TOTAL};

const TOP: u32 = 1 << 24;

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    leading_dropped: bool,
    symbols: u64,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
            leading_dropped: false,
            symbols: 0,
        }
    }

    /// Encodes symbol index `idx` of `cdf`.
    pub fn encode(&mut self, idx: usize, cdf: &QuantizedCdf) -> Result<(), CoderError> {
        if idx >= cdf.len() {
            return Err(CoderError::SymbolOutOfSupport {
                index: idx,
                len: cdf.len(),
            });
        }
        let (start, freq) = cdf.range(idx);
        let r = self.range >> CDF_PRECISION;
        self.low += r as u64 * start as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        self.symbols += 1;
        Ok(())
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn emit(&mut self, byte: u8) {
        if self.leading_dropped {
            self.out.push(byte);
        } else {
            debug_assert_eq!(byte, 0, "leading byte of a range-coded stream is always zero");
            self.leading_dropped = true;
        }
    }

    pub fn symbols(&self) -> u64 {
        self.symbols
    }

    /// Flushes the state and returns the coded bytes.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Result<Self, CoderError> {
        let mut dec = Self {
            code: 0,
            range: u32::MAX,
            input,
            pos: 0,
        };
        for _ in 0..4 {
            dec.code = (dec.code << 8) | dec.next_byte()? as u32;
        }
        Ok(dec)
    }

    fn next_byte(&mut self) -> Result<u8, CoderError> {
        let byte = *self
            .input
            .get(self.pos)
            .ok_or(CoderError::Truncated { consumed: self.pos })?;
        self.pos += 1;
        Ok(byte)
    }

    /// Decodes one symbol index under `cdf`.
    pub fn decode(&mut self, cdf: &QuantizedCdf) -> Result<usize, CoderError> {
        let r = self.range >> CDF_PRECISION;
        let value = self.code / r;
        if value >= CDF_TOTAL {
            return Err(CoderError::Corrupt);
        }
        let idx = cdf.find(value);
        let (start, freq) = cdf.range(idx);
        self.code -= r * start;
        self.range = r * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(idx)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Errors unless every input byte was consumed.
    pub fn finish(self) -> Result<(), CoderError> {
        if self.pos != self.input.len() {
            return Err(CoderError::TrailingBytes {
                remaining: self.input.len() - self.pos,
            });
        }
        Ok(())
    }
}
