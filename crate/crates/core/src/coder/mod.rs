//! Range coder and bitstream container.

mod container;
mod range;

#[cfg(test)]
mod tests;

pub use container::{read_container, write_container, Bitstream, Header, CRC_LEN, FORMAT_VERSION, HEADER_LEN, MAGIC};
pub use range::{RangeDecoder, RangeEncoder};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoderError {
    #[error("symbol index {index} outside table of {len} symbols")]
    SymbolOutOfSupport { index: usize, len: usize },
    #[error("stream truncated after {consumed} bytes")]
    Truncated { consumed: usize },
    #[error("{remaining} unread bytes after the last symbol")]
    TrailingBytes { remaining: usize },
    #[error("coded value outside the cumulative table; stream is corrupt")]
    Corrupt,
    #[error("not an NLIC bitstream (bad magic)")]
    BadMagic,
    #[error("unsupported bitstream format version {found}")]
    UnsupportedVersion { found: u16 },
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("segment lengths declare {declared} bytes but {actual} are present")]
    LengthMismatch { declared: usize, actual: usize },
}
