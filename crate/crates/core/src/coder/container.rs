//! Bitstream container.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `NLIC`               |
//! | 4      | 2    | format version             |
//! | 6      | 4    | image width                |
//! | 10     | 4    | image height               |
//! | 14     | 4    | padded width               |
//! | 18     | 4    | padded height              |
//! | 22     | 8    | model config hash          |
//! | 30     | 8    | model weight hash          |
//! | 38     | 4    | byte length of segment z   |
//! | 42     | 4    | byte length of segment y   |
//! | 46     | 4    | byte length of segment x   |
//! | 50     | …    | segments z, y, x           |
//! | end−4  | 4    | CRC-32 of all prior bytes  |

use super::CoderError;

pub const MAGIC: [u8; 4] = *b"NLIC";
pub const FORMAT_VERSION: u16 = 1;
/// Fixed header size in bytes.
pub const HEADER_LEN: usize = 50;
pub const CRC_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub width: u32,
    pub height: u32,
    pub padded_width: u32,
    pub padded_height: u32,
    pub config_hash: u64,
    pub weight_hash: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub header: Header,
    pub z: Vec<u8>,
    pub y: Vec<u8>,
    pub x: Vec<u8>,
}

impl Bitstream {
    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.z.len() + self.y.len() + self.x.len() + CRC_LEN
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        write_container(&self.header, &self.z, &self.y, &self.x)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CoderError> {
        read_container(bytes)
    }
}

pub fn write_container(header: &Header, z: &[u8], y: &[u8], x: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + z.len() + y.len() + x.len() + CRC_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&header.version.to_le_bytes());
    for v in [header.width, header.height, header.padded_width, header.padded_height] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&header.config_hash.to_le_bytes());
    out.extend_from_slice(&header.weight_hash.to_le_bytes());
    for seg in [z, y, x] {
        out.extend_from_slice(&(seg.len() as u32).to_le_bytes());
    }
    debug_assert_eq!(out.len(), HEADER_LEN);
    out.extend_from_slice(z);
    out.extend_from_slice(y);
    out.extend_from_slice(x);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4 bytes"))
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8 bytes"))
}

pub fn read_container(bytes: &[u8]) -> Result<Bitstream, CoderError> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(CoderError::Truncated { consumed: bytes.len() });
    }
    if bytes[..4] != MAGIC {
        return Err(CoderError::BadMagic);
    }
    let body = &bytes[..bytes.len() - CRC_LEN];
    let stored = u32_at(bytes, bytes.len() - CRC_LEN);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CoderError::Crc { stored, computed });
    }
    let version = u16_at(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(CoderError::UnsupportedVersion { found: version });
    }
    let header = Header {
        version,
        width: u32_at(bytes, 6),
        height: u32_at(bytes, 10),
        padded_width: u32_at(bytes, 14),
        padded_height: u32_at(bytes, 18),
        config_hash: u64_at(bytes, 22),
        weight_hash: u64_at(bytes, 30),
    };
    let lens = [u32_at(bytes, 38), u32_at(bytes, 42), u32_at(bytes, 46)].map(|l| l as usize);
    let payload = &body[HEADER_LEN..];
    if lens.iter().sum::<usize>() != payload.len() {
        return Err(CoderError::LengthMismatch {
            declared: lens.iter().sum(),
            actual: payload.len(),
        });
    }
    let (z, rest) = payload.split_at(lens[0]);
    let (y, x) = rest.split_at(lens[1]);
    Ok(Bitstream {
        header,
        z: z.to_vec(),
        y: y.to_vec(),
        x: x.to_vec(),
    })
}
