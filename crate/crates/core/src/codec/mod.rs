//! End-to-end lossless compression with a trained model.
//!
//! Three segments are coded in order: the hyper-latent `ẑ` under the
//! factorized prior, the latent `ŷ` in raster order under the hyper- and
//! context-conditioned mixture, and the pixels in raster order (R, G, B per
//! pixel) under the pixel mixture. The encoder evaluates each parameter head
//! once over the full tensor; the decoder evaluates it one location at a
//! time on the partially decoded tensor. Mask-A causality and a shared
//! accumulation order make the two bit-identical, and [`determinize`] snaps
//! them to lattices before any coding table is built.

mod determinize;
mod image;


pub use determinize::{
    determinize, determinize_all, largest_remainder, Lattice, MEAN_SUBSTEPS, SCALE_LEVELS, WEIGHT_UNITS,
};
pub use image::{Image, ImageError};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, Tensor, TensorError};
use crate::coder::{
    read_container, Bitstream, CoderError, Header, RangeDecoder, RangeEncoder, CRC_LEN, FORMAT_VERSION, HEADER_LEN,
};
use crate::entropy::{build_cdf, round_quantize, EntropyError, FactorizedPrior, QuantizedCdf, SymbolGrid};
use crate::network::{params_x_at, params_y_at, LocationParams, ModelWeights, Network, NetworkError};

/// Largest accepted image side.
pub const MAX_DIMENSION: usize = 8192;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("image {width}x{height} exceeds the supported maximum side of {max}")]
    Capacity { width: usize, height: usize, max: usize },
    #[error("bitstream was made with model config {found:#018x}, these weights have {expected:#018x}")]
    ConfigMismatch { expected: u64, found: u64 },
    #[error("bitstream was made with weights {found:#018x}, these weights are {expected:#018x}")]
    WeightMismatch { expected: u64, found: u64 },
    #[error("inconsistent header: {0}")]
    Header(String),
    #[error("bitstream: {0}")]
    Coder(#[from] CoderError),
    #[error("entropy model: {0}")]
    Entropy(#[from] EntropyError),
    #[error("network: {0}")]
    Network(#[from] NetworkError),
    #[error("tensor: {0}")]
    Tensor(#[from] TensorError),
}

impl CodecError {
    /// Whether the error means the input stream is damaged or belongs to
    /// other weights, as opposed to a bad request.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            Self::ConfigMismatch { .. } | Self::WeightMismatch { .. } | Self::Header(_) | Self::Coder(_)
        )
    }
}

/// Sizes of a coded stream, derivable from the bitstream alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBreakdown {
    pub width: usize,
    pub height: usize,
    pub total_bits: u64,
    /// Fixed header plus CRC.
    pub header_bits: u64,
    pub bits_z: u64,
    pub bits_y: u64,
    pub bits_x: u64,
    pub bpsp: f64,
}

/// Bits per sub-pixel of `total_bytes` for an RGB image of the given size.
pub fn bpsp(total_bytes: usize, width: usize, height: usize) -> f64 {
    (8 * total_bytes) as f64 / (width * height * 3) as f64
}

/// Rate accounting of a bitstream against its original (unpadded) size.
pub fn bpsp_report(stream: &Bitstream) -> RateBreakdown {
    let (w, h) = (stream.header.width as usize, stream.header.height as usize);
    let bytes = stream.byte_len();
    RateBreakdown {
        width: w,
        height: h,
        total_bits: 8 * bytes as u64,
        header_bits: 8 * (HEADER_LEN + CRC_LEN) as u64,
        bits_z: 8 * stream.z.len() as u64,
        bits_y: 8 * stream.y.len() as u64,
        bits_x: 8 * stream.x.len() as u64,
        bpsp: bpsp(bytes, w, h),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecReport {
    #[serde(flatten)]
    pub rate: RateBreakdown,
    /// `Σ −log₂ p̂` over all coded symbols under the quantized tables.
    pub theoretical_bits: f64,
    pub theoretical_z: f64,
    pub theoretical_y: f64,
    pub theoretical_x: f64,
    /// Latent values clamped to the latent grid.
    pub clamp_count: usize,
    pub wall_time_s: f64,
}

/// Determinized parameters in coding order, for comparing both sides.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CodecTrace {
    pub y: Vec<LocationParams>,
    pub x: Vec<LocationParams>,
}

struct Segment {
    enc: RangeEncoder,
    bits: f64,
}

impl Segment {
    fn new() -> Self {
        Self {
            enc: RangeEncoder::new(),
            bits: 0.0,
        }
    }

    fn put(&mut self, symbol: i32, grid: &SymbolGrid, cdf: &QuantizedCdf) -> Result<(), CodecError> {
        let idx = (symbol - grid.lo) as usize;
        self.bits -= cdf.probability(idx).log2();
        self.enc.encode(idx, cdf)?;
        Ok(())
    }
}

fn take(dec: &mut RangeDecoder<'_>, grid: &SymbolGrid, cdf: &QuantizedCdf) -> Result<i32, CodecError> {
    Ok(grid.lo + dec.decode(cdf)? as i32)
}

fn prior_tables(weights: &ModelWeights, grid: &SymbolGrid) -> Result<Vec<QuantizedCdf>, CodecError> {
    let prior = FactorizedPrior::from_tensors(
        weights.tensor("prior.matrix"),
        weights.tensor("prior.bias"),
        weights.tensor("prior.gate"),
    )?;
    (0..prior.channels())
        .map(|c| Ok(QuantizedCdf::from_pmf(&prior.pmf_table(c, grid))?))
        .collect()
}

fn location_tables(params: &LocationParams, grid: &SymbolGrid) -> Result<Vec<QuantizedCdf>, CodecError> {
    (0..params.channels())
        .map(|c| Ok(build_cdf(&params.mixture(c), grid)?))
        .collect()
}

fn check_dims(width: usize, height: usize) -> Result<(), CodecError> {
    if width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(CodecError::Capacity {
            width,
            height,
            max: MAX_DIMENSION,
        });
    }
    Ok(())
}

pub fn compress(image: &Image, weights: &ModelWeights) -> Result<(Bitstream, CodecReport), CodecError> {
    compress_traced(image, weights, None)
}

/// [`compress`], optionally recording the determinized parameters used for
/// every coded location.
pub fn compress_traced(
    image: &Image,
    weights: &ModelWeights,
    mut trace: Option<&mut CodecTrace>,
) -> Result<(Bitstream, CodecReport), CodecError> {
    let start = Instant::now();
    let cfg = weights.config();
    check_dims(image.width(), image.height())?;
    let padded = image.pad_to_multiple(cfg.pad_multiple());
    let (pw, ph) = (padded.width(), padded.height());
    let (pix, lat) = (SymbolGrid::pixels(), SymbolGrid::latents());
    let (pix_lattice, lat_lattice) = (Lattice::new(&pix, cfg.scale_floor), Lattice::new(&lat, cfg.scale_floor));

    let graph = Graph::new();
    let net = Network::bind(&graph, weights, false);
    let x = graph.constant(padded.to_tensor(&pix));
    let y = net.analysis(&x)?;
    let z = net.hyper_analysis(&y)?;
    let y_q = round_quantize(&y.value(), &lat);
    let z_q = round_quantize(&z.value(), &lat);

    let mut seg_z = Segment::new();
    let tables = prior_tables(weights, &lat)?;
    let (_, zc, zh, zw) = z.value().dims4("compress")?;
    for (c, table) in tables.iter().enumerate().take(zc) {
        for p in 0..zh * zw {
            seg_z.put(z_q.symbols[c * zh * zw + p], &lat, table)?;
        }
    }

    let z_hat = graph.constant(z_q.to_tensor());
    let y_hat = graph.constant(y_q.to_tensor());
    let hyper = net.hyper_synthesis(&z_hat)?;
    let py = net.params_y(&hyper, &y_hat)?.to_params(cfg.mixtures_k);
    let mut seg_y = Segment::new();
    let (_, yc, yh, yw) = y.value().dims4("compress")?;
    for oy in 0..yh {
        for ox in 0..yw {
            let loc = determinize(&py.at(0, oy, ox), &lat_lattice);
            for (c, cdf) in location_tables(&loc, &lat)?.iter().enumerate() {
                seg_y.put(y_q.symbols[(c * yh + oy) * yw + ox], &lat, cdf)?;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.y.push(loc);
            }
        }
    }
    debug_assert_eq!(yc, cfg.filters_n);

    let features = net.synthesis(&y_hat)?;
    let px = net.params_x(&features, &x)?.to_params(cfg.mixtures_k);
    let mut seg_x = Segment::new();
    for oy in 0..ph {
        for ox in 0..pw {
            let loc = determinize(&px.at(0, oy, ox), &pix_lattice);
            for (c, cdf) in location_tables(&loc, &pix)?.iter().enumerate() {
                seg_x.put(padded.get(ox, oy, c) as i32, &pix, cdf)?;
            }
            if let Some(t) = trace.as_deref_mut() {
                t.x.push(loc);
            }
        }
    }

    let header = Header {
        version: FORMAT_VERSION,
        width: image.width() as u32,
        height: image.height() as u32,
        padded_width: pw as u32,
        padded_height: ph as u32,
        config_hash: cfg.hash(),
        weight_hash: weights.hash(),
    };
    let (bz, by, bx) = (seg_z.bits, seg_y.bits, seg_x.bits);
    let stream = Bitstream {
        header,
        z: seg_z.enc.finish(),
        y: seg_y.enc.finish(),
        x: seg_x.enc.finish(),
    };
    let report = CodecReport {
        rate: bpsp_report(&stream),
        theoretical_bits: bz + by + bx,
        theoretical_z: bz,
        theoretical_y: by,
        theoretical_x: bx,
        clamp_count: y_q.clamp_count + z_q.clamp_count,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((stream, report))
}

/// Parses and decodes a serialized bitstream.
pub fn decompress_bytes(bytes: &[u8], weights: &ModelWeights) -> Result<Image, CodecError> {
    decompress(&read_container(bytes)?, weights)
}

pub fn decompress(stream: &Bitstream, weights: &ModelWeights) -> Result<Image, CodecError> {
    decompress_traced(stream, weights, None)
}

pub fn decompress_traced(
    stream: &Bitstream,
    weights: &ModelWeights,
    mut trace: Option<&mut CodecTrace>,
) -> Result<Image, CodecError> {
    let cfg = weights.config();
    let h = &stream.header;
    if h.config_hash != cfg.hash() {
        return Err(CodecError::ConfigMismatch {
            expected: cfg.hash(),
            found: h.config_hash,
        });
    }
    if h.weight_hash != weights.hash() {
        return Err(CodecError::WeightMismatch {
            expected: weights.hash(),
            found: h.weight_hash,
        });
    }
    let (w, ht) = (h.width as usize, h.height as usize);
    let (pw, ph) = (h.padded_width as usize, h.padded_height as usize);
    let m = cfg.pad_multiple();
    if w == 0 || ht == 0 || pw != w.next_multiple_of(m) || ph != ht.next_multiple_of(m) {
        return Err(CodecError::Header(format!(
            "size {w}x{ht} does not pad to {pw}x{ph} for multiple {m}"
        )));
    }
    check_dims(w, ht)?;
    let (pix, lat) = (SymbolGrid::pixels(), SymbolGrid::latents());
    let (pix_lattice, lat_lattice) = (Lattice::new(&pix, cfg.scale_floor), Lattice::new(&lat, cfg.scale_floor));
    let n = cfg.filters_n;
    let (yh, yw) = (ph / cfg.downsample_factor, pw / cfg.downsample_factor);
    let (zh, zw) = (yh / cfg.hyper_downsample, yw / cfg.hyper_downsample);

    let mut dec = RangeDecoder::new(&stream.z)?;
    let tables = prior_tables(weights, &lat)?;
    let mut z_hat = Tensor::zeros(&[1, n, zh, zw]);
    for (c, table) in tables.iter().enumerate().take(n) {
        for p in 0..zh * zw {
            z_hat.data_mut()[c * zh * zw + p] = take(&mut dec, &lat, table)? as f64;
        }
    }
    dec.finish()?;

    let graph = Graph::new();
    let net = Network::bind(&graph, weights, false);
    let hyper = net.hyper_synthesis(&graph.constant(z_hat))?.value();

    let mut dec = RangeDecoder::new(&stream.y)?;
    let mut y_hat = Tensor::zeros(&[1, n, yh, yw]);
    for oy in 0..yh {
        for ox in 0..yw {
            let loc = determinize(&params_y_at(weights, &hyper, &y_hat, 0, oy, ox), &lat_lattice);
            for (c, cdf) in location_tables(&loc, &lat)?.iter().enumerate() {
                y_hat.set4(0, c, oy, ox, take(&mut dec, &lat, cdf)? as f64);
            }
            if let Some(t) = trace.as_deref_mut() {
                t.y.push(loc);
            }
        }
    }
    dec.finish()?;

    let features = net.synthesis(&graph.constant(y_hat))?.value();
    let mut dec = RangeDecoder::new(&stream.x)?;
    let mut x = Tensor::zeros(&[1, 3, ph, pw]);
    let mut samples = vec![0u8; pw * ph * 3];
    for oy in 0..ph {
        for ox in 0..pw {
            let loc = determinize(&params_x_at(weights, &features, &x, 0, oy, ox), &pix_lattice);
            for (c, cdf) in location_tables(&loc, &pix)?.iter().enumerate() {
                let s = take(&mut dec, &pix, cdf)?;
                samples[(oy * pw + ox) * 3 + c] = s as u8;
                x.set4(0, c, oy, ox, pix.value(s));
            }
            if let Some(t) = trace.as_deref_mut() {
                t.x.push(loc);
            }
        }
    }
    dec.finish()?;

    let padded = Image::new(pw, ph, samples).map_err(|e| CodecError::Header(e.to_string()))?;
    Ok(padded.crop(0, 0, w, ht))
}
