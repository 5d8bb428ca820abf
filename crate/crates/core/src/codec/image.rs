//! 8-bit RGB images and their file formats.
//!
//! Samples are stored interleaved (`R, G, B` per pixel), rows top to bottom.

use std::io::Cursor;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::entropy::SymbolGrid;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed image: {0}")]
    Format(String),
    #[error("unsupported image: {0}")]
    Unsupported(String),
}

#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Format(format!("empty image {width}x{height}")));
        }
        if samples.len() != width * height * 3 {
            return Err(ImageError::Format(format!(
                "{} samples for a {width}x{height} RGB image",
                samples.len()
            )));
        }
        Ok(Self { width, height, samples })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> u8) -> Self {
        let mut samples = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    samples.push(f(x, y, c));
                }
            }
        }
        Self { width, height, samples }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    /// Number of sub-pixels, `W·H·3`.
    pub fn subpixels(&self) -> usize {
        self.samples.len()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.samples[(y * self.width + x) * 3 + c]
    }

    /// Extends right and bottom edges by replication up to multiples of `m`.
    pub fn pad_to_multiple(&self, m: usize) -> Image {
        let (pw, ph) = (self.width.next_multiple_of(m), self.height.next_multiple_of(m));
        Image::from_fn(pw, ph, |x, y, c| {
            self.get(x.min(self.width - 1), y.min(self.height - 1), c)
        })
    }

    /// Top-left `width × height` region.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Image {
        assert!(
            x0 + width <= self.width && y0 + height <= self.height,
            "crop outside image"
        );
        Image::from_fn(width, height, |x, y, c| self.get(x0 + x, y0 + y, c))
    }

    /// Planar `[1, 3, H, W]` tensor of normalized values on `grid`.
    pub fn to_tensor(&self, grid: &SymbolGrid) -> Tensor {
        let plane = self.width * self.height;
        Tensor::from_fn(&[1, 3, self.height, self.width], |i| {
            let (c, p) = (i / plane, i % plane);
            grid.value(self.samples[p * 3 + c] as i32)
        })
    }

    /// Parses binary PPM (`P6`, maxval 255).
    pub fn from_ppm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err(ImageError::Format("truncated PPM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(ImageError::Unsupported(format!(
                "PPM variant {:?} (only P6)",
                fields[0]
            )));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| ImageError::Format(format!("bad PPM header field {s:?}")))
        };
        let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(ImageError::Unsupported(format!("PPM maxval {maxval} (only 255)")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let need = w
            .checked_mul(h)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| ImageError::Format("PPM dimensions overflow".into()))?;
        if bytes.len() < pos + need {
            return Err(ImageError::Format(format!(
                "PPM raster has {} bytes, expected {need}",
                bytes.len().saturating_sub(pos)
            )));
        }
        Self::new(w, h, bytes[pos..pos + need].to_vec())
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    /// Decodes an 8-bit PNG. Grayscale and palette images are expanded to
    /// RGB; alpha channels and 16-bit depths are rejected.
    pub fn from_png(bytes: &[u8]) -> Result<Self, ImageError> {
        let fmt = |e: png::DecodingError| ImageError::Format(format!("png: {e}"));
        let mut decoder = png::Decoder::new(Cursor::new(bytes));
        decoder.set_transformations(png::Transformations::EXPAND);
        let mut reader = decoder.read_info().map_err(fmt)?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| ImageError::Format("png: image too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(fmt)?;
        if info.bit_depth != png::BitDepth::Eight {
            return Err(ImageError::Unsupported(format!("png bit depth {:?}", info.bit_depth)));
        }
        let (w, h) = (info.width as usize, info.height as usize);
        let data = &buf[..info.buffer_size()];
        let samples = match info.color_type {
            png::ColorType::Rgb => data.to_vec(),
            png::ColorType::Grayscale => data.iter().flat_map(|&v| [v, v, v]).collect(),
            other => return Err(ImageError::Unsupported(format!("png color type {other:?}"))),
        };
        Self::new(w, h, samples)
    }

    pub fn to_png(&self) -> Result<Vec<u8>, ImageError> {
        let mut out = Vec::new();
        let enc_err = |e: png::EncodingError| ImageError::Format(format!("png: {e}"));
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(enc_err)?;
            writer.write_image_data(&self.samples).map_err(enc_err)?;
        }
        Ok(out)
    }

    /// Reads a PPM or PNG file, chosen by content.
    pub fn load(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path)?;
        if bytes.starts_with(b"\x89PNG") {
            Self::from_png(&bytes)
        } else if bytes.starts_with(b"P") {
            Self::from_ppm(&bytes)
        } else {
            Err(ImageError::Unsupported(format!(
                "{}: not a PPM or PNG file",
                path.display()
            )))
        }
    }

    /// Writes PNG for a `.png` extension and PPM otherwise.
    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        let bytes = if is_png { self.to_png()? } else { self.to_ppm() };
        std::fs::write(path, bytes)?;
        Ok(())
    }
}
