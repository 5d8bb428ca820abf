use std::fmt::Write as _;

use serde::Serialize;

use super::TrainError;
use crate::codec::{compress, decompress_bytes, Image};
use crate::network::ModelWeights;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub path: String,
    pub bpsp: f64,
    pub bits_z: u64,
    pub bits_y: u64,
    pub bits_x: u64,
    pub theoretical_bits: f64,
    /// Actual minus theoretical bits.
    pub gap_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_bpsp: f64,
}

impl EvalReport {
    /// Plain-text table, one image per row, then the mean.
    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.path.len()).max().unwrap_or(0).max(5);
        let mut out = format!("{:<width$}  {:>7}  {:>10}\n", "image", "bpsp", "gap_bits");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>7.3}  {:>10.1}", r.path, r.bpsp, r.gap_bits);
        }
        let _ = writeln!(out, "{:<width$}  {:>7.3}", "Mean", self.mean_bpsp);
        out
    }
}

/// Compresses and decompresses every image, failing on any mismatch.
pub fn eval(weights: &ModelWeights, images: &[(String, Image)]) -> Result<EvalReport, TrainError> {
    let mut rows = Vec::with_capacity(images.len());
    for (path, img) in images {
        let (stream, report) = compress(img, weights)?;
        let back = decompress_bytes(&stream.to_bytes(), weights)?;
        if &back != img {
            return Err(TrainError::RoundTrip(path.clone()));
        }
        let r = report.rate;
        rows.push(EvalRow {
            path: path.clone(),
            bpsp: r.bpsp,
            bits_z: r.bits_z,
            bits_y: r.bits_y,
            bits_x: r.bits_x,
            theoretical_bits: report.theoretical_bits,
            gap_bits: r.total_bits as f64 - report.theoretical_bits,
        });
    }
    let mean_bpsp = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.bpsp).sum::<f64>() / rows.len() as f64
    };
    Ok(EvalReport { rows, mean_bpsp })
}
