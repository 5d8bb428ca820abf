//! Fast end-to-end checks that need no data or trained weights.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlic::coder::{RangeDecoder, RangeEncoder};
use nlic::entropy::{build_cdf, gmm_pmf, Component, SymbolGrid};
use nlic::train::{synth_image, SynthKind};
use nlic::{compress, decompress_bytes, CodecError, ModelConfig, ModelWeights};

type Check = fn() -> Result<(), String>;

const CHECKS: [(&str, Check); 4] = [
    ("unit gaussian bin mass", unit_gaussian_bin_mass),
    ("range coder round trip", range_coder_round_trip),
    ("codec round trip", codec_round_trip),
    ("corruption detected", corruption_detected),
];

/// Runs every check, writing one `ok`/`FAIL` line each. Returns whether all
/// passed.
pub fn run(out: &mut impl Write) -> bool {
    let mut all = true;
    for (name, check) in CHECKS {
        let result = check();
        let _ = match &result {
            Ok(()) => writeln!(out, "ok    {name}"),
            Err(why) => writeln!(out, "FAIL  {name}: {why}"),
        };
        all &= result.is_ok();
    }
    all
}

fn unit_gaussian_bin_mass() -> Result<(), String> {
    // erf(1/(2√2)) for a standard normal over [−½, ½].
    let grid = SymbolGrid {
        lo: -50,
        hi: 50,
        step_norm: 1.0,
        offset: 0.0,
    };
    let unit = [Component {
        weight: 1.0,
        mean: 0.0,
        scale: 1.0,
    }];
    let p = gmm_pmf(0, &unit, &grid).map_err(|e| e.to_string())?;
    if (p - 0.382_924_9).abs() > 1e-6 {
        return Err(format!("got {p}"));
    }
    Ok(())
}

fn range_coder_round_trip() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = SymbolGrid::latents();
    let tables: Vec<_> = (0..8)
        .map(|i| {
            let mix = [Component {
                weight: 1.0,
                mean: i as f64 - 4.0,
                scale: 0.3 + i as f64,
            }];
            build_cdf(&mix, &grid).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let symbols: Vec<(usize, usize)> = (0..5000)
        .map(|_| (rng.gen_range(0..8), rng.gen_range(120..135)))
        .collect();
    let mut enc = RangeEncoder::new();
    for &(t, s) in &symbols {
        enc.encode(s, &tables[t]).map_err(|e| e.to_string())?;
    }
    let bytes = enc.finish();
    let mut dec = RangeDecoder::new(&bytes).map_err(|e| e.to_string())?;
    for &(t, s) in &symbols {
        if dec.decode(&tables[t]).map_err(|e| e.to_string())? != s {
            return Err("decoded symbol differs".into());
        }
    }
    dec.finish().map_err(|e| e.to_string())
}

fn small_weights() -> Result<ModelWeights, String> {
    let cfg = ModelConfig {
        filters_n: 4,
        mixtures_k: 2,
        ..ModelConfig::default()
    };
    ModelWeights::init(&cfg, 5).map_err(|e| e.to_string())
}

fn codec_round_trip() -> Result<(), String> {
    let weights = small_weights()?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (kind, w, h) in [
        (SynthKind::Gradient, 13, 9),
        (SynthKind::Noise, 8, 8),
        (SynthKind::Constant, 1, 1),
    ] {
        let img = synth_image(kind, w, h, &mut rng);
        let (stream, _) = compress(&img, &weights).map_err(|e| e.to_string())?;
        let back = decompress_bytes(&stream.to_bytes(), &weights).map_err(|e| e.to_string())?;
        if back != img {
            return Err(format!("{} {w}x{h} image changed", kind.name()));
        }
    }
    Ok(())
}

fn corruption_detected() -> Result<(), String> {
    let weights = small_weights()?;
    let img = synth_image(SynthKind::Texture, 8, 8, &mut ChaCha8Rng::seed_from_u64(3));
    let mut bytes = compress(&img, &weights).map_err(|e| e.to_string())?.0.to_bytes();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    match decompress_bytes(&bytes, &weights) {
        Err(e) if e.is_integrity() => Ok(()),
        Err(e) => Err(format!("wrong error kind: {e}")),
        Ok(_) => Err("damaged stream decoded".into()),
    }
    .and_then(|()| {
        let other = ModelWeights::init(weights.config(), 6).map_err(|e| e.to_string())?;
        let good = compress(&img, &weights).map_err(|e| e.to_string())?.0.to_bytes();
        match decompress_bytes(&good, &other) {
            Err(CodecError::WeightMismatch { .. }) => Ok(()),
            other => Err(format!("foreign weights not rejected: {other:?}")),
        }
    })
}
