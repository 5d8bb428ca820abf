use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::entropy::{QuantizedCdf, CDF_TOTAL};

fn random_cdf(rng: &mut ChaCha8Rng) -> QuantizedCdf {
    let n = rng.gen_range(2..300);
    let peaky = rng.gen_bool(0.5);
    let pmf: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen();
            if peaky {
                u.powi(12)
            } else {
                u
            }
        })
        .collect();
    let total: f64 = pmf.iter().sum();
    QuantizedCdf::from_pmf(&pmf.iter().map(|p| p / total).collect::<Vec<_>>()).unwrap()
}

/// Draws a symbol index from the quantized distribution itself.
fn draw(cdf: &QuantizedCdf, rng: &mut ChaCha8Rng) -> usize {
    cdf.find(rng.gen_range(0..CDF_TOTAL))
}

fn info_bits(cdf: &QuantizedCdf, idx: usize) -> f64 {
    -cdf.probability(idx).log2()
}

#[test]
fn empty_stream_flush_is_small() {
    let bytes = RangeEncoder::new().finish();
    assert!(bytes.len() <= 8);
    let dec = RangeDecoder::new(&bytes).unwrap();
    dec.finish().unwrap();
}

#[test]
fn fair_bits_cost_one_bit_each() {
    let cdf = QuantizedCdf::from_pmf(&[0.5, 0.5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let symbols: Vec<usize> = (0..10_000).map(|_| rng.gen_range(0..2)).collect();
    let mut enc = RangeEncoder::new();
    for &s in &symbols {
        enc.encode(s, &cdf).unwrap();
    }
    let bytes = enc.finish();
    // 10^4 bits of information is 1250 bytes; the flush adds at most 4.
    assert!((1210..=1290).contains(&bytes.len()), "{}", bytes.len());
    let mut dec = RangeDecoder::new(&bytes).unwrap();
    for &s in &symbols {
        assert_eq!(dec.decode(&cdf).unwrap(), s);
    }
    dec.finish().unwrap();
}

#[test]
fn fuzz_round_trip_and_efficiency() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tables: Vec<QuantizedCdf> = (0..128).map(|_| random_cdf(&mut rng)).collect();
    for _ in 0..10 {
        let n = 20_000;
        let mut enc = RangeEncoder::new();
        let mut seq = Vec::with_capacity(n);
        let mut info = 0.0;
        for _ in 0..n {
            let t = rng.gen_range(0..tables.len());
            let s = draw(&tables[t], &mut rng);
            info += info_bits(&tables[t], s);
            enc.encode(s, &tables[t]).unwrap();
            seq.push((t, s));
        }
        let bytes = enc.finish();
        let actual = 8.0 * bytes.len() as f64;
        assert!(actual - info <= 32.0 + 0.01 * n as f64, "excess {}", actual - info);
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &(t, s) in &seq {
            assert_eq!(dec.decode(&tables[t]).unwrap(), s);
        }
        dec.finish().unwrap();
    }
}

#[test]
fn improbable_symbols_round_trip() {
    // Always coding the least likely symbol stresses carry propagation.
    let mut pmf = vec![0.0; 256];
    pmf[7] = 1.0;
    let cdf = QuantizedCdf::from_pmf(&pmf).unwrap();
    let seq: Vec<usize> = (0..5000).map(|i| [0, 255, 7, 128][i % 4]).collect();
    let mut enc = RangeEncoder::new();
    for &s in &seq {
        enc.encode(s, &cdf).unwrap();
    }
    let bytes = enc.finish();
    let mut dec = RangeDecoder::new(&bytes).unwrap();
    for &s in &seq {
        assert_eq!(dec.decode(&cdf).unwrap(), s);
    }
    dec.finish().unwrap();
}

#[test]
fn truncation_is_reported() {
    let cdf = QuantizedCdf::from_pmf(&[0.25; 4]).unwrap();
    let mut enc = RangeEncoder::new();
    for i in 0..400 {
        enc.encode(i % 4, &cdf).unwrap();
    }
    let bytes = enc.finish();
    let cut = &bytes[..bytes.len() - 3];
    let mut dec = RangeDecoder::new(cut).unwrap();
    let err = (0..400).map(|_| dec.decode(&cdf)).find_map(Result::err);
    assert!(matches!(err, Some(CoderError::Truncated { .. })), "{err:?}");
    assert!(matches!(
        RangeDecoder::new(&bytes[..2]),
        Err(CoderError::Truncated { consumed: 2 })
    ));
}

#[test]
fn out_of_support_symbol_is_rejected() {
    let cdf = QuantizedCdf::from_pmf(&[0.5, 0.5]).unwrap();
    let mut enc = RangeEncoder::new();
    assert_eq!(
        enc.encode(2, &cdf),
        Err(CoderError::SymbolOutOfSupport { index: 2, len: 2 })
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn any_sequence_round_trips(seed in any::<u64>(), n in 0usize..3000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables: Vec<QuantizedCdf> = (0..4).map(|_| random_cdf(&mut rng)).collect();
        let seq: Vec<(usize, usize)> = (0..n)
            .map(|_| {
                let t = rng.gen_range(0..4);
                (t, rng.gen_range(0..tables[t].len()))
            })
            .collect();
        let mut enc = RangeEncoder::new();
        for &(t, s) in &seq {
            enc.encode(s, &tables[t]).unwrap();
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &(t, s) in &seq {
            prop_assert_eq!(dec.decode(&tables[t]).unwrap(), s);
        }
        prop_assert!(dec.finish().is_ok());
    }

    #[test]
    fn container_round_trips(w in 1u32..5000, h in 1u32..5000, hashes in any::<(u64, u64)>(),
                             z in prop::collection::vec(any::<u8>(), 0..40),
                             y in prop::collection::vec(any::<u8>(), 0..40),
                             x in prop::collection::vec(any::<u8>(), 0..40)) {
        let header = Header {
            version: FORMAT_VERSION,
            width: w,
            height: h,
            padded_width: w.next_multiple_of(16),
            padded_height: h.next_multiple_of(16),
            config_hash: hashes.0,
            weight_hash: hashes.1,
        };
        let stream = Bitstream { header, z, y, x };
        let bytes = stream.to_bytes();
        prop_assert_eq!(bytes.len(), stream.byte_len());
        prop_assert_eq!(read_container(&bytes).unwrap(), stream);
    }
}

fn sample_stream() -> Bitstream {
    Bitstream {
        header: Header {
            version: FORMAT_VERSION,
            width: 16,
            height: 16,
            padded_width: 16,
            padded_height: 16,
            config_hash: 0x0123_4567_89ab_cdef,
            weight_hash: 0xfedc_ba98_7654_3210,
        },
        z: vec![1, 2],
        y: vec![3],
        x: vec![4, 5, 6],
    }
}

#[test]
fn any_flipped_byte_fails_the_crc() {
    let bytes = sample_stream().to_bytes();
    for i in 0..bytes.len() {
        let mut bad = bytes.clone();
        bad[i] ^= 0x40;
        let err = read_container(&bad).unwrap_err();
        if i < 4 {
            assert_eq!(err, CoderError::BadMagic);
        } else {
            assert!(matches!(err, CoderError::Crc { .. }), "byte {i}: {err:?}");
        }
    }
}

#[test]
fn version_and_length_errors_are_distinct() {
    let mut s = sample_stream();
    s.header.version = 9;
    let bytes = write_container(&s.header, &s.z, &s.y, &s.x);
    assert_eq!(read_container(&bytes), Err(CoderError::UnsupportedVersion { found: 9 }));

    let good = sample_stream().to_bytes();
    assert!(matches!(read_container(&good[..20]), Err(CoderError::Truncated { .. })));
    // Declared lengths disagree with the payload while the CRC is valid.
    let mut body = good[..good.len() - CRC_LEN].to_vec();
    body[38] = 5;
    let crc = crc32fast::hash(&body);
    body.extend_from_slice(&crc.to_le_bytes());
    assert!(matches!(read_container(&body), Err(CoderError::LengthMismatch { .. })));
}

#[test]
fn header_layout_is_frozen() {
    let bytes = sample_stream().to_bytes();
    let golden: [u8; HEADER_LEN] = [
        b'N', b'L', b'I', b'C', 1, 0, // magic, version
        16, 0, 0, 0, 16, 0, 0, 0, 16, 0, 0, 0, 16, 0, 0, 0, // dims
        0xef, 0xcd, 0xab, 0x89, 0x67, 0x45, 0x23, 0x01, // config hash
        0x10, 0x32, 0x54, 0x76, 0x98, 0xba, 0xdc, 0xfe, // weight hash
        2, 0, 0, 0, 1, 0, 0, 0, 3, 0, 0, 0, // segment lengths
    ];
    assert_eq!(&bytes[..HEADER_LEN], &golden);
    assert_eq!(bytes.len(), HEADER_LEN + 6 + CRC_LEN);
}
