use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Graph, Tensor};
use crate::entropy::{gmm_bits, Likelihood, SymbolGrid};
use crate::gradcheck;

fn small() -> ModelConfig {
    ModelConfig {
        filters_n: 4,
        mixtures_k: 2,
        ..ModelConfig::default()
    }
}

fn random(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Perturbs every weight so zero-initialized layers take part too.
fn jittered(cfg: &ModelConfig, seed: u64) -> ModelWeights {
    let mut w = ModelWeights::init(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    w.update(|_, t| t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2)));
    w
}

fn bits_of(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn default_shape_chain() {
    let w = ModelWeights::init(&ModelConfig::default(), 0).unwrap();
    let g = Graph::new();
    let net = Network::bind(&g, &w, false);
    let x = g.constant(Tensor::zeros(&[1, 3, 16, 16]));
    let y = net.analysis(&x).unwrap();
    assert_eq!(y.shape(), vec![1, 32, 4, 4]);
    let z = net.hyper_analysis(&y).unwrap();
    assert_eq!(z.shape(), vec![1, 32, 1, 1]);
    let hyper = net.hyper_synthesis(&z).unwrap();
    assert_eq!(hyper.shape(), vec![1, 64, 4, 4]);
    let feats = net.synthesis(&y).unwrap();
    assert_eq!(feats.shape(), vec![1, 32, 16, 16]);
    let py = net.params_y(&hyper, &y).unwrap();
    assert_eq!(py.weights.shape(), vec![1, 3 * 32, 4, 4]);
    let px = net.params_x(&feats, &x).unwrap();
    assert_eq!(px.scales.shape(), vec![1, 9, 16, 16]);
}

#[test]
fn indivisible_input_is_rejected() {
    let w = ModelWeights::init(&small(), 0).unwrap();
    let g = Graph::new();
    let net = Network::bind(&g, &w, false);
    let x = g.constant(Tensor::zeros(&[1, 3, 12, 16]));
    assert!(matches!(
        net.analysis(&x),
        Err(crate::autodiff::TensorError::Shape { .. })
    ));
}

#[test]
fn forward_is_deterministic() {
    let cfg = small();
    let w = jittered(&cfg, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[1, 3, 16, 16], 1.0, &mut rng);
    let run = || {
        let g = Graph::new();
        let net = Network::bind(&g, &w, false);
        let y = net.analysis(&g.constant(x.clone())).unwrap();
        bits_of(&net.synthesis(&y).unwrap().value())
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_weights_zero_input_give_zero_latent() {
    let cfg = small();
    let mut w = ModelWeights::init(&cfg, 0).unwrap();
    w.update(|_, t| t.data_mut().fill(0.0));
    let g = Graph::new();
    let net = Network::bind(&g, &w, false);
    let y = net.analysis(&g.constant(Tensor::zeros(&[1, 3, 16, 16]))).unwrap();
    assert!(y.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn attention_starts_as_identity() {
    let cfg = small();
    let w = ModelWeights::init(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = random(&[1, 4, 5, 5], 1.0, &mut rng);
    let g = Graph::new();
    let net = Network::bind(&g, &w, false);
    let out = net.attention(&g.constant(t.clone()), "analysis.attn").unwrap();
    assert_eq!(out.shape(), t.shape());
    assert_eq!(bits_of(&out.value()), bits_of(&t));
}

#[test]
fn attention_gradients_match_finite_differences() {
    let cfg = small();
    let w = jittered(&cfg, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let t = random(&[1, 4, 3, 3], 1.0, &mut rng);
    let trunk = w.get("analysis.attn.trunk.out.weight").unwrap().clone();
    let reports = gradcheck::check(&[t, trunk], 1e-5, None, |g, v| {
        let mut net = Network::bind(g, &w, false);
        net.override_var("analysis.attn.trunk.out.weight", v[1]);
        Ok(net.attention(&v[0], "analysis.attn")?.square().sum())
    })
    .unwrap();
    for r in &reports {
        assert!(r.analytic_norm > 0.0);
        assert!(r.rel_err < 1e-4, "{reports:?}");
    }
}

fn causality_case(use_context: bool) {
    let cfg = ModelConfig {
        use_context_y: use_context,
        ..small()
    };
    let w = jittered(&cfg, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = cfg.filters_n;
    let hyper = random(&[1, 2 * n, 6, 6], 1.0, &mut rng);
    let y = Tensor::from_fn(&[1, n, 6, 6], |_| rng.gen_range(-3i32..=3) as f64);
    let eval = |y: &Tensor| {
        let g = Graph::new();
        let net = Network::bind(&g, &w, false);
        net.params_y(&g.constant(hyper.clone()), &g.constant(y.clone()))
            .unwrap()
            .to_params(cfg.mixtures_k)
    };
    let base = eval(&y);
    for p in 0..36 {
        for c in 0..n {
            let mut y2 = y.clone();
            y2.data_mut()[c * 36 + p] += 5.0;
            let pert = eval(&y2);
            let limit = if use_context { p } else { 36 };
            for q in 0..limit {
                let (a, b) = (base.at(0, q / 6, q % 6), pert.at(0, q / 6, q % 6));
                assert!(a.bit_eq(&b), "position {q} changed after perturbing {p}");
            }
        }
    }
}

#[test]
fn latent_head_is_strictly_causal() {
    causality_case(true);
}

#[test]
fn latent_head_ignores_latents_without_context() {
    causality_case(false);
}

#[test]
fn pixel_head_is_strictly_causal_over_all_channels() {
    for kernel in [5, 7] {
        let cfg = ModelConfig {
            mask_kernel_x: kernel,
            ..small()
        };
        let w = jittered(&cfg, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let feats = random(&[1, cfg.filters_n, 6, 6], 1.0, &mut rng);
        let x = random(&[1, 3, 6, 6], 1.0, &mut rng);
        let eval = |x: &Tensor| {
            let g = Graph::new();
            let net = Network::bind(&g, &w, false);
            net.params_x(&g.constant(feats.clone()), &g.constant(x.clone()))
                .unwrap()
                .to_params(cfg.mixtures_k)
        };
        let base = eval(&x);
        for p in 0..36 {
            for c in 0..3 {
                let mut x2 = x.clone();
                x2.data_mut()[c * 36 + p] = -x2.data()[c * 36 + p] + 0.5;
                let pert = eval(&x2);
                for q in 0..p {
                    assert!(base.at(0, q / 6, q % 6).bit_eq(&pert.at(0, q / 6, q % 6)));
                }
                // The current pixel never sees itself.
                assert!(base.at(0, p / 6, p % 6).bit_eq(&pert.at(0, p / 6, p % 6)));
            }
        }
    }
}

#[test]
fn point_heads_match_full_tensor_pass() {
    for (ctx_y, ctx_x, kernel) in [(true, true, 7), (false, false, 5), (true, false, 5)] {
        let cfg = ModelConfig {
            use_context_y: ctx_y,
            use_context_x: ctx_x,
            mask_kernel_x: kernel,
            ..small()
        };
        let w = jittered(&cfg, 31);
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let n = cfg.filters_n;
        let hyper = random(&[2, 2 * n, 4, 5], 1.0, &mut rng);
        let y = random(&[2, n, 4, 5], 2.0, &mut rng);
        let feats = random(&[2, n, 7, 6], 1.0, &mut rng);
        let x = random(&[2, 3, 7, 6], 1.0, &mut rng);
        let g = Graph::new();
        let net = Network::bind(&g, &w, false);
        let py = net
            .params_y(&g.constant(hyper.clone()), &g.constant(y.clone()))
            .unwrap()
            .to_params(cfg.mixtures_k);
        let px = net
            .params_x(&g.constant(feats.clone()), &g.constant(x.clone()))
            .unwrap()
            .to_params(cfg.mixtures_k);
        for b in 0..2 {
            for oy in 0..4 {
                for ox in 0..5 {
                    assert!(py.at(b, oy, ox).bit_eq(&params_y_at(&w, &hyper, &y, b, oy, ox)));
                }
            }
            for oy in 0..7 {
                for ox in 0..6 {
                    assert!(px.at(b, oy, ox).bit_eq(&params_x_at(&w, &feats, &x, b, oy, ox)));
                }
            }
        }
    }
}

#[test]
fn emitted_params_are_normalized_and_floored() {
    let cfg = small();
    let w = jittered(&cfg, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let feats = random(&[1, cfg.filters_n, 5, 5], 30.0, &mut rng);
    let x = random(&[1, 3, 5, 5], 1.0, &mut rng);
    let g = Graph::new();
    let net = Network::bind(&g, &w, false);
    let p = net
        .params_x(&g.constant(feats), &g.constant(x))
        .unwrap()
        .to_params(cfg.mixtures_k);
    for oy in 0..5 {
        for ox in 0..5 {
            let loc = p.at(0, oy, ox);
            for c in 0..3 {
                let mix = loc.mixture(c);
                let total: f64 = mix.iter().map(|m| m.weight).sum();
                assert!((total - 1.0).abs() < 1e-9);
                assert!(mix
                    .iter()
                    .all(|m| m.weight > 0.0 && m.weight < 1.0 && m.scale >= cfg.scale_floor));
            }
        }
    }
}

#[test]
fn ablations_only_remove_keys() {
    let full = ModelWeights::init(&ModelConfig::default(), 7).unwrap();
    for ablated in [
        ModelConfig {
            use_context_x: false,
            ..ModelConfig::default()
        },
        ModelConfig {
            use_attention: false,
            ..ModelConfig::default()
        },
        ModelConfig {
            use_context_y: false,
            ..ModelConfig::default()
        },
    ] {
        let w = ModelWeights::init(&ablated, 7).unwrap();
        assert!(w.len() < full.len());
        for (k, t) in w.params() {
            assert_eq!(full.get(k), Some(t), "{k} differs");
        }
    }
    let five = ModelWeights::init(
        &ModelConfig {
            mask_kernel_x: 5,
            ..ModelConfig::default()
        },
        7,
    )
    .unwrap();
    let differing: Vec<&str> = five.keys().filter(|k| five.get(k) != full.get(k)).collect();
    assert_eq!(differing, vec!["context_x.weight"]);
}

#[test]
fn init_is_deterministic_and_seed_dependent() {
    let cfg = small();
    assert_eq!(
        ModelWeights::init(&cfg, 1).unwrap(),
        ModelWeights::init(&cfg, 1).unwrap()
    );
    assert_ne!(
        ModelWeights::init(&cfg, 1).unwrap(),
        ModelWeights::init(&cfg, 2).unwrap()
    );
}

#[test]
fn initial_heads_are_uninformative() {
    let cfg = ModelConfig {
        filters_n: 8,
        ..ModelConfig::default()
    };
    let w = ModelWeights::init(&cfg, 0).unwrap();
    let g = Graph::new();
    let net = Network::bind(&g, &w, false);
    let x = g.constant(Tensor::zeros(&[1, 3, 16, 16]));
    let y = net.analysis(&x).unwrap();
    let feats = net.synthesis(&y).unwrap();
    let p = net.params_x(&feats, &x).unwrap();
    let k = cfg.mixtures_k as f64;
    assert!(p.weights.value().data().iter().all(|&v| (v - 1.0 / k).abs() < 0.02));
    assert!(p.scales.value().data().iter().all(|&v| (v - 1.0).abs() < 0.05));

    // Pixel codelength of uniform noise under the fresh model: close to 8 bits.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = SymbolGrid::pixels();
    let noise = Tensor::from_fn(&[1, 3, 16, 16], |_| grid.value(rng.gen_range(0..=255)));
    let g = Graph::new();
    let net = Network::bind(&g, &w, false);
    let xv = g.constant(noise);
    let feats = net.synthesis(&net.analysis(&xv).unwrap()).unwrap();
    let p = net.params_x(&feats, &xv).unwrap();
    let bits = gmm_bits(&p.weights, &p.means, &p.scales, &xv, Likelihood::Binned(grid)).unwrap();
    let bpsp = bits.item() / (3.0 * 256.0);
    assert!((bpsp - 8.0).abs() < 1.5, "{bpsp}");
}

#[test]
fn hyper_features_pass_gradient_to_latent() {
    let cfg = small();
    let w = jittered(&cfg, 51);
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let y = random(&[1, cfg.filters_n, 4, 4], 1.0, &mut rng);
    let reports = gradcheck::check(&[y], 1e-5, None, |g, v| {
        let net = Network::bind(g, &w, false);
        let z = net.hyper_analysis(&v[0])?;
        Ok(net.hyper_synthesis(&z)?.square().sum())
    })
    .unwrap();
    assert!(reports[0].analytic_norm > 0.0);
    assert!(reports[0].rel_err < 1e-4, "{reports:?}");
}

#[test]
fn analysis_synthesis_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        use_attention: true,
        ..small()
    };
    let w = jittered(&cfg, 61);
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    let x = random(&[1, 3, 16, 16], 1.0, &mut rng);
    let w_in = w.get("analysis.down0.weight").unwrap().clone();
    let w_out = w.get("synthesis.out.weight").unwrap().clone();
    let reports = gradcheck::check(&[x, w_in, w_out], 1e-5, Some(&[0, 2]), |g, v| {
        let mut net = Network::bind(g, &w, false);
        net.override_var("analysis.down0.weight", v[1]);
        net.override_var("synthesis.out.weight", v[2]);
        let y = net.analysis(&v[0])?;
        Ok(net.synthesis(&y)?.square().mean())
    })
    .unwrap();
    for r in &reports {
        assert!(r.analytic_norm > 0.0);
        assert!(r.rel_err < 1e-4, "{reports:?}");
    }
}

#[test]
fn config_text_round_trips_and_validates() {
    let cfg = ModelConfig {
        filters_n: 12,
        use_attention: false,
        scale_floor: 0.0035,
        ..ModelConfig::default()
    };
    let text = cfg.canonical_text();
    assert_eq!(ModelConfig::from_text(&text).unwrap(), cfg);
    assert_eq!(cfg.hash(), ModelConfig::from_text(&text).unwrap().hash());
    assert_ne!(cfg.hash(), ModelConfig::default().hash());
    for bad in [
        "filters_n=2",
        "mixtures_k=0",
        "mask_kernel_x=3",
        "downsample_factor=6",
        "bogus=1",
        "filters_n",
    ] {
        assert!(ModelConfig::from_text(bad).is_err(), "{bad}");
    }
    let commented = "# toy\nfilters_n = 8 # narrow\n\nuse_attention=false\n";
    let parsed = ModelConfig::from_text(commented).unwrap();
    assert_eq!((parsed.filters_n, parsed.use_attention), (8, false));
}

#[test]
fn weights_round_trip_bit_exactly() {
    let cfg = small();
    let w = jittered(&cfg, 71);
    let bytes = w.to_bytes();
    let back = ModelWeights::from_bytes(&bytes).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    for (k, t) in w.params() {
        assert_eq!(bits_of(t), bits_of(back.get(k).unwrap()));
    }
    assert_eq!(w.hash(), back.hash());

    let mut changed = w.clone();
    changed.update(|k, t| {
        if k == "prior.bias" {
            t.data_mut()[0] += 1e-12;
        }
    });
    assert_ne!(changed.hash(), w.hash());

    assert!(matches!(
        ModelWeights::from_bytes(&bytes[..bytes.len() - 1]),
        Err(NetworkError::Format(_))
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(ModelWeights::from_bytes(&bad), Err(NetworkError::Format(_))));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.nlw");
    w.save(&path).unwrap();
    assert_eq!(ModelWeights::load(&path).unwrap(), w);
}

#[test]
fn mismatched_weight_map_is_rejected() {
    let cfg = small();
    let w = ModelWeights::init(&cfg, 0).unwrap();
    let mut p = w.params().clone();
    p.remove("context_x.weight");
    assert!(matches!(ModelWeights::from_params(&cfg, p), Err(NetworkError::Keys(_))));
    let mut p = w.params().clone();
    p.insert("prior.bias".into(), Tensor::zeros(&[1]));
    assert!(matches!(ModelWeights::from_params(&cfg, p), Err(NetworkError::Keys(_))));
}
