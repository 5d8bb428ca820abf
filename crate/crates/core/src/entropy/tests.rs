use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Graph, Tensor, Var};
use crate::gradcheck;

/// erf by its Maclaurin series, summed until terms vanish.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term.abs() > 1e-20 {
        n += 1.0;
        term *= -x * x / n;
        sum += term / (2.0 * n + 1.0);
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

fn random_mixture(rng: &mut ChaCha8Rng, k: usize, grid: &SymbolGrid) -> Vec<Component> {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter()
        .map(|w| Component {
            weight: w / total,
            mean: grid.value(grid.lo) + rng.gen_range(-0.2..1.2) * grid.span(),
            scale: grid.step_norm * 10f64.powf(rng.gen_range(-1.5..2.5)),
        })
        .collect()
}

#[test]
fn unit_gaussian_center_mass_matches_erf_oracle() {
    let grid = SymbolGrid::latents();
    let mix = [Component {
        weight: 1.0,
        mean: 0.0,
        scale: 1.0,
    }];
    let p = gmm_pmf(0, &mix, &grid).unwrap();
    let oracle = erf_series(0.5 / std::f64::consts::SQRT_2);
    assert!((p - oracle).abs() < 1e-14, "{p} vs {oracle}");
    assert!((p - 0.3829249).abs() < 1e-6);
}

#[test]
fn identical_components_collapse() {
    let grid = SymbolGrid::pixels();
    let one = [Component {
        weight: 1.0,
        mean: 0.13,
        scale: 0.05,
    }];
    let three = [
        Component { weight: 0.2, ..one[0] },
        Component { weight: 0.5, ..one[0] },
        Component { weight: 0.3, ..one[0] },
    ];
    for s in [0, 17, 145, 160, 255] {
        let a = gmm_pmf(s, &one, &grid).unwrap();
        let b = gmm_pmf(s, &three, &grid).unwrap();
        assert!((a - b).abs() <= 1e-15 * a.max(1e-300) + 1e-300, "{s}: {a} {b}");
    }
}

#[test]
fn pmf_tables_sum_to_one_and_match_single_lookups() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for grid in [SymbolGrid::pixels(), SymbolGrid::latents()] {
        for _ in 0..200 {
            let mix = random_mixture(&mut rng, 3, &grid);
            let table = gmm_pmf_table(&mix, &grid);
            let sum: f64 = table.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sum {sum}");
            let s = rng.gen_range(grid.lo..=grid.hi);
            let single = gmm_pmf(s, &mix, &grid).unwrap();
            assert_eq!(single.to_bits(), table[(s - grid.lo) as usize].to_bits());
            // Cumulative never decreases.
            assert!(table.iter().all(|p| *p >= 0.0));
        }
    }
    let grid = SymbolGrid::pixels();
    assert_eq!(
        gmm_pmf(
            256,
            &[Component {
                weight: 1.0,
                mean: 0.0,
                scale: 1.0
            }],
            &grid
        ),
        Err(EntropyError::SymbolOutOfRange {
            symbol: 256,
            lo: 0,
            hi: 255
        })
    );
}

#[test]
fn uniform_pmf_quantizes_exactly() {
    let cdf = QuantizedCdf::from_pmf(&[1.0 / 256.0; 256]).unwrap();
    for i in 0..256 {
        assert_eq!(cdf.range(i).1, 256);
    }
    assert_eq!(cdf.cum()[256], CDF_TOTAL);
}

#[test]
fn quantized_cdf_is_strictly_increasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..2000 {
        let grid = if i % 2 == 0 {
            SymbolGrid::pixels()
        } else {
            SymbolGrid::latents()
        };
        let mix = random_mixture(&mut rng, 1 + i % 3, &grid);
        let cdf = build_cdf(&mix, &grid).unwrap();
        assert_eq!(cdf.len(), grid.len());
        assert_eq!(cdf.cum()[0], 0);
        assert_eq!(*cdf.cum().last().unwrap(), CDF_TOTAL);
        assert!(cdf.cum().windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn quantized_cdf_repair_handles_degenerate_input() {
    // A delta mass leaves every other symbol at the 1-count minimum.
    let mut pmf = vec![0.0; 300];
    pmf[123] = 1.0;
    let cdf = QuantizedCdf::from_pmf(&pmf).unwrap();
    assert_eq!(cdf.range(123).1, CDF_TOTAL - 299);
    // Overfull input is cut back from the largest entries.
    let cdf = QuantizedCdf::from_pmf(&[0.9, 0.9, 0.2]).unwrap();
    assert_eq!(cdf.cum().last(), Some(&CDF_TOTAL));
    assert!(cdf.cum().windows(2).all(|w| w[0] < w[1]));
    assert_eq!(
        QuantizedCdf::from_pmf(&vec![1.0 / 40000.0; 40000]),
        Err(EntropyError::Precision { symbols: 40000 })
    );
}

#[test]
fn find_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = SymbolGrid::latents();
    for _ in 0..50 {
        let cdf = build_cdf(&random_mixture(&mut rng, 2, &grid), &grid).unwrap();
        for _ in 0..200 {
            let v = rng.gen_range(0..CDF_TOTAL);
            let linear = (0..cdf.len())
                .find(|&i| cdf.cum()[i] <= v && v < cdf.cum()[i + 1])
                .unwrap();
            assert_eq!(cdf.find(v), linear);
        }
    }
}

#[test]
fn noisy_quantize_contract() {
    let g = Graph::new();
    let y = g.constant(Tensor::from_fn(&[1, 4, 250, 1000], |i| (i % 7) as f64 * 0.3));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let out = noisy_quantize(&y, &mut rng);
    let (yv, ov) = (y.value(), out.value());
    let diffs: Vec<f64> = ov.data().iter().zip(yv.data()).map(|(o, i)| o - i).collect();
    assert!(diffs.iter().all(|d| *d > -0.5 - 1e-12 && *d < 0.5 + 1e-12));
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    // Uniform(−½, ½) has variance 1/12.
    let sigma = (1.0 / 12.0 / n).sqrt();
    assert!(mean.abs() < 3.0 * sigma, "mean {mean}");

    let mut r1 = ChaCha8Rng::seed_from_u64(9);
    let mut r2 = ChaCha8Rng::seed_from_u64(9);
    let small = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
    assert_eq!(
        *noisy_quantize(&small, &mut r1).value(),
        *noisy_quantize(&small, &mut r2).value()
    );

    let gp = Graph::new();
    let yp = gp.param(Tensor::zeros(&[1, 1, 2, 2]));
    let s = noisy_quantize(&yp, &mut rng).sum();
    gp.backward(s).unwrap();
    assert!(gp.grad(yp).unwrap().data().iter().all(|v| *v == 1.0));
}

#[test]
fn round_quantize_rules_and_clamping() {
    let grid = SymbolGrid::latents();
    let t = Tensor::new(vec![5], vec![0.5, -0.5, 0.49, 126.6, -300.0]).unwrap();
    let q = round_quantize(&t, &grid);
    assert_eq!(q.symbols, vec![1, -1, 0, 127, -127]);
    assert_eq!(q.clamp_count, 1);
    let again = round_quantize(&q.to_tensor(), &grid);
    assert_eq!(again.symbols, q.symbols);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = Tensor::from_fn(&[1000], |_| rng.gen_range(-200.0..200.0));
    let brute = t.data().iter().filter(|v| v.round().abs() > 127.0).count();
    assert_eq!(round_quantize(&t, &grid).clamp_count, brute);
}

#[test]
fn factorized_prior_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let [m, b, a] = prior_init(4, &mut rng);
    let prior = FactorizedPrior::from_tensors(&m, &b, &a).unwrap();
    let grid = SymbolGrid::latents();
    for c in 0..4 {
        assert!(prior.pmf(0, c, &grid).unwrap() < 0.5);
        let sum: f64 = prior.pmf_table(c, &grid).iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
        let mut last = 0.0;
        for s in -130..130 {
            let v = prior.cdf(c, s as f64 * 0.7);
            assert!(v >= last);
            last = v;
        }
    }
    assert!(prior.cdf(0, -1e6) < 1e-12 && prior.cdf(0, 1e6) > 1.0 - 1e-12);
}

#[test]
fn factorized_bits_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..10 {
        let [m, b, _] = prior_init(3, &mut rng);
        let m = Tensor::from_fn(m.shape(), |i| m.data()[i] + rng.gen_range(-0.5..0.5));
        let a = Tensor::from_fn(&[2, 3], |_| rng.gen_range(-1.0..1.0));
        let z = Tensor::from_fn(&[2, 3, 2, 2], |_| rng.gen_range(-6.0..6.0));
        let reports = gradcheck::check(&[m, b, a, z], 1e-5, None, |_, v| {
            factorized_bits(&v[0], &v[1], &v[2], &v[3])
        })
        .unwrap();
        assert!(gradcheck::max_rel_err(&reports) < 1e-4, "{reports:?}");
    }
}

fn mixture_inputs(rng: &mut ChaCha8Rng, k: usize, c: usize) -> [Tensor; 3] {
    let shape = [2, k * c, 3, 3];
    let logits = Tensor::from_fn(&shape, |_| rng.gen_range(-2.0..2.0));
    let means = Tensor::from_fn(&shape, |_| rng.gen_range(-1.0..1.0));
    let raw_scales = Tensor::from_fn(&shape, |_| rng.gen_range(-3.0..0.5));
    [logits, means, raw_scales]
}

fn mixture_bits<'g>(v: &[Var<'g>], k: usize, likelihood: Likelihood) -> Result<Var<'g>, crate::autodiff::TensorError> {
    let w = v[0].softmax_channel_groups(k)?;
    let s = v[2].softplus().add_scalar(0.01);
    gmm_bits(&w, &v[1], &s, &v[3], likelihood)
}

#[test]
fn gmm_bits_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..10 {
        let [l, m, s] = mixture_inputs(&mut rng, 3, 2);
        let target = Tensor::from_fn(&[2, 2, 3, 3], |_| rng.gen_range(-1.5..1.5));
        let noisy = Likelihood::Noisy { step: 0.3 };
        let reports = gradcheck::check(&[l.clone(), m.clone(), s.clone(), target], 1e-5, None, |_, v| {
            mixture_bits(v, 3, noisy)
        })
        .unwrap();
        assert!(gradcheck::max_rel_err(&reports) < 1e-4, "seed {seed}: {reports:?}");

        let grid = SymbolGrid::pixels();
        let pixels = Tensor::from_fn(&[2, 2, 3, 3], |i| grid.value([0, 255, rng.gen_range(0..256)][i % 3]));
        let reports = gradcheck::check(&[l, m, s, pixels], 1e-5, Some(&[0, 1, 2]), |_, v| {
            mixture_bits(v, 3, Likelihood::Binned(grid))
        })
        .unwrap();
        assert!(gradcheck::max_rel_err(&reports) < 1e-4, "seed {seed}: {reports:?}");
    }
}

#[test]
fn binned_bits_equal_pmf_codelength() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let grid = SymbolGrid::pixels();
    let (k, c) = (3, 2);
    let [l, m, s] = mixture_inputs(&mut rng, k, c);
    let symbols: Vec<i32> = (0..2 * c * 9).map(|_| rng.gen_range(0..256)).collect();
    let target = Tensor::from_fn(&[2, c, 3, 3], |i| grid.value(symbols[i]));
    let g = Graph::new();
    let w = g.constant(l).softmax_channel_groups(k).unwrap();
    let sc = g.constant(s).softplus().add_scalar(0.01);
    let mu = g.constant(m);
    let bits = gmm_bits(&w, &mu, &sc, &g.constant(target), Likelihood::Binned(grid))
        .unwrap()
        .item();
    let (wv, mv, sv) = (w.value(), mu.value(), sc.value());
    let mut probs = Vec::new();
    for b in 0..2 {
        for ch in 0..c {
            for p in 0..9 {
                let mix: Vec<Component> = (0..k)
                    .map(|kk| Component {
                        weight: wv.at4(b, kk * c + ch, p / 3, p % 3),
                        mean: mv.at4(b, kk * c + ch, p / 3, p % 3),
                        scale: sv.at4(b, kk * c + ch, p / 3, p % 3),
                    })
                    .collect();
                probs.push(gmm_pmf(symbols[(b * c + ch) * 9 + p], &mix, &grid).unwrap());
            }
        }
    }
    let expected = rate_bits(&probs).unwrap();
    assert!((bits - expected).abs() <= 1e-9 * expected);
}

#[test]
fn rate_bits_cases() {
    assert_eq!(rate_bits(&[0.5; 1000]).unwrap(), 1000.0);
    assert_eq!(rate_bits(&[1.0; 10]).unwrap(), 0.0);
    assert!(rate_bits(&[0.5, 0.0]).is_err());
    assert!(rate_bits(&[1.5]).is_err());

    // Kahan-compensated oracle.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let probs: Vec<f64> = (0..10_000).map(|_| rng.gen_range(1e-6..1.0)).collect();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for p in &probs {
        let y = -p.log2() - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    let got = rate_bits(&probs).unwrap();
    assert!((got - sum).abs() <= 1e-9 * sum);
}
