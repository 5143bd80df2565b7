use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sharpmin::analysis::{estimate_sharpness, lanczos_operator, lanczos_spectrum, pac_bayes_bound};
use sharpmin::data::{inject_label_noise, make_synthetic, Batch, NoiseSpec, SyntheticKind};
use sharpmin::harness::Stat;
use sharpmin::model::{Mlp, MlpSpec, Quadratic};
use sharpmin::optim::{
    dual_norm, epsilon_hat, inner_maximize, msharpness_gradient, p_norm, sam_gradient,
    sam_gradient_second_order, step, AscentStep, OptimizerState, PNorm, SamConfig, TrainConfig,
};
use sharpmin::tensor::{grad, ParamVector};

fn vec_strategy(max_dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 2..=max_dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn pnorm_strategy() -> impl Strategy<Value = PNorm> {
    prop_oneof![
        Just(PNorm::Two),
        Just(PNorm::Inf),
        (1.2f64..6.0).prop_map(PNorm::P)
    ]
}

/// Scales a random direction onto the `p`-sphere of radius `rho`.
fn random_on_sphere(dim: usize, rho: f64, p: PNorm, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = p_norm(&v, p);
    v.iter().map(|x| x * rho / n).collect()
}

fn small_mlp(seed: u64) -> (Mlp, ParamVector, Batch) {
    let b = make_synthetic(SyntheticKind::Moons, 64, 0.1, seed)
        .unwrap()
        .train
        .batch();
    let m = Mlp::new(MlpSpec {
        layers: vec![2, 4, 2],
        ..MlpSpec::default()
    })
    .unwrap();
    let w = m.init(seed);
    (m, w, b)
}

/// `Q diag(λ) Qᵀ` with a Householder `Q` built from `u`.
fn with_spectrum(eigs: &[f64], u: &[f64]) -> Vec<f64> {
    let d = eigs.len();
    let uu: f64 = u.iter().map(|x| x * x).sum();
    let q = |i: usize, j: usize| (if i == j { 1.0 } else { 0.0 }) - 2.0 * u[i] * u[j] / uu;
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = (0..d).map(|k| q(i, k) * eigs[k] * q(j, k)).sum();
        }
    }
    // Exact symmetry for the Quadratic constructor.
    for i in 0..d {
        for j in 0..i {
            m[i * d + j] = m[j * d + i];
        }
    }
    m
}

fn matvec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let d = x.len();
    (0..d)
        .map(|i| (0..d).map(|j| a[i * d + j] * x[j]).sum())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn epsilon_hat_sits_on_the_sphere(g in vec_strategy(50), rho in 0.01f64..5.0, p in pnorm_strategy()) {
        let e = epsilon_hat(&ParamVector::from_vec(g.clone()), rho, p).unwrap();
        let n = p_norm(e.as_slice(), p);
        prop_assert!((n - rho).abs() <= 1e-12 * rho.max(1.0), "{n} vs {rho}");
        let inner: f64 = e.as_slice().iter().zip(&g).map(|(a, b)| a * b).sum();
        let want = rho * dual_norm(&g, p);
        prop_assert!((inner - want).abs() <= 1e-10 * want.max(1.0), "{inner} vs {want}");
    }

    #[test]
    fn epsilon_hat_dominates_random_perturbations(g in vec_strategy(20), rho in 0.01f64..2.0, seed in any::<u64>(), inf in any::<bool>()) {
        let p = if inf { PNorm::Inf } else { PNorm::Two };
        let e = epsilon_hat(&ParamVector::from_vec(g.clone()), rho, p).unwrap();
        let best: f64 = e.as_slice().iter().zip(&g).map(|(a, b)| a * b).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let eps = random_on_sphere(g.len(), rho, p, &mut rng);
            let v: f64 = eps.iter().zip(&g).map(|(a, b)| a * b).sum();
            prop_assert!(v <= best + 1e-12 * best.abs().max(1.0));
        }
    }

    #[test]
    fn msharpness_reduces_to_sam_and_to_sgd(seed in 0u64..1000, rho in 0.0f64..0.5) {
        let (m, w, b) = small_mlp(seed);
        let b = b.slice(0, 48);
        let whole = SamConfig { m: 48, ..SamConfig::with_rho(rho) };
        let split = msharpness_gradient(&m, &w, &b, &whole).unwrap();
        let full = sam_gradient(&m, &w, &b, &whole).unwrap();
        prop_assert_eq!(split.as_slice(), full.as_slice());
        let plain = grad(&m, &w, &b).unwrap();
        for k in [1, 4, 6, 16, 48] {
            let cfg = SamConfig { m: k, ..SamConfig::with_rho(0.0) };
            let got = msharpness_gradient(&m, &w, &b, &cfg).unwrap();
            // Averaging sub-batch gradients only reassociates the sum.
            for (x, y) in got.as_slice().iter().zip(plain.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12, "m={k}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn second_order_matches_analytic_composite_gradient(
        eigs in prop::collection::vec(0.1f64..5.0, 2..6),
        u in prop::collection::vec(-1.0f64..1.0, 6),
        w in prop::collection::vec(-2.0f64..2.0, 6),
        rho in 0.01f64..1.0,
        inf in any::<bool>(),
    ) {
        let d = eigs.len();
        let (u, w) = (&u[..d], &w[..d]);
        prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let a = with_spectrum(&eigs, u);
        let q = Quadratic::new(d, a.clone()).unwrap();
        let g = matvec(&a, w);
        let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assume!(gn > 1e-3);
        let p = if inf { PNorm::Inf } else { PNorm::Two };
        prop_assume!(!inf || g.iter().all(|x| x.abs() > 1e-6));
        let eps: Vec<f64> = match p {
            PNorm::Inf => g.iter().map(|x| rho * x.signum()).collect(),
            _ => g.iter().map(|x| rho * x / gn).collect(),
        };
        let shifted: Vec<f64> = w.iter().zip(&eps).map(|(a, b)| a + b).collect();
        let outer = matvec(&a, &shifted);
        let want: Vec<f64> = match p {
            PNorm::Inf => outer.clone(),
            _ => {
                let gh: Vec<f64> = g.iter().map(|x| x / gn).collect();
                let proj: f64 = gh.iter().zip(&outer).map(|(a, b)| a * b).sum();
                let tangent: Vec<f64> = outer.iter().zip(&gh).map(|(o, h)| rho / gn * (o - proj * h)).collect();
                outer.iter().zip(matvec(&a, &tangent)).map(|(o, t)| o + t).collect()
            }
        };
        let cfg = SamConfig { p_norm: p, ..SamConfig::with_rho(rho) };
        let got = sam_gradient_second_order(&q, &ParamVector::from_vec(w.to_vec()), &Batch::unit(), &cfg).unwrap();
        for (x, y) in got.as_slice().iter().zip(&want) {
            prop_assert!((x - y).abs() <= 1e-8 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn ascent_is_monotone_on_convex_quadratics(
        diag in prop::collection::vec(0.1f64..10.0, 1..8),
        w in prop::collection::vec(-3.0f64..3.0, 8),
        rho in 0.01f64..2.0,
        steps in 1usize..8,
        inf in any::<bool>(),
    ) {
        let q = Quadratic::diagonal(&diag);
        let w = ParamVector::from_vec(w[..diag.len()].to_vec());
        let p = if inf { PNorm::Inf } else { PNorm::Two };
        let trace = inner_maximize(&q, &w, &Batch::unit(), rho, p, steps, AscentStep::default()).unwrap();
        prop_assert_eq!(trace.losses.len(), steps + 1);
        for pair in trace.losses.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-12, "{:?}", trace.losses);
        }
        prop_assert!(p_norm(trace.epsilon.as_slice(), p) <= rho * (1.0 + 1e-12));
    }

    #[test]
    fn sharpness_estimate_is_non_negative(seed in 0u64..1000, rho in 0.0f64..1.0, steps in 1usize..5) {
        let (m, w, b) = small_mlp(seed);
        let s = estimate_sharpness(&m, &w, &b, rho, PNorm::Two, steps).unwrap();
        prop_assert!(s >= 0.0);
    }

    #[test]
    fn lanczos_recovers_a_planted_spectrum(
        eigs in prop::collection::vec(-5.0f64..20.0, 2..12),
        u in prop::collection::vec(-1.0f64..1.0, 12),
        seed in any::<u64>(),
    ) {
        let d = eigs.len();
        let u = &u[..d];
        prop_assume!(u.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let mut sorted = eigs.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        // Distinct eigenvalues keep the Krylov space full.
        prop_assume!(sorted.windows(2).all(|w| w[0] - w[1] > 1e-3));
        let a = with_spectrum(&eigs, u);
        let r = lanczos_operator(d, d, seed, |v| Ok(matvec(&a, v))).unwrap();
        prop_assert_eq!(r.ritz_values.len(), d);
        for (x, y) in r.ritz_values.iter().zip(&sorted) {
            prop_assert!((x - y).abs() < 1e-8, "{:?} vs {:?}", r.ritz_values, sorted);
        }
    }

    #[test]
    fn spectrum_reports_are_ordered(seed in 0u64..1000, k in 1usize..15) {
        let (m, w, b) = small_mlp(seed);
        let r = lanczos_spectrum(&m, &w, &b, k, seed).unwrap();
        prop_assert!(r.ritz_values.windows(2).all(|p| p[0] >= p[1]));
        prop_assert_eq!(r.lambda_max, r.ritz_values[0]);
        prop_assert_eq!(r.residuals.len(), r.ritz_values.len());
        if let Some(ratio) = r.bulk_ratio {
            prop_assert!(ratio >= 1.0);
        }
        if r.ritz_values.len() >= 5 && r.ritz_values[4] > 0.0 {
            prop_assert!(r.bulk_ratio.is_some());
        }
    }

    #[test]
    fn bound_norm_term_increases_with_norm_over_radius(
        a in 0.0f64..1e4, frac in 1.0001f64..10.0, rho in 1e-3f64..1.0,
        k in 1u64..100_000, n in 2u64..100_000, delta in 1e-3f64..0.5, max_loss in 0.0f64..3.0,
    ) {
        let lo = pac_bayes_bound(max_loss, a * rho * rho, rho, k, n, delta).unwrap();
        let hi = pac_bayes_bound(max_loss, a * frac * rho * rho + 1e-9, rho, k, n, delta).unwrap();
        prop_assert!(hi.norm_term > lo.norm_term);
        prop_assert_eq!(lo.total, lo.sharpness_term + lo.norm_term);
    }

    #[test]
    fn label_noise_flips_exactly_and_deterministically(rate in 0.0f64..=1.0, seed in any::<u64>(), n in 40usize..200) {
        let splits = make_synthetic(SyntheticKind::Blobs, n, 0.5, 9).unwrap();
        let train = &splits.train;
        let spec = NoiseSpec { rate, seed };
        let a = inject_label_noise(train, spec).unwrap();
        let b = inject_label_noise(train, spec).unwrap();
        prop_assert_eq!(&a, &b);
        let want = (rate * train.len() as f64 + 1e-9).floor() as usize;
        prop_assert_eq!(a.flipped(), want);
        let differing = a.dataset.labels().iter().zip(train.labels()).filter(|(x, y)| x != y).count();
        prop_assert_eq!(differing, want);
        prop_assert!(a.dataset.labels().iter().all(|&l| l < train.num_classes()));
        prop_assert_eq!(a.dataset.clean_labels(), train.labels());
        prop_assert!(inject_label_noise(&splits.test, spec).is_err());
    }

    #[test]
    fn ci_half_width_formula(values in prop::collection::vec(-5.0f64..5.0, 2..20)) {
        let s = Stat::of(&values);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        prop_assert!((s.ci_half_width.unwrap() - 1.96 * sd / n.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn optimizer_state_keeps_dimension(dim in 1usize..30, steps in 1usize..10, momentum in 0.0f64..0.99) {
        let cfg = TrainConfig { momentum, weight_decay: 1e-3, ..TrainConfig::default() };
        let mut s = OptimizerState::new(ParamVector::from_vec(vec![1.0; dim]), steps as u64);
        for _ in 0..steps {
            s = step(s, &ParamVector::from_vec(vec![0.5; dim]), &cfg);
            prop_assert_eq!(s.momentum.dim(), dim);
            prop_assert_eq!(s.params.dim(), dim);
        }
    }
}
