use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sic_core::convex_sic::{
    fit_alternating, fit_alternating_from, fit_bcd, fit_bcd_from, fit_from_data, loss_eval,
    sic_value_and_decomposition, ConvexConfig, FeatureMapConfig,
};
use sic_core::critic::concat_inputs;
use sic_core::feature_map::{build_embeddings, EmbeddingSet, RandomFourierMap};
use sic_core::linalg::standard_normal;

/// Embeddings of `y = sin(x₁ + … + x_{d_x})` so every feature carries signal.
fn dependent_embeddings(m: usize, d_x: usize, n: usize, seed: u64) -> EmbeddingSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = standard_normal(n, d_x, &mut rng);
    let y = DMatrix::from_fn(n, 1, |i, _| x.row(i).sum().sin());
    let y_shift = DMatrix::from_fn(n, 1, |i, _| y[((i + n / 2) % n, 0)]);
    let joint = concat_inputs(&x, &y).unwrap();
    let prod = concat_inputs(&x, &y_shift).unwrap();
    let map = RandomFourierMap::new(d_x, 1, m, 1.5, seed + 1).unwrap();
    build_embeddings(&map, &joint, &prod).unwrap()
}

fn cfg() -> ConvexConfig {
    ConvexConfig {
        tau: 1e-2,
        ..ConvexConfig::default()
    }
}

fn random_simplex(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_is_jointly_convex(seed in 0u64..500, t in 0.01f64..0.99) {
        let emb = dependent_embeddings(10, 3, 60, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u1 = DVector::from_column_slice(standard_normal(10, 1, &mut rng).as_slice());
        let u2 = DVector::from_column_slice(standard_normal(10, 1, &mut rng).as_slice());
        let e1 = random_simplex(3, &mut rng);
        let e2 = random_simplex(3, &mut rng);
        let um = &u1 * t + &u2 * (1.0 - t);
        let em: Vec<f64> = e1.iter().zip(&e2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let c = cfg();
        let mid = loss_eval(&emb, &um, &em, &c).unwrap();
        let chord = t * loss_eval(&emb, &u1, &e1, &c).unwrap()
            + (1.0 - t) * loss_eval(&emb, &u2, &e2, &c).unwrap();
        prop_assert!(mid <= chord + 1e-10);
    }
}

#[test]
fn bcd_from_different_starts_agrees() {
    let emb = dependent_embeddings(12, 4, 80, 3);
    let c = ConvexConfig {
        tol: 1e-13,
        ..ConvexConfig::bcd()
    }
    .tau_override(1e-2);
    let a = fit_bcd(&emb, &c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let u0 = DVector::from_column_slice(standard_normal(12, 1, &mut rng).as_slice());
    let b = fit_bcd_from(&emb, &c, &u0, &[0.7, 0.1, 0.1, 0.1]).unwrap();
    assert!(a.converged && b.converged);
    let du = (a.u_vector() - b.u_vector()).amax();
    assert!(du <= 1e-4, "u gap {du}");
    assert!(l1(&a.eta, &b.eta) <= 1e-4);
}

#[test]
fn alternating_from_different_starts_agrees() {
    let emb = dependent_embeddings(16, 5, 80, 5);
    let a = fit_alternating(&emb, &cfg()).unwrap();
    let b = fit_alternating_from(&emb, &cfg(), &[0.6, 0.1, 0.1, 0.1, 0.1]).unwrap();
    assert!(l1(&a.eta, &b.eta) <= 1e-6);
}

#[test]
fn eta_path_is_cauchy_as_eps_shrinks() {
    let emb = dependent_embeddings(16, 4, 100, 6);
    let etas: Vec<Vec<f64>> = [1e-2, 1e-4, 1e-6, 1e-8]
        .iter()
        .map(|&eps| fit_alternating(&emb, &ConvexConfig { eps, ..cfg() }).unwrap().eta)
        .collect();
    let gaps: Vec<f64> = etas.windows(2).map(|w| l1(&w[0], &w[1])).collect();
    for g in gaps.windows(2) {
        assert!(g[1] < g[0], "gaps {gaps:?}");
    }
}

#[test]
fn corollary_identity_when_all_features_matter() {
    // with λ = 0.1 every uᵀD_j u is far above ε, so the ε-gap λεΣβ_jΣ1/β_j is negligible
    let emb = dependent_embeddings(32, 3, 200, 7);
    let c = ConvexConfig { lambda: 0.1, ..cfg() };
    let sol = fit_alternating(&emb, &c).unwrap();
    let dec = sic_value_and_decomposition(&emb, &sol, &c).unwrap();
    assert!(dec.smoothed_identity_gap() <= 1e-4, "gap {}", dec.smoothed_identity_gap());
    assert_eq!(dec.sic, 0.5 * dec.mean_difference);
    let total: f64 = dec.per_feature.iter().sum();
    assert!((total - dec.omega).abs() <= 1e-12 * dec.omega);
    for (p, e) in dec.per_feature.iter().zip(&sol.eta) {
        assert!((p / dec.omega - e).abs() <= 1e-6);
    }
}

fn correlated(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    standard_normal(n, d, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn deterministic_signal_ranks_first_feature() {
    for seed in 0..3 {
        let x = correlated(400, 5, seed);
        let y = DMatrix::from_fn(400, 1, |i, _| x[(i, 0)]);
        let fit = fit_from_data(&x, &y, &ConvexConfig::default(), &FeatureMapConfig { seed, ..Default::default() }).unwrap();
        let best = (0..5).max_by(|&a, &b| fit.solution.eta[a].total_cmp(&fit.solution.eta[b])).unwrap();
        assert_eq!(best, 0, "seed {seed}: η = {:?}", fit.solution.eta);
    }
}

#[test]
fn independence_gives_small_sic_and_flat_mean_eta() {
    let reps = 8;
    let mut mean_eta = vec![0.0; 5];
    for s in 0..reps {
        let x = correlated(2000, 5, 100 + s);
        let y = correlated(2000, 1, 200 + s);
        let map_cfg = FeatureMapConfig { seed: s, ..Default::default() };
        let null = fit_from_data(&x, &y, &ConvexConfig::default(), &map_cfg).unwrap();
        let y_dep = DMatrix::from_fn(2000, 1, |i, _| x[(i, 0)]);
        let dep = fit_from_data(&x, &y_dep, &ConvexConfig::default(), &map_cfg).unwrap();
        assert!(null.solution.sic_value < 0.05 * dep.solution.sic_value);
        for (m, e) in mean_eta.iter_mut().zip(&null.solution.eta) {
            *m += e / reps as f64;
        }
    }
    let max_eta = mean_eta.iter().cloned().fold(0.0, f64::max);
    assert!(max_eta <= 2.0 / 5.0, "mean η = {mean_eta:?}");
}

trait TauOverride {
    fn tau_override(self, tau: f64) -> Self;
}

impl TauOverride for ConvexConfig {
    fn tau_override(self, tau: f64) -> Self {
        ConvexConfig { tau, ..self }
    }
}

