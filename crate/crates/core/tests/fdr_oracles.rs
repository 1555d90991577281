mod common;

use common::{bh_oracle, correlation, grid_vectors, threshold_oracle};
use nalgebra::DMatrix;
use proptest::prelude::*;
use sic_core::convex_sic::{fit_from_data, ConvexConfig, FeatureMapConfig};
use sic_core::datasets::{gen_correlated_features, gen_liang};
use sic_core::hrt::{benjamini_hochberg, fit_gaussian_conditional, hrt_pvalues, hrt_select, HrtConfig};
use sic_core::knockoffs::{fit_knockoff_model, knockoff_threshold, sample_knockoffs, FilterOptions, KnockoffModel};
use sic_core::linalg::{mean_and_covariance, standard_normal};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const P_GRID: [f64; 7] = [0.001, 0.01, 0.02, 0.04, 0.05, 0.3, 1.0];

#[test]
fn bh_matches_exhaustive_search() {
    for k in 1..=5 {
        for p in grid_vectors(&P_GRID, k) {
            for q in [0.05, 0.1, 0.2] {
                assert_eq!(benjamini_hochberg(&p, q).unwrap(), bh_oracle(&p, q), "p = {p:?}, q = {q}");
            }
        }
    }
}

#[test]
fn threshold_matches_exhaustive_search() {
    let grid = [-2.0, -1.0, 0.0, 0.5, 1.0, 2.0];
    for len in 1..=6 {
        for w in grid_vectors(&grid, len) {
            for q in [0.1, 0.34, 0.5] {
                for plus in [false, true] {
                    let opts = FilterOptions { knockoff_plus: plus, inclusive: false };
                    let (tau, _) = knockoff_threshold(&w, q, opts).unwrap();
                    assert_eq!(tau, threshold_oracle(&w, q, if plus { 1.0 } else { 0.0 }), "w = {w:?}");
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn bh_never_shrinks_when_a_pvalue_drops(
        p in prop::collection::vec(0.0f64..=1.0, 1..12),
        idx in any::<prop::sample::Index>(),
        factor in 0.0f64..1.0,
        q in 0.01f64..0.5,
    ) {
        let before = benjamini_hochberg(&p, q).unwrap();
        let mut lower = p.clone();
        let i = idx.index(p.len());
        lower[i] *= factor;
        let after = benjamini_hochberg(&lower, q).unwrap();
        prop_assert!(before.iter().all(|j| after.contains(j)));
    }

    #[test]
    fn threshold_is_monotone_in_q(
        w in prop::collection::vec(-1.0f64..1.0, 1..15),
        q1 in 0.01f64..0.99,
        q2 in 0.01f64..0.99,
    ) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let t_lo = knockoff_threshold(&w, lo, FilterOptions::default()).unwrap().0.unwrap_or(f64::INFINITY);
        let t_hi = knockoff_threshold(&w, hi, FilterOptions::default()).unwrap().0.unwrap_or(f64::INFINITY);
        prop_assert!(t_hi <= t_lo);
    }

    #[test]
    fn threshold_matches_oracle_on_continuous_inputs(w in prop::collection::vec(-1.0f64..1.0, 1..=8), q in 0.05f64..0.9) {
        let (tau, sel) = knockoff_threshold(&w, q, FilterOptions::default()).unwrap();
        prop_assert_eq!(tau, threshold_oracle(&w, q, 0.0));
        let expected: Vec<usize> = match tau {
            Some(t) => (0..w.len()).filter(|&j| w[j] > t).collect(),
            None => vec![],
        };
        prop_assert_eq!(sel, expected);
    }
}

#[test]
fn gaussian_conditional_recovers_liang_correlations() {
    let ds = gen_liang(5000, 3, 0.5, 1).unwrap();
    let cols = ds.x.columns(0, 8).into_owned();
    let model = fit_gaussian_conditional(&cols).unwrap();
    for i in 0..8 {
        for j in i + 1..8 {
            let r = model.cov[(i, j)] / (model.cov[(i, i)] * model.cov[(j, j)]).sqrt();
            assert!((r - 0.5).abs() <= 0.05, "corr({i},{j}) = {r}");
        }
    }
}

/// Holdout p-values of features that are conditionally independent of `y`
/// given the rest are stochastically no smaller than uniform.
#[test]
fn null_feature_pvalues_are_valid() {
    let reps = 60;
    let mut pvals = Vec::new();
    for rep in 0..reps {
        let x = gen_correlated_features(300, 4, 10 + rep);
        let noise = standard_normal(300, 1, &mut ChaCha8Rng::seed_from_u64(rep));
        let y = DMatrix::from_fn(300, 1, |i, _| x[(i, 0)].sin() + 0.1 * noise[(i, 0)]);
        let (xt, yt) = (x.rows(0, 150).into_owned(), y.rows(0, 150).into_owned());
        let (xh, yh) = (x.rows(150, 150).into_owned(), y.rows(150, 150).into_owned());
        let fit = fit_from_data(&xt, &yt, &ConvexConfig::default(), &FeatureMapConfig { num_features: 64, bandwidth: None, seed: rep }).unwrap();
        let gen = fit_gaussian_conditional(&xh).unwrap();
        let pv = hrt_pvalues(&fit.witness, &xh, &yh, &gen, &[1, 2, 3], 19, rep).unwrap();
        pvals.extend(pv.pvalues);
    }
    let n = pvals.len() as f64;
    for decile in [0.1, 0.2, 0.3] {
        let frac = pvals.iter().filter(|&&p| p <= decile).count() as f64 / n;
        assert!(frac <= decile + 0.1, "P(p ≤ {decile}) = {frac}");
    }
}

#[test]
fn strong_signal_is_discovered() {
    let reps = 10;
    let mut found = 0;
    for rep in 0..reps {
        let x = gen_correlated_features(400, 5, 100 + rep);
        let y = DMatrix::from_fn(400, 1, |i, _| 2.0 * x[(i, 0)]);
        let (xt, yt) = (x.rows(0, 200).into_owned(), y.rows(0, 200).into_owned());
        let (xh, yh) = (x.rows(200, 200).into_owned(), y.rows(200, 200).into_owned());
        let fit = fit_from_data(&xt, &yt, &ConvexConfig::default(), &FeatureMapConfig { num_features: 64, bandwidth: None, seed: rep }).unwrap();
        let gen = fit_gaussian_conditional(&xh).unwrap();
        let cfg = HrtConfig { shortlist: 5, rounds: 99, target_fdr: 0.1, seed: rep };
        let res = hrt_select(&fit.witness, &fit.solution.eta, &xh, &yh, &gen, &cfg).unwrap();
        found += res.selected.contains(&0) as usize;
    }
    assert!(found >= 9, "feature discovered in {found}/{reps}");
}

#[test]
fn knockoff_block_structure_matches_at_large_n() {
    let x = gen_correlated_features(10_000, 6, 2);
    let model = fit_knockoff_model(&x).unwrap();
    let xk = sample_knockoffs(&model, &x, 3).unwrap();
    let mut joint = DMatrix::zeros(10_000, 12);
    joint.columns_mut(0, 6).copy_from(&x);
    joint.columns_mut(6, 6).copy_from(&xk);
    let (_, emp) = mean_and_covariance(&joint);
    // Eq. 4 law: variance ½, covariance ¼, equicorrelated s = ½ on the covariance scale
    let sigma = |i: usize, j: usize| if i == j { 0.5 } else { 0.25 };
    let s = 0.5;
    for a in 0..12 {
        for b in 0..12 {
            let (i, j) = (a % 6, b % 6);
            let same_block = (a < 6) == (b < 6);
            let expected = if same_block || i != j { sigma(i, j) } else { sigma(i, j) - s };
            assert!((emp[(a, b)] - expected).abs() <= 0.05, "entry ({a},{b}) = {} vs {expected}", emp[(a, b)]);
        }
    }
}

#[test]
fn identity_covariance_knockoffs_are_uncorrelated_with_features() {
    let model = KnockoffModel::equicorrelated(vec![0.0; 3], DMatrix::identity(3, 3)).unwrap();
    let x = standard_normal(10_000, 3, &mut ChaCha8Rng::seed_from_u64(1));
    let xk = sample_knockoffs(&model, &x, 2).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let r = correlation(x.column(i).as_slice(), xk.column(j).as_slice());
            assert!(r.abs() <= 0.05, "corr(x{i}, x̃{j}) = {r}");
        }
    }
}
