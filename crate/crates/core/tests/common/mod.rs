//! Brute-force oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sic_core::critic::{CriticNet, DropoutMask, PenaltyWeights};
use sic_core::linalg::standard_normal;

/// Largest rejection set `S` that is closed downward in `p` and whose largest
/// p-value is at most `|S| q / k`, found by enumerating all `2^k` subsets.
pub fn bh_oracle(p: &[f64], q: f64) -> Vec<usize> {
    let k = p.len();
    let mut best: Vec<usize> = Vec::new();
    for bits in 0u32..(1 << k) {
        let set: Vec<usize> = (0..k).filter(|&j| bits & (1 << j) != 0).collect();
        if set.is_empty() || set.len() < best.len() {
            continue;
        }
        let top = set.iter().map(|&j| p[j]).fold(f64::NEG_INFINITY, f64::max);
        let closed = (0..k).all(|j| p[j] > top || set.contains(&j));
        if closed && top <= set.len() as f64 * q / k as f64 && set.len() > best.len() {
            best = set;
        }
    }
    best
}

/// Minimum over every candidate `t = |W_j| > 0` of the feasibility condition,
/// each evaluated by direct counting.
pub fn threshold_oracle(w: &[f64], q: f64, offset: f64) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &c in w {
        let t = c.abs();
        if t == 0.0 {
            continue;
        }
        let below = w.iter().filter(|&&v| v <= -t).count() as f64;
        let above = w.iter().filter(|&&v| v >= t).count() as f64;
        if above > 0.0 && (offset + below) / above <= q && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    best
}

/// All vectors of length `len` with entries from `grid`.
pub fn grid_vectors(grid: &[f64], len: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|v| {
                grid.iter().map(move |&g| {
                    let mut w = v.clone();
                    w.push(g);
                    w
                })
            })
            .collect();
    }
    out
}

/// Pearson correlation of two equal-length slices.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn random_eta(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Loss as a plain function of the flat parameters.
fn loss_at(
    net: &CriticNet,
    params: &[f64],
    eta: &[f64],
    joint: &DMatrix<f64>,
    prod: &DMatrix<f64>,
    w: PenaltyWeights,
    masks: Option<(&DropoutMask, &DropoutMask)>,
) -> f64 {
    let mut n = net.clone();
    n.set_params(params).unwrap();
    n.loss_gradients(eta, joint, prod, w, masks).unwrap().loss
}

pub fn check_against_fd(net: &CriticNet, seed: u64, use_dropout: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d_x, d_y) = net.input_split();
    let n = 6;
    let joint = standard_normal(n, d_x + d_y, &mut rng);
    let prod = standard_normal(n, d_x + d_y, &mut rng);
    let eta = random_eta(d_x, &mut rng);
    let w = PenaltyWeights {
        lambda: 0.7,
        rho: 0.3,
        eps: 1e-3,
    };
    let mj = DropoutMask::sample(net, n, seed + 1);
    let mp = DropoutMask::sample(net, n, seed + 2);
    let masks = use_dropout.then_some((&mj, &mp));

    let analytic = net.loss_gradients(&eta, &joint, &prod, w, masks).unwrap();
    let params = net.params();
    let mask = net.param_mask();
    let h = 1e-6;
    let scale = analytic.grads.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        if mask.as_ref().is_some_and(|m| m[k] == 0.0) {
            continue;
        }
        let mut p = params.clone();
        p[k] += h;
        let up = loss_at(net, &p, &eta, &joint, &prod, w, masks);
        p[k] -= 2.0 * h;
        let down = loss_at(net, &p, &eta, &joint, &prod, w, masks);
        let fd = (up - down) / (2.0 * h);
        let denom = analytic.grads[k].abs().max(fd.abs()).max(1e-3 * scale);
        worst = worst.max((fd - analytic.grads[k]).abs() / denom);
    }
    worst
}
