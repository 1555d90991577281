//! Synthetic benchmarks, train/holdout splits, CSV I/O and selection metrics.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, SicError};
use crate::linalg::{select_rows, standard_normal};

pub const SINEXP_DIM: usize = 50;
pub const SINEXP_TRUTH: usize = 6;
pub const LIANG_DIM: usize = 500;
pub const LIANG_TRUTH: usize = 40;

/// Parameters that regenerate a dataset exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    SinExp { n: usize, seed: u64, noise_sd: f64 },
    Liang { n: usize, seed: u64, sigma: f64, weights_seed: u64 },
    /// Correlated features with a response independent of them.
    Null { n: usize, d: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Zero-based indices of the relevant features.
    pub truth: Vec<usize>,
    pub spec: GeneratorSpec,
}

/// `x_j = (r + z_j)/2` with one shared `r` per row: variance ½, pairwise correlation ½.
pub fn gen_correlated_features(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    correlated_features(n, d, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn correlated_features(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let shared: f64 = rng.sample(StandardNormal);
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            x[(i, j)] = 0.5 * (shared + z);
        }
    }
    x
}

/// Noiseless SinExp response of one row.
pub fn sinexp_response(x: &[f64]) -> f64 {
    let [x1, x2, x3, x4, x5, x6] = [x[0], x[1], x[2], x[3], x[4], x[5]];
    (x1 * (x1 + x2)).sin() * (x3 + x4 * x5).cos() * (x5.exp() + x6.exp() - x2).sin()
}

/// SinExp: 50 correlated features, response driven by the first six.
pub fn gen_sinexp(n: usize, seed: u64, noise_sd: f64) -> Result<SyntheticDataset> {
    if !(noise_sd >= 0.0) {
        return Err(SicError::InvalidArgument(format!(
            "noise_sd must be non-negative, got {noise_sd}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = correlated_features(n, SINEXP_DIM, &mut rng);
    let y = DMatrix::from_fn(n, 1, |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        sinexp_response(&row) + noise_sd * rng.sample::<f64, _>(StandardNormal)
    });
    Ok(SyntheticDataset {
        x,
        y,
        truth: (0..SINEXP_TRUTH).collect(),
        spec: GeneratorSpec::SinExp { n, seed, noise_sd },
    })
}

/// The forty Liang weights drawn i.i.d. standard normal.
pub fn liang_weights(weights_seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
    (0..LIANG_TRUTH).map(|_| rng.sample(StandardNormal)).collect()
}

/// Noiseless Liang response: ten blocks of two linear terms and one tanh of two features.
pub fn liang_response(x: &[f64], w: &[f64]) -> f64 {
    (0..LIANG_TRUTH / 4)
        .map(|k| {
            let b = 4 * k;
            w[b] * x[b] + w[b + 1] * x[b + 1] + (w[b + 2] * x[b + 2] + w[b + 3] * x[b + 3]).tanh()
        })
        .sum()
}

/// Liang benchmark: 500 correlated features, response driven by the first 40.
pub fn gen_liang(n: usize, seed: u64, sigma: f64, weights_seed: u64) -> Result<SyntheticDataset> {
    let mut ds = gen_liang_with_weights(n, seed, sigma, &liang_weights(weights_seed))?;
    ds.spec = GeneratorSpec::Liang {
        n,
        seed,
        sigma,
        weights_seed,
    };
    Ok(ds)
}

/// Liang benchmark with explicit weights. The recorded `weights_seed` is 0.
pub fn gen_liang_with_weights(n: usize, seed: u64, sigma: f64, weights: &[f64]) -> Result<SyntheticDataset> {
    check_dim("Liang weights", LIANG_TRUTH, weights.len())?;
    if !(sigma >= 0.0) {
        return Err(SicError::InvalidArgument(format!("σ must be non-negative, got {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = correlated_features(n, LIANG_DIM, &mut rng);
    let y = DMatrix::from_fn(n, 1, |i, _| {
        let row: Vec<f64> = x.row(i).iter().copied().collect();
        liang_response(&row, weights) + sigma * rng.sample::<f64, _>(StandardNormal)
    });
    Ok(SyntheticDataset {
        x,
        y,
        truth: (0..LIANG_TRUTH).collect(),
        spec: GeneratorSpec::Liang {
            n,
            seed,
            sigma,
            weights_seed: 0,
        },
    })
}

/// Correlated features and an independent standard normal response.
pub fn gen_null(n: usize, d: usize, seed: u64) -> SyntheticDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = correlated_features(n, d, &mut rng);
    let y = standard_normal(n, 1, &mut rng);
    SyntheticDataset {
        x,
        y,
        truth: Vec::new(),
        spec: GeneratorSpec::Null { n, d, seed },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tpr: f64,
    pub fdr: f64,
}

/// True positive and false discovery proportions of a selection. An empty
/// selection has FDR 0.
pub fn tpr_fdr(selected: &[usize], truth: &[usize]) -> Result<Metrics> {
    if truth.is_empty() {
        return Err(SicError::InvalidArgument("ground-truth set is empty".into()));
    }
    let truth: BTreeSet<usize> = truth.iter().copied().collect();
    let selected: BTreeSet<usize> = selected.iter().copied().collect();
    let hits = selected.intersection(&truth).count() as f64;
    let false_hits = selected.len() as f64 - hits;
    Ok(Metrics {
        tpr: hits / truth.len() as f64,
        fdr: false_hits / selected.len().max(1) as f64,
    })
}

/// False discovery proportion; unlike [`tpr_fdr`] this accepts an empty truth set.
pub fn false_discovery_proportion(selected: &[usize], truth: &[usize]) -> f64 {
    let selected: BTreeSet<usize> = selected.iter().copied().collect();
    let false_hits = selected.iter().filter(|j| !truth.contains(j)).count();
    false_hits as f64 / selected.len().max(1) as f64
}

/// Seeded disjoint row partition; the first part holds `round(fraction·n)` rows.
pub fn split(ds: &SyntheticDataset, fraction: f64, seed: u64) -> Result<(SyntheticDataset, SyntheticDataset)> {
    let ((xa, ya), (xb, yb)) = split_rows(&ds.x, &ds.y, fraction, seed)?;
    let part = |x, y| SyntheticDataset {
        x,
        y,
        truth: ds.truth.clone(),
        spec: ds.spec.clone(),
    };
    Ok((part(xa, ya), part(xb, yb)))
}

type Part = (DMatrix<f64>, DMatrix<f64>);

pub fn split_rows(x: &DMatrix<f64>, y: &DMatrix<f64>, fraction: f64, seed: u64) -> Result<(Part, Part)> {
    check_dim("rows of y", x.nrows(), y.nrows())?;
    let n = x.nrows();
    let first = (fraction * n as f64).round() as usize;
    if !(fraction > 0.0 && fraction < 1.0) || first == 0 || first == n {
        return Err(SicError::InvalidArgument(format!(
            "split fraction {fraction} leaves an empty part for {n} rows"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = perm.split_at(first);
    Ok((
        (select_rows(x, a), select_rows(y, a)),
        (select_rows(x, b), select_rows(y, b)),
    ))
}

fn header(d_x: usize, d_y: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=d_x).map(|j| format!("x{j}")).collect();
    if d_y == 1 {
        h.push("y".into());
    } else {
        h.extend((1..=d_y).map(|j| format!("y{j}")));
    }
    h
}

/// Writes `x1..xd,y` rows using shortest round-trip float formatting.
pub fn write_csv(path: &Path, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    check_dim("rows of y", x.nrows(), y.nrows())?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header(x.ncols(), y.ncols()))?;
    for i in 0..x.nrows() {
        let (xr, yr) = (x.row(i), y.row(i));
        w.write_record(xr.iter().chain(yr.iter()).map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV with `x*` feature columns and `y*` response columns.
pub fn read_csv(path: &Path) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let is_y: Vec<bool> = names.iter().map(|h| h.starts_with('y')).collect();
    let d_y = is_y.iter().filter(|&&b| b).count();
    let d_x = names.len() - d_y;
    if d_x == 0 || d_y == 0 {
        return Err(SicError::InvalidArgument(format!(
            "{}: need at least one x column and one y column",
            path.display()
        )));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        for (k, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                SicError::InvalidArgument(format!(
                    "{}: row {}: cannot parse {field:?} in column {}",
                    path.display(),
                    line + 2,
                    names[k]
                ))
            })?;
            if is_y[k] {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    let n = xs.len() / d_x;
    Ok((DMatrix::from_row_slice(n, d_x, &xs), DMatrix::from_row_slice(n, d_y, &ys)))
}
