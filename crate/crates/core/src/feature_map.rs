//! Random Fourier feature maps on the concatenated input `z = [x, y]` and the
//! empirical embeddings (means, covariance, derivative Gramians) that define
//! the convex problem.
//!
//! `φ_k(z) = √(2/m) cos(w_k·z / bw + b_k)` with `w_k ~ N(0, I)` and
//! `b_k ~ U[0, 2π)`, which approximates a Gaussian kernel of bandwidth `bw`.
//! Feature indices `j` are zero-based throughout.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, SicError};
use crate::linalg::standard_normal;
use crate::matrix_serde;

/// Frozen random Fourier feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomFourierMap {
    #[serde(with = "matrix_serde::matrix")]
    frequencies: DMatrix<f64>,
    phases: Vec<f64>,
    bandwidth: f64,
    input_split: (usize, usize),
}

impl RandomFourierMap {
    pub fn new(d_x: usize, d_y: usize, m: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(SicError::InvalidArgument("feature count m must be ≥ 1".into()));
        }
        if !(bandwidth > 0.0) {
            return Err(SicError::InvalidArgument(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frequencies = standard_normal(m, d_x + d_y, &mut rng);
        let phases = (0..m)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        Ok(RandomFourierMap {
            frequencies,
            phases,
            bandwidth,
            input_split: (d_x, d_y),
        })
    }

    /// Builds a map from explicit frequencies (rows) and phases.
    pub fn from_parts(
        frequencies: DMatrix<f64>,
        phases: Vec<f64>,
        bandwidth: f64,
        d_x: usize,
        d_y: usize,
    ) -> Result<Self> {
        check_dim("frequency columns", d_x + d_y, frequencies.ncols())?;
        check_dim("phase count", frequencies.nrows(), phases.len())?;
        if !(bandwidth > 0.0) {
            return Err(SicError::InvalidArgument(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(RandomFourierMap {
            frequencies,
            phases,
            bandwidth,
            input_split: (d_x, d_y),
        })
    }

    pub fn num_features(&self) -> usize {
        self.phases.len()
    }

    pub fn input_split(&self) -> (usize, usize) {
        self.input_split
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.frequencies
    }

    fn amplitude(&self) -> f64 {
        (2.0 / self.num_features() as f64).sqrt()
    }

    /// Arguments `w_k·z/bw + b_k` for every row (N × m).
    fn arguments(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("feature map input width", self.frequencies.ncols(), z.ncols())?;
        let mut args = z * self.frequencies.transpose() / self.bandwidth;
        for (k, mut col) in args.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.phases[k]);
        }
        Ok(args)
    }

    /// `Φ(z)` for each row (N × m).
    pub fn embed_batch(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a = self.amplitude();
        Ok(self.arguments(z)?.map(|t| a * t.cos()))
    }

    /// `∂Φ(z)/∂x_j` for each row (N × m).
    pub fn x_derivative_batch(&self, z: &DMatrix<f64>, j: usize) -> Result<DMatrix<f64>> {
        let d_x = self.input_split.0;
        if j >= d_x {
            return Err(SicError::IndexOutOfRange { index: j, bound: d_x });
        }
        let a = self.amplitude() / self.bandwidth;
        let mut out = self.arguments(z)?;
        for (k, mut col) in out.column_iter_mut().enumerate() {
            let w = self.frequencies[(k, j)];
            col.apply(|t| *t = -a * t.sin() * w);
        }
        Ok(out)
    }

    pub fn embed(&self, z: &[f64]) -> Result<DVector<f64>> {
        let z = DMatrix::from_row_slice(1, z.len(), z);
        Ok(self.embed_batch(&z)?.row(0).transpose())
    }

    pub fn x_derivative(&self, z: &[f64], j: usize) -> Result<DVector<f64>> {
        let z = DMatrix::from_row_slice(1, z.len(), z);
        Ok(self.x_derivative_batch(&z, j)?.row(0).transpose())
    }
}

/// Median pairwise Euclidean distance between rows, on at most `max_rows` leading rows.
pub fn median_heuristic(z: &DMatrix<f64>, max_rows: usize) -> f64 {
    let n = z.nrows().min(max_rows);
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for k in (i + 1)..n {
            dists.push((z.row(i) - z.row(k)).norm());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let mid = dists.len() / 2;
    let med = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Empirical embeddings of the joint and product samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub mu_joint: DVector<f64>,
    pub mu_prod: DVector<f64>,
    /// `Ĉ = (1/N) Σ Φ(x_i, ỹ_i) Φ(x_i, ỹ_i)ᵀ`
    pub cov: DMatrix<f64>,
    /// `D̂_j = (1/N) Σ ∂_jΦ(x_i, ỹ_i) ∂_jΦ(x_i, ỹ_i)ᵀ`, one per feature.
    pub deriv_grams: Vec<DMatrix<f64>>,
    /// `δ̂ = μ̂(p_xy) − μ̂(p_x p_y)`
    pub delta: DVector<f64>,
}

impl EmbeddingSet {
    /// Assembles an embedding set from precomputed parts.
    pub fn from_parts(
        mu_joint: DVector<f64>,
        mu_prod: DVector<f64>,
        cov: DMatrix<f64>,
        deriv_grams: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let m = mu_joint.len();
        check_dim("μ̂(p_x p_y) length", m, mu_prod.len())?;
        check_dim("covariance size", m, cov.nrows())?;
        check_dim("covariance size", m, cov.ncols())?;
        if deriv_grams.is_empty() {
            return Err(SicError::InvalidArgument("need at least one derivative Gramian".into()));
        }
        for d in &deriv_grams {
            check_dim("derivative Gramian size", m, d.nrows())?;
            check_dim("derivative Gramian size", m, d.ncols())?;
        }
        let delta = &mu_joint - &mu_prod;
        Ok(EmbeddingSet {
            mu_joint,
            mu_prod,
            cov,
            deriv_grams,
            delta,
        })
    }

    pub fn num_features(&self) -> usize {
        self.delta.len()
    }

    pub fn d_x(&self) -> usize {
        self.deriv_grams.len()
    }

    /// Quadratic forms `uᵀ D̂_j u` for every feature.
    pub fn deriv_forms(&self, u: &DVector<f64>) -> Vec<f64> {
        self.deriv_grams.iter().map(|d| u.dot(&(d * u))).collect()
    }
}

/// Builds the embeddings from a joint sample `(x_i, y_i)` and a product sample
/// `(x_i, ỹ_i)`, both given as concatenated rows.
pub fn build_embeddings(
    map: &RandomFourierMap,
    joint: &DMatrix<f64>,
    prod: &DMatrix<f64>,
) -> Result<EmbeddingSet> {
    check_dim("product sample rows", joint.nrows(), prod.nrows())?;
    let n = joint.nrows();
    if n == 0 {
        return Err(SicError::InvalidArgument("empty sample".into()));
    }
    let inv_n = 1.0 / n as f64;
    let phi_joint = map.embed_batch(joint)?;
    let phi_prod = map.embed_batch(prod)?;
    let mu_joint = phi_joint.row_sum().transpose() * inv_n;
    let mu_prod = phi_prod.row_sum().transpose() * inv_n;
    let cov = phi_prod.tr_mul(&phi_prod) * inv_n;
    let deriv_grams = (0..map.input_split().0)
        .map(|j| {
            let g = map.x_derivative_batch(prod, j)?;
            Ok(g.tr_mul(&g) * inv_n)
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::from_parts(mu_joint, mu_prod, cov, deriv_grams)
}
