//! Second-order Gaussian model-X knockoffs and the knockoff filter on SIC
//! importance differences.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, SicError};
use crate::linalg::{mean_and_covariance, min_eigenvalue, psd_factor, standard_normal};
use crate::matrix_serde;
use crate::neural_sic::{self, batch_size_members, BoostMode, NeuralConfig};

const RIDGE: f64 = 1e-6;

/// Gaussian knockoff law `X̃ | X ~ N(X − (X − μ)Σ⁻¹S, 2S − SΣ⁻¹S)` with `S = diag(s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffModel {
    pub mean: Vec<f64>,
    #[serde(with = "matrix_serde::matrix")]
    pub cov: DMatrix<f64>,
    pub s: Vec<f64>,
    /// `Σ⁻¹ diag(s)`
    #[serde(with = "matrix_serde::matrix")]
    pub sigma_inv_s: DMatrix<f64>,
    /// `V = 2 diag(s) − diag(s) Σ⁻¹ diag(s)`
    #[serde(with = "matrix_serde::matrix")]
    pub cond_cov: DMatrix<f64>,
    /// `L` with `L Lᵀ = V`.
    #[serde(with = "matrix_serde::matrix")]
    pub cond_factor: DMatrix<f64>,
}

impl KnockoffModel {
    /// Builds the model for an explicit `s`; entries must satisfy `0 ≤ s_j`
    /// and make `V` positive semidefinite.
    pub fn with_s(mean: Vec<f64>, cov: DMatrix<f64>, s: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        check_dim("covariance rows", d, cov.nrows())?;
        check_dim("covariance columns", d, cov.ncols())?;
        check_dim("s length", d, s.len())?;
        if let Some(v) = s.iter().find(|v| !(**v >= 0.0)) {
            return Err(SicError::InvalidArgument(format!("s must be non-negative, got {v}")));
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| SicError::Singular("feature covariance is not positive definite".into()))?;
        let s_diag = DMatrix::from_diagonal(&DVector::from_column_slice(&s));
        let sigma_inv_s = chol.solve(&s_diag);
        let mut cond_cov = &s_diag * 2.0 - &s_diag * &sigma_inv_s;
        cond_cov = (&cond_cov + cond_cov.transpose()) * 0.5;
        let scale = s.iter().fold(0.0f64, |m, v| m.max(*v)).max(f64::MIN_POSITIVE);
        if min_eigenvalue(&cond_cov) < -1e-8 * scale {
            return Err(SicError::InvalidArgument(
                "s too large: knockoff conditional covariance is not PSD".into(),
            ));
        }
        let cond_factor = psd_factor(&cond_cov);
        Ok(KnockoffModel {
            mean,
            cov,
            s,
            sigma_inv_s,
            cond_cov,
            cond_factor,
        })
    }

    /// Equicorrelated construction: `s = min(2 λ_min(R), 1)` on the
    /// correlation scale `R`, mapped back by the feature variances.
    pub fn equicorrelated(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let sd: Vec<f64> = cov.diagonal().iter().map(|v| v.sqrt()).collect();
        let corr = DMatrix::from_fn(cov.nrows(), cov.ncols(), |i, j| cov[(i, j)] / (sd[i] * sd[j]));
        let lam = min_eigenvalue(&corr);
        if !(lam > 0.0) {
            return Err(SicError::Singular(format!(
                "correlation matrix has smallest eigenvalue {lam:.3e}"
            )));
        }
        let s_corr = (2.0 * lam).min(1.0);
        let s = cov.diagonal().iter().map(|v| s_corr * v).collect();
        KnockoffModel::with_s(mean, cov, s)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Empirical mean and ridged covariance of `x`, equicorrelated `s`.
pub fn fit_knockoff_model(x: &DMatrix<f64>) -> Result<KnockoffModel> {
    if x.nrows() < 2 {
        return Err(SicError::InvalidArgument("need at least two rows to fit a covariance".into()));
    }
    let (mean, mut cov) = mean_and_covariance(x);
    for j in 0..cov.nrows() {
        cov[(j, j)] += RIDGE;
    }
    KnockoffModel::equicorrelated(mean.as_slice().to_vec(), cov)
}

/// One knockoff draw per row.
pub fn sample_knockoffs(model: &KnockoffModel, x: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    check_dim("feature columns", model.dim(), x.ncols())?;
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&model.mean) {
            *v -= m;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = standard_normal(x.nrows(), model.dim(), &mut rng);
    Ok(x - centered * &model.sigma_inv_s + z * model.cond_factor.transpose())
}

/// `W_j = η_j − η_{j+d}` for an importance vector over `[X, X̃]`.
pub fn knockoff_stats(eta_full: &[f64]) -> Result<Vec<f64>> {
    if eta_full.len() % 2 != 0 {
        return Err(SicError::InvalidArgument(format!(
            "importance over [X, X̃] needs even length, got {}",
            eta_full.len()
        )));
    }
    let d = eta_full.len() / 2;
    Ok((0..d).map(|j| eta_full[j] - eta_full[j + d]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterOptions {
    /// Adds 1 to the numerator of the estimated false discovery proportion.
    #[serde(default)]
    pub knockoff_plus: bool,
    /// Selects `W_j ≥ τ` instead of `W_j > τ`.
    #[serde(default)]
    pub inclusive: bool,
}

/// Smallest `t ∈ {|W_j| : W_j ≠ 0}` with `(c + #{W ≤ −t}) / #{W ≥ t} ≤ q`
/// (`c = 1` for knockoff+), and the selected features. `None` means `τ = +∞`.
pub fn knockoff_threshold(w: &[f64], q: f64, opts: FilterOptions) -> Result<(Option<f64>, Vec<usize>)> {
    if !(q > 0.0 && q < 1.0) {
        return Err(SicError::InvalidArgument(format!("target FDR must lie in (0, 1), got {q}")));
    }
    let offset = if opts.knockoff_plus { 1.0 } else { 0.0 };
    let mut pos: Vec<f64> = w.iter().copied().filter(|v| *v > 0.0).collect();
    let mut neg: Vec<f64> = w.iter().filter(|v| **v < 0.0).map(|v| -v).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut candidates: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let tau = candidates.into_iter().find(|&t| {
        let above = pos.len() - pos.partition_point(|&v| v < t);
        let below = neg.len() - neg.partition_point(|&v| v < t);
        above > 0 && (offset + below as f64) / above as f64 <= q
    });
    let selected = match tau {
        Some(t) => (0..w.len())
            .filter(|&j| if opts.inclusive { w[j] >= t } else { w[j] > t })
            .collect(),
        None => Vec::new(),
    };
    Ok((tau, selected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffResult {
    pub w: Vec<f64>,
    /// `None` encodes `τ = +∞`.
    pub threshold: Option<f64>,
    pub selected: Vec<usize>,
    pub target_fdr: f64,
    pub options: FilterOptions,
    /// Importance over the `2d` columns of `[X, X̃]`.
    pub eta_full: Vec<f64>,
}

/// Applies the knockoff filter to an importance vector over `[X, X̃]`.
pub fn knockoff_filter(eta_full: &[f64], q: f64, opts: FilterOptions) -> Result<KnockoffResult> {
    let w = knockoff_stats(eta_full)?;
    let (threshold, selected) = knockoff_threshold(&w, q, opts)?;
    Ok(KnockoffResult {
        w,
        threshold,
        selected,
        target_fdr: q,
        options: opts,
        eta_full: eta_full.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffConfig {
    pub sic: NeuralConfig,
    pub target_fdr: f64,
    pub options: FilterOptions,
    /// Boosted SIC over these batch sizes (geometric mean of η); `None` fits once.
    #[serde(default)]
    pub boost_batch_sizes: Option<Vec<usize>>,
    pub seed: u64,
}

impl Default for KnockoffConfig {
    fn default() -> Self {
        KnockoffConfig {
            sic: NeuralConfig::default(),
            target_fdr: 0.2,
            options: FilterOptions::default(),
            boost_batch_sizes: None,
            seed: 0,
        }
    }
}

/// Boosted members used by the knockoff pipeline.
pub const BOOST_BATCH_SIZES: [usize; 3] = [10, 30, 50];

/// Samples knockoffs, fits neural SIC on `[X, X̃]` and filters `W`.
pub fn knockoff_select(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &KnockoffConfig) -> Result<KnockoffResult> {
    let model = fit_knockoff_model(x)?;
    let xk = sample_knockoffs(&model, x, cfg.seed)?;
    let mut augmented = DMatrix::zeros(x.nrows(), 2 * x.ncols());
    augmented.columns_mut(0, x.ncols()).copy_from(x);
    augmented.columns_mut(x.ncols(), x.ncols()).copy_from(&xk);
    let eta_full = match &cfg.boost_batch_sizes {
        None => neural_sic::fit(&augmented, y, &cfg.sic)?.eta,
        Some(sizes) => {
            let members = batch_size_members(&cfg.sic, sizes);
            neural_sic::fit_boosted(&augmented, y, &members, BoostMode::Geometric)?.0
        }
    };
    knockoff_filter(&eta_full, cfg.target_fdr, cfg.options)
}
