//! Holdout Randomization Test with Gaussian conditional generators, and the
//! Benjamini–Hochberg step-up procedure.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convex_sic::ConvexWitness;
use crate::critic::{concat_inputs, CriticNet};
use crate::error::{check_dim, Result, SicError};
use crate::linalg::{mean_and_covariance, standard_normal};
use crate::matrix_serde;
use crate::neural_sic::{ranking, witness_score};

const RIDGE: f64 = 1e-6;

/// A fitted critic that can be scored on a sample.
pub trait Witness: Sync {
    fn input_split(&self) -> (usize, usize);
    /// Mean critic value over the rows of `(x, y)`.
    fn score(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64>;
}

impl Witness for CriticNet {
    fn input_split(&self) -> (usize, usize) {
        CriticNet::input_split(self)
    }

    fn score(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
        witness_score(self, x, y)
    }
}

impl Witness for ConvexWitness {
    fn input_split(&self) -> (usize, usize) {
        self.map.input_split()
    }

    fn score(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
        check_dim("rows of y", x.nrows(), y.nrows())?;
        Ok(self.evaluate(&concat_inputs(x, y)?)?.mean())
    }
}

/// Draws column `j` of `x` from its law conditional on the other columns.
pub trait ConditionalGenerator: Sync {
    fn dim(&self) -> usize;
    fn sample_column(&self, x: &DMatrix<f64>, j: usize, rng: &mut ChaCha8Rng) -> Result<DVector<f64>>;
}

/// Joint Gaussian feature model with cached complete conditionals
/// `x_j | x_{−j} ~ N(μ_j + Σ_{k≠j} b_{jk}(x_k − μ_k), v_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianConditionalModel {
    pub mean: Vec<f64>,
    #[serde(with = "matrix_serde::matrix")]
    pub cov: DMatrix<f64>,
    /// Row `j` holds `b_{j·}` with `b_{jj} = 0`.
    #[serde(with = "matrix_serde::matrix")]
    pub coefficients: DMatrix<f64>,
    pub conditional_variance: Vec<f64>,
}

impl GaussianConditionalModel {
    pub fn from_moments(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        check_dim("covariance rows", d, cov.nrows())?;
        check_dim("covariance columns", d, cov.ncols())?;
        let precision = cov
            .clone()
            .cholesky()
            .ok_or_else(|| SicError::Singular("feature covariance is not positive definite".into()))?
            .inverse();
        let mut coefficients = DMatrix::zeros(d, d);
        let mut conditional_variance = Vec::with_capacity(d);
        for j in 0..d {
            let qjj = precision[(j, j)];
            if !(qjj > 0.0) || !qjj.is_finite() {
                return Err(SicError::Singular(format!("degenerate conditional for feature {j}")));
            }
            for k in 0..d {
                if k != j {
                    coefficients[(j, k)] = -precision[(j, k)] / qjj;
                }
            }
            conditional_variance.push(1.0 / qjj);
        }
        Ok(GaussianConditionalModel {
            mean,
            cov,
            coefficients,
            conditional_variance,
        })
    }

    /// Conditional mean of feature `j` for each row of `x`.
    pub fn conditional_mean(&self, x: &DMatrix<f64>, j: usize) -> Result<DVector<f64>> {
        check_dim("feature columns", self.dim(), x.ncols())?;
        if j >= self.dim() {
            return Err(SicError::IndexOutOfRange { index: j, bound: self.dim() });
        }
        let b = self.coefficients.row(j);
        Ok(DVector::from_fn(x.nrows(), |i, _| {
            self.mean[j]
                + (0..self.dim())
                    .map(|k| b[k] * (x[(i, k)] - self.mean[k]))
                    .sum::<f64>()
        }))
    }
}

impl ConditionalGenerator for GaussianConditionalModel {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample_column(&self, x: &DMatrix<f64>, j: usize, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
        let mean = self.conditional_mean(x, j)?;
        let z = standard_normal(x.nrows(), 1, rng);
        Ok(mean + z.column(0) * self.conditional_variance[j].sqrt())
    }
}

/// Empirical mean and covariance with a `1e-6` diagonal ridge.
pub fn fit_gaussian_conditional(x: &DMatrix<f64>) -> Result<GaussianConditionalModel> {
    if x.nrows() < 2 {
        return Err(SicError::InvalidArgument("need at least two rows to fit a covariance".into()));
    }
    let (mean, mut cov) = mean_and_covariance(x);
    for j in 0..cov.nrows() {
        cov[(j, j)] += RIDGE;
    }
    GaussianConditionalModel::from_moments(mean.as_slice().to_vec(), cov)
}

/// Observed holdout score, p-values and null scores for the tested features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrtPvalues {
    pub observed_score: f64,
    pub features: Vec<usize>,
    pub pvalues: Vec<f64>,
    pub null_scores: Vec<Vec<f64>>,
}

/// `p_j = (1 + #{r : S_j^r ≥ S*}) / (R + 1)`.
pub fn randomization_pvalue(observed: f64, null_scores: &[f64]) -> f64 {
    let exceed = null_scores.iter().filter(|&&s| s >= observed).count();
    (1 + exceed) as f64 / (null_scores.len() + 1) as f64
}

/// Resamples each listed feature `rounds` times from `generator` and rescores
/// the witness on the modified holdout. Feature `j` uses its own RNG stream.
pub fn hrt_pvalues<W: Witness + ?Sized, G: ConditionalGenerator + ?Sized>(
    witness: &W,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    generator: &G,
    features: &[usize],
    rounds: usize,
    seed: u64,
) -> Result<HrtPvalues> {
    if features.is_empty() {
        return Err(SicError::InvalidArgument("no features to test".into()));
    }
    if rounds == 0 {
        return Err(SicError::InvalidArgument("need at least one randomization round".into()));
    }
    check_dim("generator dimension", x.ncols(), generator.dim())?;
    if let Some(&j) = features.iter().find(|&&j| j >= x.ncols()) {
        return Err(SicError::IndexOutOfRange { index: j, bound: x.ncols() });
    }
    let observed = witness.score(x, y)?;
    let null_scores = features
        .par_iter()
        .map(|&j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let mut xr = x.clone();
            (0..rounds)
                .map(|_| {
                    let col = generator.sample_column(x, j, &mut rng)?;
                    xr.set_column(j, &col);
                    witness.score(&xr, y)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HrtPvalues {
        observed_score: observed,
        features: features.to_vec(),
        pvalues: null_scores.iter().map(|s| randomization_pvalue(observed, s)).collect(),
        null_scores,
    })
}

/// Positions in `p` rejected by the Benjamini–Hochberg step-up procedure at level `q`.
pub fn benjamini_hochberg(p: &[f64], q: f64) -> Result<Vec<usize>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(SicError::InvalidArgument(format!("target FDR must lie in (0, 1), got {q}")));
    }
    if let Some(v) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(SicError::InvalidArgument(format!("p-value {v} outside [0, 1]")));
    }
    let k = p.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let cutoff = (1..=k)
        .rev()
        .find(|&i| p[order[i - 1]] <= i as f64 * q / k as f64)
        .map(|i| p[order[i - 1]]);
    let mut selected: Vec<usize> = match cutoff {
        Some(t) => (0..k).filter(|&j| p[j] <= t).collect(),
        None => Vec::new(),
    };
    selected.sort_unstable();
    Ok(selected)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrtConfig {
    /// Number of top-η features tested.
    pub shortlist: usize,
    pub rounds: usize,
    pub target_fdr: f64,
    pub seed: u64,
}

impl Default for HrtConfig {
    fn default() -> Self {
        HrtConfig {
            shortlist: 20,
            rounds: 99,
            target_fdr: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrtResult {
    pub shortlist: Vec<usize>,
    /// Aligned with `shortlist`.
    pub pvalues: Vec<f64>,
    pub selected: Vec<usize>,
    pub rounds: usize,
    pub target_fdr: f64,
    pub observed_score: f64,
    pub null_scores: Vec<Vec<f64>>,
}

/// Tests the top-`K` features by `importance` on the holdout and applies BH.
pub fn hrt_select<W: Witness + ?Sized, G: ConditionalGenerator + ?Sized>(
    witness: &W,
    importance: &[f64],
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    generator: &G,
    cfg: &HrtConfig,
) -> Result<HrtResult> {
    check_dim("importance length", x.ncols(), importance.len())?;
    let k = cfg.shortlist.min(importance.len());
    let shortlist: Vec<usize> = ranking(importance)[..k].to_vec();
    let pv = hrt_pvalues(witness, x, y, generator, &shortlist, cfg.rounds, cfg.seed)?;
    let mut selected: Vec<usize> = benjamini_hochberg(&pv.pvalues, cfg.target_fdr)?
        .into_iter()
        .map(|i| shortlist[i])
        .collect();
    selected.sort_unstable();
    Ok(HrtResult {
        shortlist,
        pvalues: pv.pvalues,
        selected,
        rounds: cfg.rounds,
        target_fdr: cfg.target_fdr,
        observed_score: pv.observed_score,
        null_scores: pv.null_scores,
    })
}
