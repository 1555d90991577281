//! Neural SIC: stochastic block coordinate descent over a critic network and
//! the importance simplex, plus Boosted SIC aggregation.

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::critic::{concat_inputs, Architecture, CriticNet, DropoutMask, PenaltyWeights};
use crate::error::{check_dim, Result, SicError};
use crate::linalg::select_rows;
use crate::simplex;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralConfig {
    pub architecture: Architecture,
    pub lambda: f64,
    pub rho: f64,
    pub eps: f64,
    pub adam: AdamConfig,
    /// Mirror-descent step on η.
    pub lr_eta: f64,
    pub batch_size: usize,
    pub max_iter: usize,
    pub seed: u64,
    /// Keep η after every iteration in the solution.
    #[serde(default)]
    pub record_eta_trace: bool,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            architecture: Architecture::small_critic(),
            lambda: 1.0,
            rho: 1e-3,
            eps: 1e-6,
            adam: AdamConfig::default(),
            lr_eta: 0.1,
            batch_size: 100,
            max_iter: 4000,
            seed: 0,
            record_eta_trace: false,
        }
    }
}

impl NeuralConfig {
    fn validate(&self, n: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.rho >= 0.0) || !(self.eps > 0.0) {
            return Err(SicError::InvalidArgument(format!(
                "need λ, ρ ≥ 0 and ε > 0 (λ = {}, ρ = {}, ε = {})",
                self.lambda, self.rho, self.eps
            )));
        }
        if !(self.lr_eta > 0.0 && self.adam.lr > 0.0) {
            return Err(SicError::InvalidArgument("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return Err(SicError::InvalidArgument(format!(
                "batch size {} must lie in 1..={n}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralSolution {
    pub net: CriticNet,
    pub eta: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_trace: Option<Vec<Vec<f64>>>,
}

/// Uniformly random row permutation of `y`.
pub fn permute_marginals(y: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
    if y.nrows() < 2 {
        return Err(SicError::InvalidArgument(format!(
            "need at least two rows to permute, got {}",
            y.nrows()
        )));
    }
    let mut perm: Vec<usize> = (0..y.nrows()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(select_rows(y, &perm))
}

/// Trains a critic and η by stochastic BCD.
///
/// Each iteration draws a joint minibatch and an independent product
/// minibatch `(x_a, y_b)`, takes an Adam step on the critic and a mirror step
/// on η using the squared input gradients of the same evaluation.
pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>, cfg: &NeuralConfig) -> Result<NeuralSolution> {
    check_dim("rows of y", x.nrows(), y.nrows())?;
    let n = x.nrows();
    cfg.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = CriticNet::new(&cfg.architecture, x.ncols(), y.ncols(), rng.random())?;
    let mut params = net.params();
    let mut adam = AdamState::new(params.len(), cfg.adam);
    let mut eta = simplex::uniform(x.ncols());
    let weights = PenaltyWeights {
        lambda: cfg.lambda,
        rho: cfg.rho,
        eps: cfg.eps,
    };
    let b = cfg.batch_size;
    let dropout = net.dropout_rate() > 0.0;
    let mut loss_trace = Vec::with_capacity(cfg.max_iter);
    let mut eta_trace = cfg.record_eta_trace.then(Vec::new);

    for iteration in 0..cfg.max_iter {
        let rows_j = index::sample(&mut rng, n, b).into_vec();
        let rows_x = index::sample(&mut rng, n, b).into_vec();
        let rows_y = index::sample(&mut rng, n, b).into_vec();
        let joint = concat_inputs(&select_rows(x, &rows_j), &select_rows(y, &rows_j))?;
        let prod = concat_inputs(&select_rows(x, &rows_x), &select_rows(y, &rows_y))?;
        let masks = dropout.then(|| {
            (
                DropoutMask::sample(&net, b, rng.random()),
                DropoutMask::sample(&net, b, rng.random()),
            )
        });
        let lg = net.loss_gradients(&eta, &joint, &prod, weights, masks.as_ref().map(|(a, b)| (a, b)))?;
        if !lg.loss.is_finite() {
            return Err(SicError::NonFiniteLoss { iteration });
        }
        loss_trace.push(lg.loss);

        adam.step(&mut params, &lg.grads)?;
        net.set_params(&params)?;

        let grad_eta = simplex::penalty_eta_gradient(&lg.sq_grads, &eta, cfg.lambda, cfg.eps);
        eta = simplex::mirror_step(&eta, &grad_eta, cfg.lr_eta);
        if eta.iter().any(|&e| !(e > 0.0)) {
            return Err(SicError::Divergence {
                iteration,
                hint: "η reached the simplex boundary; use a smaller η learning rate".into(),
            });
        }
        if let Some(t) = eta_trace.as_mut() {
            t.push(eta.clone());
        }
    }
    Ok(NeuralSolution {
        net,
        eta,
        loss_trace,
        seed: cfg.seed,
        eta_trace,
    })
}

/// Mean critic value over the rows of `(x, y)` with dropout off.
pub fn witness_score(net: &CriticNet, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    check_dim("rows of y", x.nrows(), y.nrows())?;
    let (d_x, d_y) = net.input_split();
    check_dim("columns of x", d_x, x.ncols())?;
    check_dim("columns of y", d_y, y.ncols())?;
    if x.nrows() == 0 {
        return Err(SicError::InvalidArgument("cannot score an empty sample".into()));
    }
    let f: DVector<f64> = net.forward(&concat_inputs(x, y)?, None)?;
    Ok(f.mean())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostMode {
    Arithmetic,
    Geometric,
}

/// Aggregates importance vectors by coordinate-wise mean.
pub fn boost_scores(etas: &[Vec<f64>], mode: BoostMode) -> Result<Vec<f64>> {
    let first = etas
        .first()
        .ok_or_else(|| SicError::InvalidArgument("no score vectors to boost".into()))?;
    let d = first.len();
    for e in etas {
        check_dim("score vector length", d, e.len())?;
    }
    let k = etas.len() as f64;
    match mode {
        BoostMode::Arithmetic => Ok((0..d).map(|j| etas.iter().map(|e| e[j]).sum::<f64>() / k).collect()),
        BoostMode::Geometric => {
            if let Some(v) = etas.iter().flatten().find(|v| !(**v > 0.0)) {
                return Err(SicError::InvalidArgument(format!(
                    "geometric boosting needs positive scores, got {v}"
                )));
            }
            let logs: Vec<f64> = (0..d)
                .map(|j| etas.iter().map(|e| e[j].ln()).sum::<f64>() / k)
                .collect();
            Ok(simplex::softmax(&logs))
        }
    }
}

/// Fits one member per configuration in parallel.
pub fn fit_many(x: &DMatrix<f64>, y: &DMatrix<f64>, configs: &[NeuralConfig]) -> Result<Vec<NeuralSolution>> {
    configs.par_iter().map(|c| fit(x, y, c)).collect()
}

/// Boosted SIC: one member per configuration, η aggregated by `mode`.
pub fn fit_boosted(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    configs: &[NeuralConfig],
    mode: BoostMode,
) -> Result<(Vec<f64>, Vec<NeuralSolution>)> {
    let members = fit_many(x, y, configs)?;
    let etas: Vec<Vec<f64>> = members.iter().map(|m| m.eta.clone()).collect();
    Ok((boost_scores(&etas, mode)?, members))
}

/// Member configurations varying the batch size, with seeds `seed, seed+1, …`.
pub fn batch_size_members(base: &NeuralConfig, batch_sizes: &[usize]) -> Vec<NeuralConfig> {
    batch_sizes
        .iter()
        .enumerate()
        .map(|(i, &b)| NeuralConfig {
            batch_size: b,
            seed: base.seed.wrapping_add(i as u64),
            ..base.clone()
        })
        .collect()
}

/// Indices sorted by decreasing score; ties keep the lower index first.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}
