//! Convex SIC in a fixed feature space.
//!
//! With critics `f(z) = ⟨u, Φ(z)⟩` the smoothed objective is
//!
//! ```text
//! L_ε(u, η) = −⟨u, δ̂⟩ + ½ uᵀ(λ Σ_j D̂_j/η_j + ρĈ + τI)u + (λ/2) Σ_j ε/η_j
//! ```
//!
//! which is jointly strictly convex on `R^m × Δ°`. Its unique minimizer solves
//! the fixed point `u = A(η)⁻¹δ̂`, `η_j ∝ √(uᵀD̂_j u + ε)`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::critic::concat_inputs;
use crate::error::{check_dim, Result, SicError};
use crate::feature_map::{build_embeddings, median_heuristic, EmbeddingSet, RandomFourierMap};
use crate::linalg::{max_eigenvalue, select_rows, spd_solve};
use crate::simplex;

/// Penalty weights, smoothing and solver controls for convex SIC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexConfig {
    pub lambda: f64,
    pub rho: f64,
    pub tau: f64,
    pub eps: f64,
    pub max_iter: usize,
    /// Tolerance on consecutive loss change.
    pub tol: f64,
    /// Step size for the gradient step on `u` (block coordinate descent).
    /// `None` uses `1/L` with `L` an upper bound on the curvature at the current `η`.
    pub lr_u: Option<f64>,
    /// Step size for the mirror step on `η`. `None` scales the step by the
    /// steepest η-gradient so no logit moves by more than ½.
    pub lr_eta: Option<f64>,
}

impl Default for ConvexConfig {
    fn default() -> Self {
        ConvexConfig {
            lambda: 1.0,
            rho: 1e-3,
            tau: 1e-4,
            eps: 1e-6,
            max_iter: 10_000,
            tol: 1e-10,
            lr_u: None,
            lr_eta: None,
        }
    }
}

impl ConvexConfig {
    /// Defaults tuned for block coordinate descent.
    pub fn bcd() -> Self {
        ConvexConfig {
            max_iter: 500_000,
            tol: 1e-8,
            ..ConvexConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.rho >= 0.0 && self.tau >= 0.0) {
            return Err(SicError::InvalidArgument(format!(
                "λ, ρ, τ must be non-negative (λ = {}, ρ = {}, τ = {})",
                self.lambda, self.rho, self.tau
            )));
        }
        if !(self.eps > 0.0) {
            return Err(SicError::InvalidArgument(format!("ε must be positive, got {}", self.eps)));
        }
        for (name, lr) in [("lr_u", self.lr_u), ("lr_eta", self.lr_eta)] {
            if let Some(v) = lr {
                if !(v > 0.0) {
                    return Err(SicError::InvalidArgument(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }
}

/// Minimizer `(u, η)` with diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexSolution {
    pub u: Vec<f64>,
    pub eta: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub fixed_point_residual: f64,
    pub sic_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl ConvexSolution {
    pub fn u_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.u)
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().unwrap_or(&f64::NAN)
    }
}

fn check_eta(emb: &EmbeddingSet, eta: &[f64]) -> Result<()> {
    check_dim("η length", emb.d_x(), eta.len())?;
    if let Some((j, &v)) = eta.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(SicError::Precondition(format!(
            "η must lie in the open simplex, η[{j}] = {v}"
        )));
    }
    Ok(())
}

/// `A(η) = λ Σ_j D̂_j/η_j + ρĈ + τI`.
pub fn system_matrix(emb: &EmbeddingSet, eta: &[f64], cfg: &ConvexConfig) -> Result<DMatrix<f64>> {
    check_eta(emb, eta)?;
    let m = emb.num_features();
    let mut a = &emb.cov * cfg.rho;
    for i in 0..m {
        a[(i, i)] += cfg.tau;
    }
    for (d, &e) in emb.deriv_grams.iter().zip(eta) {
        a += d * (cfg.lambda / e);
    }
    Ok(a)
}

/// `u = A(η)⁻¹ δ̂`.
pub fn solve_u(emb: &EmbeddingSet, eta: &[f64], cfg: &ConvexConfig) -> Result<DVector<f64>> {
    let a = system_matrix(emb, eta, cfg)?;
    spd_solve(&a, &emb.delta).map_err(|_| {
        SicError::Singular(
            "regularized system λΣD_j/η_j + ρC + τI is not positive definite; use τ > 0".into(),
        )
    })
}

/// Exact value of `L_ε(u, η)`.
pub fn loss_eval(emb: &EmbeddingSet, u: &DVector<f64>, eta: &[f64], cfg: &ConvexConfig) -> Result<f64> {
    check_eta(emb, eta)?;
    check_dim("u length", emb.num_features(), u.len())?;
    let forms = emb.deriv_forms(u);
    Ok(loss_from_forms(emb, u, &forms, eta, cfg))
}

fn loss_from_forms(emb: &EmbeddingSet, u: &DVector<f64>, forms: &[f64], eta: &[f64], cfg: &ConvexConfig) -> f64 {
    let quad = cfg.rho * u.dot(&(&emb.cov * u)) + cfg.tau * u.norm_squared();
    -u.dot(&emb.delta) + 0.5 * quad + simplex::penalty_eta_part(forms, eta, cfg.lambda, cfg.eps)
}

/// `η_j = √(uᵀD̂_j u + ε) / Σ_k √(uᵀD̂_k u + ε)`.
pub fn eta_closed_form(u: &DVector<f64>, emb: &EmbeddingSet, eps: f64) -> Vec<f64> {
    simplex::eta_from_forms(&emb.deriv_forms(u), eps)
}

/// Gradient of `L_ε` with respect to `η`: `−(λ/2)(uᵀD̂_j u + ε)/η_j²`.
pub fn eta_gradient(emb: &EmbeddingSet, u: &DVector<f64>, eta: &[f64], cfg: &ConvexConfig) -> Vec<f64> {
    simplex::penalty_eta_gradient(&emb.deriv_forms(u), eta, cfg.lambda, cfg.eps)
}

/// Gradient of `L_ε` with respect to `u`: `A(η)u − δ̂`.
pub fn u_gradient(emb: &EmbeddingSet, u: &DVector<f64>, eta: &[f64], cfg: &ConvexConfig) -> DVector<f64> {
    let mut g = &emb.cov * u * cfg.rho + u * cfg.tau - &emb.delta;
    for (d, &e) in emb.deriv_grams.iter().zip(eta) {
        g += d * u * (cfg.lambda / e);
    }
    g
}

/// `‖u − A(η)⁻¹δ̂‖₂ + ‖η − η*(u)‖₁`, zero exactly at the minimizer.
pub fn fixed_point_residual(emb: &EmbeddingSet, u: &DVector<f64>, eta: &[f64], cfg: &ConvexConfig) -> Result<f64> {
    check_dim("u length", emb.num_features(), u.len())?;
    let target = solve_u(emb, eta, cfg)?;
    let closed = eta_closed_form(u, emb, cfg.eps);
    let eta_gap: f64 = eta.iter().zip(&closed).map(|(a, b)| (a - b).abs()).sum();
    Ok((u - target).norm() + eta_gap)
}

/// Alternating minimization from the uniform `η`.
pub fn fit_alternating(emb: &EmbeddingSet, cfg: &ConvexConfig) -> Result<ConvexSolution> {
    fit_alternating_from(emb, cfg, &simplex::uniform(emb.d_x()))
}

/// Alternating minimization: exact solve in `u`, closed form in `η`.
///
/// Stops once the loss change is below `tol` and the fixed-point residual
/// is below `10·tol`.
pub fn fit_alternating_from(emb: &EmbeddingSet, cfg: &ConvexConfig, eta0: &[f64]) -> Result<ConvexSolution> {
    cfg.validate()?;
    check_eta(emb, eta0)?;
    let mut u = solve_u(emb, eta0, cfg)?;
    let mut eta;
    let mut trace = Vec::new();
    let mut residual;
    let mut converged = false;
    let mut iterations = 0;
    loop {
        iterations += 1;
        eta = eta_closed_form(&u, emb, cfg.eps);
        let loss = loss_eval(emb, &u, &eta, cfg)?;
        if !loss.is_finite() {
            return Err(SicError::NonFiniteLoss { iteration: iterations });
        }
        let next_u = solve_u(emb, &eta, cfg)?;
        residual = (&u - &next_u).norm();
        let small_change = trace.last().is_some_and(|&prev: &f64| (prev - loss).abs() < cfg.tol);
        trace.push(loss);
        if (small_change || emb.d_x() == 1) && residual <= 10.0 * cfg.tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        u = next_u;
    }
    Ok(ConvexSolution {
        sic_value: 0.5 * u.dot(&emb.delta),
        u: u.as_slice().to_vec(),
        eta,
        loss_trace: trace,
        fixed_point_residual: residual,
        iterations,
        converged,
    })
}

/// Alternating minimization along a geometric schedule `ε_0, ε_0·r, …` down
/// to `cfg.eps`, warm-starting each stage from the previous `η`.
pub fn fit_annealed(emb: &EmbeddingSet, cfg: &ConvexConfig, eps_start: f64, factor: f64) -> Result<ConvexSolution> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(SicError::InvalidArgument(format!(
            "annealing factor must lie in (0, 1), got {factor}"
        )));
    }
    let mut eps = eps_start.max(cfg.eps);
    let mut eta = simplex::uniform(emb.d_x());
    loop {
        let stage = ConvexConfig { eps, ..*cfg };
        let sol = fit_alternating_from(emb, &stage, &eta)?;
        if eps <= cfg.eps {
            return Ok(sol);
        }
        eta = sol.eta;
        eps = (eps * factor).max(cfg.eps);
    }
}

/// Block coordinate descent from `u = 0`, uniform `η`.
pub fn fit_bcd(emb: &EmbeddingSet, cfg: &ConvexConfig) -> Result<ConvexSolution> {
    let u0 = DVector::zeros(emb.num_features());
    fit_bcd_from(emb, cfg, &u0, &simplex::uniform(emb.d_x()))
}

/// Block coordinate descent: a gradient step on `u` followed by an entropic
/// mirror step on `η` per iteration.
pub fn fit_bcd_from(
    emb: &EmbeddingSet,
    cfg: &ConvexConfig,
    u0: &DVector<f64>,
    eta0: &[f64],
) -> Result<ConvexSolution> {
    cfg.validate()?;
    check_eta(emb, eta0)?;
    check_dim("u length", emb.num_features(), u0.len())?;
    let curv_d: Vec<f64> = emb.deriv_grams.iter().map(max_eigenvalue).collect();
    let curv_c = max_eigenvalue(&emb.cov);

    let mut u = u0.clone();
    let mut eta = eta0.to_vec();
    let mut loss = loss_eval(emb, &u, &eta, cfg)?;
    let mut trace = vec![loss];
    let mut increases = 0;
    let mut converged = false;
    let mut iterations = 0;
    let param_tol = 1e-12;

    while iterations < cfg.max_iter {
        iterations += 1;
        let step_u = cfg.lr_u.unwrap_or_else(|| {
            let bound: f64 = cfg.lambda
                * curv_d.iter().zip(&eta).map(|(c, e)| c / e).sum::<f64>()
                + cfg.rho * curv_c
                + cfg.tau;
            1.0 / bound
        });
        let grad_u = u_gradient(emb, &u, &eta, cfg);
        let new_u = &u - &grad_u * step_u;

        let forms = emb.deriv_forms(&new_u);
        let grad_eta = simplex::penalty_eta_gradient(&forms, &eta, cfg.lambda, cfg.eps);
        let step_eta = cfg.lr_eta.unwrap_or_else(|| {
            let steepest = grad_eta.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            0.5 / steepest
        });
        let new_eta = simplex::mirror_step(&eta, &grad_eta, step_eta);
        if new_eta.iter().any(|&e| !(e > 0.0)) {
            return Err(SicError::Divergence {
                iteration: iterations,
                hint: "η reached the simplex boundary; use a smaller η learning rate".into(),
            });
        }

        let new_loss = loss_eval(emb, &new_u, &new_eta, cfg)?;
        if !new_loss.is_finite() {
            return Err(SicError::NonFiniteLoss { iteration: iterations });
        }
        if new_loss > loss {
            increases += 1;
            if increases >= 50 {
                return Err(SicError::Divergence {
                    iteration: iterations,
                    hint: "loss increased for 50 consecutive iterations; use smaller learning rates".into(),
                });
            }
        } else {
            increases = 0;
        }
        let du = (&new_u - &u).amax();
        let deta: f64 = new_eta.iter().zip(&eta).map(|(a, b)| (a - b).abs()).sum();
        let dloss = (new_loss - loss).abs();
        u = new_u;
        eta = new_eta;
        loss = new_loss;
        trace.push(loss);
        if dloss < cfg.tol && du + deta < param_tol {
            converged = true;
            break;
        }
    }
    let residual = fixed_point_residual(emb, &u, &eta, cfg)?;
    Ok(ConvexSolution {
        sic_value: 0.5 * u.dot(&emb.delta),
        u: u.as_slice().to_vec(),
        eta,
        loss_trace: trace,
        fixed_point_residual: residual,
        iterations,
        converged,
    })
}

/// SIC value and its per-feature decomposition at a (near-)optimal solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SicDecomposition {
    /// `½⟨u, δ̂⟩`
    pub sic: f64,
    /// `η_j · Ω` with `Ω = Σ_k √(uᵀD̂_k u + ε)`.
    pub per_feature: Vec<f64>,
    pub omega: f64,
    /// `⟨u, δ̂⟩`
    pub mean_difference: f64,
    /// `λ Ω² + ρ uᵀĈu + τ‖u‖²`
    pub smoothed_penalty: f64,
    /// `λ Σ_j uᵀD̂_j u/η_j + ρ uᵀĈu + τ‖u‖²`, equal to `⟨u, δ̂⟩` wherever `u = A(η)⁻¹δ̂`.
    pub stationary_penalty: f64,
}

impl SicDecomposition {
    pub fn smoothed_identity_gap(&self) -> f64 {
        relative_gap(self.mean_difference, self.smoothed_penalty)
    }

    pub fn stationary_identity_gap(&self) -> f64 {
        relative_gap(self.mean_difference, self.stationary_penalty)
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Computes `SIC = ½⟨u, δ̂⟩`, the per-feature split `η_j Ω` and the identities
/// relating the mean difference to the penalty at the optimum.
///
/// Fails with [`SicError::NotConverged`] when `⟨u, δ̂⟩` differs from the
/// stationary penalty by more than `1e-4` relative.
pub fn sic_value_and_decomposition(
    emb: &EmbeddingSet,
    sol: &ConvexSolution,
    cfg: &ConvexConfig,
) -> Result<SicDecomposition> {
    let u = sol.u_vector();
    check_eta(emb, &sol.eta)?;
    check_dim("u length", emb.num_features(), u.len())?;
    let forms = emb.deriv_forms(&u);
    let omega: f64 = forms.iter().map(|a| (a.max(0.0) + cfg.eps).sqrt()).sum();
    let per_feature = sol.eta.iter().map(|e| e * omega).collect();
    let mean_difference = u.dot(&emb.delta);
    let ridge = cfg.rho * u.dot(&(&emb.cov * &u)) + cfg.tau * u.norm_squared();
    let smoothed_penalty = cfg.lambda * omega * omega + ridge;
    let stationary_penalty = cfg.lambda
        * forms.iter().zip(&sol.eta).map(|(a, e)| a / e).sum::<f64>()
        + ridge;
    let out = SicDecomposition {
        sic: 0.5 * mean_difference,
        per_feature,
        omega,
        mean_difference,
        smoothed_penalty,
        stationary_penalty,
    };
    if mean_difference.abs() > 0.0 && out.stationary_identity_gap() > 1e-4 {
        return Err(SicError::NotConverged(format!(
            "⟨u, δ⟩ = {mean_difference:.6e} but the penalty at (u, η) is {stationary_penalty:.6e}"
        )));
    }
    Ok(out)
}

/// Random-feature settings used when fitting directly from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapConfig {
    pub num_features: usize,
    /// Kernel bandwidth; `None` uses the median pairwise distance of the product sample.
    pub bandwidth: Option<f64>,
    pub seed: u64,
}

impl Default for FeatureMapConfig {
    fn default() -> Self {
        FeatureMapConfig {
            num_features: 256,
            bandwidth: None,
            seed: 0,
        }
    }
}

/// `f(x, y) = ⟨u, Φ(x, y)⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexWitness {
    pub map: RandomFourierMap,
    pub u: Vec<f64>,
}

impl ConvexWitness {
    pub fn evaluate(&self, z: &DMatrix<f64>) -> Result<DVector<f64>> {
        let phi = self.map.embed_batch(z)?;
        Ok(phi * DVector::from_column_slice(&self.u))
    }
}

/// Convex SIC fitted end to end on data.
#[derive(Debug, Clone)]
pub struct ConvexFit {
    pub witness: ConvexWitness,
    pub embeddings: EmbeddingSet,
    pub solution: ConvexSolution,
}

/// Permutes `y` to form the product sample, draws a random Fourier map and
/// solves by alternating minimization.
pub fn fit_from_data(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &ConvexConfig,
    map_cfg: &FeatureMapConfig,
) -> Result<ConvexFit> {
    check_dim("rows of y", x.nrows(), y.nrows())?;
    if x.nrows() < 2 {
        return Err(SicError::InvalidArgument("need at least two samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(map_cfg.seed);
    let mut perm: Vec<usize> = (0..y.nrows()).collect();
    perm.shuffle(&mut rng);
    let y_perm = select_rows(y, &perm);
    let joint = concat_inputs(x, y)?;
    let prod = concat_inputs(x, &y_perm)?;
    let bandwidth = map_cfg.bandwidth.unwrap_or_else(|| median_heuristic(&prod, 1000));
    let map = RandomFourierMap::new(
        x.ncols(),
        y.ncols(),
        map_cfg.num_features,
        bandwidth,
        map_cfg.seed.wrapping_add(1),
    )?;
    let embeddings = build_embeddings(&map, &joint, &prod)?;
    let solution = fit_alternating(&embeddings, cfg)?;
    Ok(ConvexFit {
        witness: ConvexWitness {
            map,
            u: solution.u.clone(),
        },
        embeddings,
        solution,
    })
}
