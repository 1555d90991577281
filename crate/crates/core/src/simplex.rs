//! Helpers for importance vectors living on the open probability simplex.
//!
//! Both the convex block coordinate descent and the stochastic neural
//! trainer update η with the entropic mirror step
//! `η ← softmax(log η − α ∂L/∂η)`, and both use the closed-form minimizer
//! `η_j ∝ √(a_j + ε)` of `Σ_j (a_j + ε)/η_j` over the simplex.

use crate::error::{Result, SicError};

/// Uniform vector `1/d` of length `d`.
pub fn uniform(d: usize) -> Vec<f64> {
    vec![1.0 / d as f64; d]
}

/// Softmax with the maximum logit subtracted before exponentiation.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// One entropic mirror-descent step on the simplex.
pub fn mirror_step(eta: &[f64], grad: &[f64], step: f64) -> Vec<f64> {
    let logits: Vec<f64> = eta
        .iter()
        .zip(grad)
        .map(|(&e, &g)| e.ln() - step * g)
        .collect();
    softmax(&logits)
}

/// Gradient of `(λ/2) Σ_j (a_j + ε)/η_j` with respect to η.
pub fn penalty_eta_gradient(forms: &[f64], eta: &[f64], lambda: f64, eps: f64) -> Vec<f64> {
    forms
        .iter()
        .zip(eta)
        .map(|(&a, &e)| -0.5 * lambda * (a + eps) / (e * e))
        .collect()
}

/// `(λ/2) Σ_j (a_j + ε)/η_j`, the η-dependent part of the smoothed loss.
pub fn penalty_eta_part(forms: &[f64], eta: &[f64], lambda: f64, eps: f64) -> f64 {
    0.5 * lambda
        * forms
            .iter()
            .zip(eta)
            .map(|(&a, &e)| (a + eps) / e)
            .sum::<f64>()
}

/// Minimizer of `Σ_j (a_j + ε)/η_j` over the simplex: `η_j = √(a_j+ε) / Σ_k √(a_k+ε)`.
///
/// With `ε = 0` this is only defined when some `a_j > 0`.
pub fn eta_from_forms(forms: &[f64], eps: f64) -> Vec<f64> {
    let beta: Vec<f64> = forms.iter().map(|&a| (a.max(0.0) + eps).sqrt()).collect();
    let total: f64 = beta.iter().sum();
    beta.into_iter().map(|b| b / total).collect()
}

/// Checks that `eta` is strictly positive and sums to one within `tol`.
pub fn check_open_simplex(eta: &[f64], tol: f64) -> Result<()> {
    if eta.is_empty() {
        return Err(SicError::Precondition("η is empty".into()));
    }
    if let Some((j, &v)) = eta.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(SicError::Precondition(format!(
            "η must be strictly positive, η[{j}] = {v}"
        )));
    }
    let total: f64 = eta.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(SicError::Precondition(format!(
            "η must sum to 1, got {total}"
        )));
    }
    Ok(())
}
