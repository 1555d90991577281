//! Fully connected critic networks with exact input gradients and
//! double backpropagation through squared input-gradient penalties.
//!
//! A critic maps the concatenated input `z = [x, y]` to a scalar. Hidden
//! layers apply a (leaky) ReLU followed by optional inverted dropout; the last
//! layer is a linear readout. Without biases and with plain ReLU the critic is
//! positively homogeneous of degree one, so `f(z) = ⟨∇f(z), z⟩`.
//!
//! Batches are passed row-wise (`N × (d_x + d_y)`); internally activations are
//! kept column-wise (`width × N`) so every layer is a single matrix product.
//!
//! The penalty gradient treats activation patterns as locally constant (the
//! second derivative of a ReLU is zero almost everywhere). Under that
//! convention `∇_z f = W_1ᵀ D_1 W_2ᵀ D_2 ⋯ W_Lᵀ` is multilinear in the weights
//! and its parameter derivative is obtained by pushing the penalty cotangent
//! forward through the same frozen pattern.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result, SicError};
use crate::matrix_serde;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
}

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> (f64, f64) {
        match self {
            // σ'(0) = 0
            Activation::Relu => {
                if a > 0.0 {
                    (a, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            Activation::LeakyRelu { slope } => {
                if a > 0.0 {
                    (a, 1.0)
                } else {
                    (slope * a, slope)
                }
            }
        }
    }
}

/// Splits the first hidden layer into an `x` block and a `y` block, so the
/// first layer processes the two inputs in separate branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchSplit {
    pub x_units: usize,
    pub y_units: usize,
}

/// Layer layout and regularization of a critic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Hidden widths; a width-1 linear readout is appended.
    pub hidden: Vec<usize>,
    pub bias: bool,
    pub activation: Activation,
    pub dropout: f64,
    #[serde(default)]
    pub branch: Option<BranchSplit>,
}

impl Architecture {
    /// Bias-free ReLU network with two hidden layers of 100 units and dropout 0.3.
    pub fn small_critic() -> Self {
        Architecture {
            hidden: vec![100, 100],
            bias: false,
            activation: Activation::Relu,
            dropout: 0.3,
            branch: None,
        }
    }

    /// Branched LeakyReLU network with biases. Not homogeneous.
    pub fn big_critic() -> Self {
        Architecture {
            hidden: vec![120, 100, 100],
            bias: true,
            activation: Activation::LeakyRelu { slope: 0.2 },
            dropout: 0.3,
            branch: Some(BranchSplit {
                x_units: 100,
                y_units: 20,
            }),
        }
    }

    /// Bias-free ReLU net without dropout: the positively homogeneous family.
    pub fn homogeneous(hidden: Vec<usize>) -> Self {
        Architecture {
            hidden,
            bias: false,
            activation: Activation::Relu,
            dropout: 0.0,
            branch: None,
        }
    }

    pub fn is_homogeneous(&self) -> bool {
        !self.bias && self.activation == Activation::Relu
    }

    fn validate(&self, d_x: usize, d_y: usize) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(SicError::InvalidArgument(
                "critic needs at least one hidden layer".into(),
            ));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(SicError::InvalidArgument("hidden widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(SicError::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if d_x == 0 {
            return Err(SicError::InvalidArgument("d_x must be positive".into()));
        }
        if let Some(b) = self.branch {
            check_dim("branch split widths", self.hidden[0], b.x_units + b.y_units)?;
            if d_y == 0 && b.y_units > 0 {
                return Err(SicError::InvalidArgument(
                    "branch split requires d_y > 0 when y_units > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Per-layer dropout masks for one minibatch, entries `0` or `1/(1-p)`.
///
/// The same mask is used for the value and for the input-gradient of a given
/// row, so the penalty is the gradient of the function being scored.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub masks: Vec<DMatrix<f64>>,
    pub seed: u64,
}

impl DropoutMask {
    pub fn sample(net: &CriticNet, rows: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = net.dropout;
        let keep = 1.0 / (1.0 - p);
        let masks = net.weights[..net.weights.len() - 1]
            .iter()
            .map(|w| {
                DMatrix::from_fn(w.nrows(), rows, |_, _| {
                    if rng.random::<f64>() < p {
                        0.0
                    } else {
                        keep
                    }
                })
            })
            .collect();
        DropoutMask { masks, seed }
    }

    fn check(&self, net: &CriticNet, rows: usize) -> Result<()> {
        check_dim("dropout mask layers", net.weights.len() - 1, self.masks.len())?;
        for (m, w) in self.masks.iter().zip(&net.weights) {
            check_dim("dropout mask width", w.nrows(), m.nrows())?;
            check_dim("dropout mask rows", rows, m.ncols())?;
        }
        Ok(())
    }
}

/// A multilayer critic `f(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetRecord", try_from = "NetRecord")]
pub struct CriticNet {
    weights: Vec<DMatrix<f64>>,
    biases: Option<Vec<DVector<f64>>>,
    activation: Activation,
    dropout: f64,
    input_split: (usize, usize),
    branch: Option<BranchSplit>,
}

/// Forward pass state kept for the backward passes.
struct Trace {
    /// Input of each layer, column-wise: `inputs[0] = z`, `inputs[l]` = output of hidden layer `l-1`.
    inputs: Vec<DMatrix<f64>>,
    /// `σ'(a_l) ⊙ mask_l` for each hidden layer.
    slopes: Vec<DMatrix<f64>>,
    values: DVector<f64>,
}

/// Loss value, flat parameter gradient and per-feature mean squared input gradients.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub loss: f64,
    pub grads: Vec<f64>,
    /// `g_j = (1/N) Σ_i |∂f(x_i, ỹ_i)/∂x_j|²` on the product batch.
    pub sq_grads: Vec<f64>,
    /// `Δ̂ = mean f(joint) − mean f(product)`.
    pub delta: f64,
}

/// Penalty weights of the smoothed SIC objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    pub lambda: f64,
    pub rho: f64,
    pub eps: f64,
}

impl CriticNet {
    /// Builds a critic with weights drawn uniformly on `±1/√fan_in`.
    pub fn new(arch: &Architecture, d_x: usize, d_y: usize, seed: u64) -> Result<Self> {
        arch.validate(d_x, d_y)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_in = d_x + d_y;
        let mut widths = vec![d_in];
        widths.extend(&arch.hidden);
        widths.push(1);

        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let w = if l == 0 && arch.branch.is_some() {
                let b = arch.branch.unwrap();
                let bound_x = 1.0 / (d_x as f64).sqrt();
                let bound_y = 1.0 / (d_y.max(1) as f64).sqrt();
                DMatrix::from_fn(fan_out, fan_in, |r, c| {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    match (r < b.x_units, c < d_x) {
                        (true, true) => v * bound_x,
                        (false, false) => v * bound_y,
                        _ => 0.0,
                    }
                })
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                DMatrix::from_fn(fan_out, fan_in, |_, _| {
                    rng.random_range(-1.0..1.0) * bound
                })
            };
            weights.push(w);
            let bound = 1.0 / (fan_in as f64).sqrt();
            biases.push(DVector::from_fn(fan_out, |_, _| {
                rng.random_range(-1.0..1.0) * bound
            }));
        }
        Ok(CriticNet {
            weights,
            biases: arch.bias.then_some(biases),
            activation: arch.activation,
            dropout: arch.dropout,
            input_split: (d_x, d_y),
            branch: arch.branch,
        })
    }

    /// Builds a bias-free critic from explicit layer matrices.
    pub fn from_weights(
        weights: Vec<DMatrix<f64>>,
        activation: Activation,
        d_x: usize,
        d_y: usize,
    ) -> Result<Self> {
        let net = CriticNet {
            weights,
            biases: None,
            activation,
            dropout: 0.0,
            input_split: (d_x, d_y),
            branch: None,
        };
        net.validate()?;
        Ok(net)
    }

    /// Replaces the biases (one vector per layer, including the readout).
    pub fn with_biases(mut self, biases: Vec<DVector<f64>>) -> Result<Self> {
        self.biases = Some(biases);
        self.validate()?;
        Ok(self)
    }

    pub fn with_dropout(mut self, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(SicError::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        self.dropout = rate;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let (d_x, d_y) = self.input_split;
        if self.weights.len() < 2 {
            return Err(SicError::InvalidArgument(
                "critic needs at least one hidden layer".into(),
            ));
        }
        check_dim("first layer columns", d_x + d_y, self.weights[0].ncols())?;
        for l in 1..self.weights.len() {
            check_dim(
                "layer width chain",
                self.weights[l - 1].nrows(),
                self.weights[l].ncols(),
            )?;
        }
        check_dim("readout rows", 1, self.weights.last().unwrap().nrows())?;
        if let Some(b) = &self.biases {
            check_dim("bias layers", self.weights.len(), b.len())?;
            for (w, b) in self.weights.iter().zip(b) {
                check_dim("bias width", w.nrows(), b.len())?;
            }
        }
        Ok(())
    }

    pub fn input_split(&self) -> (usize, usize) {
        self.input_split
    }

    pub fn input_dim(&self) -> usize {
        self.input_split.0 + self.input_split.1
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> Option<&[DVector<f64>]> {
        self.biases.as_deref()
    }

    pub fn is_homogeneous(&self) -> bool {
        self.biases.is_none() && self.activation == Activation::Relu
    }

    pub fn num_params(&self) -> usize {
        let w: usize = self.weights.iter().map(|w| w.len()).sum();
        let b: usize = self
            .biases
            .as_ref()
            .map(|b| b.iter().map(|b| b.len()).sum())
            .unwrap_or(0);
        w + b
    }

    /// Parameters flattened layer by layer (weights column-major, then bias).
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in 0..self.weights.len() {
            out.extend_from_slice(self.weights[l].as_slice());
            if let Some(b) = &self.biases {
                out.extend_from_slice(b[l].as_slice());
            }
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat parameter length", self.num_params(), flat.len())?;
        let mut off = 0;
        for l in 0..self.weights.len() {
            let n = self.weights[l].len();
            self.weights[l].as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
            if let Some(b) = &mut self.biases {
                let n = b[l].len();
                b[l].as_mut_slice().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// 1 for trainable entries, 0 for entries pinned to zero by the branch split.
    pub fn param_mask(&self) -> Option<Vec<f64>> {
        let b = self.branch?;
        let d_x = self.input_split.0;
        let mut mask = vec![1.0; self.num_params()];
        let w0 = &self.weights[0];
        for c in 0..w0.ncols() {
            for r in 0..w0.nrows() {
                if (r < b.x_units) != (c < d_x) {
                    mask[c * w0.nrows() + r] = 0.0;
                }
            }
        }
        Some(mask)
    }

    fn check_batch(&self, z: &DMatrix<f64>, mask: Option<&DropoutMask>) -> Result<()> {
        check_dim("critic input width", self.input_dim(), z.ncols())?;
        if let Some(m) = mask {
            m.check(self, z.nrows())?;
        }
        Ok(())
    }

    fn trace(&self, z_rows: &DMatrix<f64>, mask: Option<&DropoutMask>) -> Trace {
        let n_hidden = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut slopes = Vec::with_capacity(n_hidden);
        inputs.push(z_rows.transpose());
        for l in 0..n_hidden {
            let mut a = &self.weights[l] * &inputs[l];
            if let Some(b) = &self.biases {
                for mut col in a.column_iter_mut() {
                    col += &b[l];
                }
            }
            let mut slope = DMatrix::zeros(a.nrows(), a.ncols());
            for (v, s) in a.as_mut_slice().iter_mut().zip(slope.as_mut_slice()) {
                let (h, d) = self.activation.apply(*v);
                *v = h;
                *s = d;
            }
            if let Some(m) = mask {
                a.component_mul_assign(&m.masks[l]);
                slope.component_mul_assign(&m.masks[l]);
            }
            slopes.push(slope);
            inputs.push(a);
        }
        let mut out = &self.weights[n_hidden] * &inputs[n_hidden];
        if let Some(b) = &self.biases {
            out.add_scalar_mut(b[n_hidden][0]);
        }
        let values = DVector::from_column_slice(out.as_slice());
        Trace {
            inputs,
            slopes,
            values,
        }
    }

    /// Backward signals `t_l = ∂f/∂a_l` for each hidden layer, column-wise.
    fn backward_signals(&self, trace: &Trace) -> Vec<DMatrix<f64>> {
        let n_hidden = self.weights.len() - 1;
        let n = trace.values.len();
        let readout = self.weights[n_hidden].row(0).transpose();
        let mut signals = vec![DMatrix::zeros(0, 0); n_hidden];
        let mut t = DMatrix::from_fn(readout.len(), n, |r, _| readout[r]);
        t.component_mul_assign(&trace.slopes[n_hidden - 1]);
        signals[n_hidden - 1] = t;
        for l in (0..n_hidden - 1).rev() {
            let mut t = self.weights[l + 1].tr_mul(&signals[l + 1]);
            t.component_mul_assign(&trace.slopes[l]);
            signals[l] = t;
        }
        signals
    }

    /// Critic values for a row-wise batch.
    pub fn forward(&self, z: &DMatrix<f64>, mask: Option<&DropoutMask>) -> Result<DVector<f64>> {
        self.check_batch(z, mask)?;
        Ok(self.trace(z, mask).values)
    }

    /// Critic value at a single input, dropout disabled.
    pub fn forward_row(&self, z: &[f64]) -> Result<f64> {
        let z = DMatrix::from_row_slice(1, z.len(), z);
        Ok(self.forward(&z, None)?[0])
    }

    /// Gradients `∂f/∂z` for each row of a batch, returned row-wise.
    pub fn input_gradient(
        &self,
        z: &DMatrix<f64>,
        mask: Option<&DropoutMask>,
    ) -> Result<DMatrix<f64>> {
        self.check_batch(z, mask)?;
        let trace = self.trace(z, mask);
        let signals = self.backward_signals(&trace);
        Ok(signals[0].tr_mul(&self.weights[0]))
    }

    pub fn input_gradient_row(&self, z: &[f64]) -> Result<Vec<f64>> {
        let z = DMatrix::from_row_slice(1, z.len(), z);
        Ok(self.input_gradient(&z, None)?.row(0).iter().copied().collect())
    }

    /// Smoothed empirical SIC loss of the critic and its parameter gradient.
    ///
    /// `L̂ = −(mean f(joint) − mean f(prod)) + (λ/2) Σ_j (g_j + ε)/η_j + (ρ/2) mean f(prod)²`
    /// with `g_j` the mean squared `x_j`-gradient on the product batch.
    pub fn loss_gradients(
        &self,
        eta: &[f64],
        joint: &DMatrix<f64>,
        prod: &DMatrix<f64>,
        weights: PenaltyWeights,
        masks: Option<(&DropoutMask, &DropoutMask)>,
    ) -> Result<LossGradients> {
        let PenaltyWeights { lambda, rho, eps } = weights;
        let (d_x, _) = self.input_split;
        check_dim("η length", d_x, eta.len())?;
        if let Some((j, &v)) = eta.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(SicError::Precondition(format!(
                "η must be strictly positive, η[{j}] = {v}"
            )));
        }
        if !(lambda >= 0.0 && rho >= 0.0) || !(eps > 0.0) {
            return Err(SicError::Precondition(format!(
                "need λ, ρ ≥ 0 and ε > 0 (λ = {lambda}, ρ = {rho}, ε = {eps})"
            )));
        }
        self.check_batch(joint, masks.map(|m| m.0))?;
        self.check_batch(prod, masks.map(|m| m.1))?;
        check_dim("product batch rows", joint.nrows(), prod.nrows())?;
        let n = joint.nrows();
        if n == 0 {
            return Err(SicError::Precondition("empty minibatch".into()));
        }
        let inv_n = 1.0 / n as f64;
        let n_hidden = self.weights.len() - 1;

        let tj = self.trace(joint, masks.map(|m| m.0));
        let tp = self.trace(prod, masks.map(|m| m.1));
        let sj = self.backward_signals(&tj);
        let sp = self.backward_signals(&tp);

        // input gradients on the product batch, column-wise (d_in × N)
        let v = self.weights[0].tr_mul(&sp[0]);
        let mut sq_grads = vec![0.0; d_x];
        for col in v.column_iter() {
            for j in 0..d_x {
                sq_grads[j] += col[j] * col[j];
            }
        }
        for g in &mut sq_grads {
            *g *= inv_n;
        }

        let mean_joint = tj.values.sum() * inv_n;
        let mean_prod = tp.values.sum() * inv_n;
        let delta = mean_joint - mean_prod;
        let penalty = crate::simplex::penalty_eta_part(&sq_grads, eta, lambda, eps);
        let l2 = 0.5 * rho * tp.values.norm_squared() * inv_n;
        for (name, val) in [("mean difference", delta), ("gradient penalty", penalty), ("L2 penalty", l2)] {
            if !val.is_finite() {
                return Err(SicError::NonFinite { term: name.into() });
            }
        }
        let loss = -delta + penalty + l2;

        // ∂L/∂f per row
        let cj = DVector::from_element(n, -inv_n);
        let cp = tp.values.map(|f| inv_n + rho * f * inv_n);

        // penalty cotangent on ∇_z f, pushed forward through frozen patterns
        let mut tangent = DMatrix::zeros(v.nrows(), n);
        for (mut out, col) in tangent.column_iter_mut().zip(v.column_iter()) {
            for j in 0..d_x {
                out[j] = lambda * inv_n * col[j] / eta[j];
            }
        }

        let mut grads = Vec::with_capacity(self.num_params());
        for l in 0..=n_hidden {
            let is_readout = l == n_hidden;
            // joint batch contribution
            let mut scaled_j = tj.inputs[l].clone();
            for (mut col, &c) in scaled_j.column_iter_mut().zip(cj.iter()) {
                col *= c;
            }
            let mut scaled_p = tp.inputs[l].clone();
            for (mut col, &c) in scaled_p.column_iter_mut().zip(cp.iter()) {
                col *= c;
            }
            scaled_p += &tangent;

            let (gw, gb) = if is_readout {
                let gw = DMatrix::from_row_slice(
                    1,
                    scaled_j.nrows(),
                    (scaled_j.column_sum() + scaled_p.column_sum()).as_slice(),
                );
                let gb = DVector::from_element(1, cj.sum() + cp.sum());
                (gw, gb)
            } else {
                let gw = &sj[l] * scaled_j.transpose() + &sp[l] * scaled_p.transpose();
                let gb = &sj[l] * &cj + &sp[l] * &cp;
                (gw, gb)
            };
            grads.extend_from_slice(gw.as_slice());
            if self.biases.is_some() {
                grads.extend_from_slice(gb.as_slice());
            }

            if !is_readout {
                let mut next = &self.weights[l] * &tangent;
                next.component_mul_assign(&tp.slopes[l]);
                tangent = next;
            }
        }
        if let Some(mask) = self.param_mask() {
            for (g, m) in grads.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(SicError::NonFinite {
                term: "parameter gradient".into(),
            });
        }
        Ok(LossGradients {
            loss,
            grads,
            sq_grads,
            delta,
        })
    }
}

/// Concatenates `x` (N × d_x) and `y` (N × d_y) column-wise.
pub fn concat_inputs(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_dim("row count of x and y", x.nrows(), y.nrows())?;
    let mut z = DMatrix::zeros(x.nrows(), x.ncols() + y.ncols());
    z.columns_mut(0, x.ncols()).copy_from(x);
    z.columns_mut(x.ncols(), y.ncols()).copy_from(y);
    Ok(z)
}

#[derive(Serialize, Deserialize)]
struct NetRecord {
    input_split: (usize, usize),
    activation: Activation,
    dropout: f64,
    #[serde(default)]
    branch: Option<BranchSplit>,
    #[serde(with = "matrix_serde::matrix_list")]
    weights: Vec<DMatrix<f64>>,
    #[serde(default)]
    biases: Option<Vec<Vec<f64>>>,
}

impl From<CriticNet> for NetRecord {
    fn from(net: CriticNet) -> Self {
        NetRecord {
            input_split: net.input_split,
            activation: net.activation,
            dropout: net.dropout,
            branch: net.branch,
            weights: net.weights,
            biases: net
                .biases
                .map(|b| b.into_iter().map(|v| v.as_slice().to_vec()).collect()),
        }
    }
}

impl TryFrom<NetRecord> for CriticNet {
    type Error = SicError;

    fn try_from(r: NetRecord) -> Result<Self> {
        let net = CriticNet {
            weights: r.weights,
            biases: r
                .biases
                .map(|b| b.into_iter().map(DVector::from_vec).collect()),
            activation: r.activation,
            dropout: r.dropout,
            input_split: r.input_split,
            branch: r.branch,
        };
        net.validate()?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn identity_net() -> CriticNet {
        // 2 → 2 → 1 with first layer = I, readout = e_1
        CriticNet::from_weights(
            vec![DMatrix::identity(2, 2), DMatrix::from_row_slice(1, 2, &[1.0, 0.0])],
            Activation::Relu,
            1,
            1,
        )
        .unwrap()
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn identity_net_values_and_gradients() {
        let net = identity_net();
        assert_eq!(net.forward_row(&[2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(net.forward_row(&[-2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(net.input_gradient_row(&[2.0, 3.0]).unwrap(), vec![1.0, 0.0]);
        // subgradient at the kink is zero
        assert_eq!(net.input_gradient_row(&[0.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_names_widths() {
        let net = identity_net();
        let err = net.forward_row(&[1.0, 2.0, 3.0]).unwrap_err();
        match err {
            SicError::DimensionMismatch {
                expected, actual, ..
            } => assert_eq!((expected, actual), (2, 3)),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn batch_equals_rowwise() {
        let net = CriticNet::new(&Architecture::homogeneous(vec![7, 5]), 3, 1, 4).unwrap();
        let z = random_rows(6, 4, 1);
        let f = net.forward(&z, None).unwrap();
        let g = net.input_gradient(&z, None).unwrap();
        for i in 0..6 {
            let row: Vec<f64> = z.row(i).iter().copied().collect();
            assert!((net.forward_row(&row).unwrap() - f[i]).abs() < 1e-14);
            let gr = net.input_gradient_row(&row).unwrap();
            for j in 0..4 {
                assert!((gr[j] - g[(i, j)]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn homogeneity_and_euler_identity() {
        let net = CriticNet::new(&Architecture::homogeneous(vec![16, 16]), 4, 1, 9).unwrap();
        let z = random_rows(10, 5, 2);
        let f = net.forward(&z, None).unwrap();
        let f2 = net.forward(&(&z * 2.0), None).unwrap();
        let g = net.input_gradient(&z, None).unwrap();
        for i in 0..10 {
            assert!((f2[i] - 2.0 * f[i]).abs() <= 1e-12 * (1.0 + f[i].abs()));
            let euler: f64 = (0..5).map(|j| g[(i, j)] * z[(i, j)]).sum();
            assert!((euler - f[i]).abs() <= 1e-10 * (1.0 + f[i].abs()));
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for arch in [Architecture::homogeneous(vec![8, 6]), Architecture::big_critic()] {
            let mut arch = arch;
            arch.dropout = 0.0;
            if arch.branch.is_some() {
                arch.hidden = vec![10, 6];
                arch.branch = Some(BranchSplit { x_units: 7, y_units: 3 });
            }
            let net = CriticNet::new(&arch, 3, 1, 11).unwrap();
            let z = random_rows(5, 4, 3);
            let g = net.input_gradient(&z, None).unwrap();
            let h = 1e-5;
            for i in 0..5 {
                for j in 0..4 {
                    let mut zp = z.clone();
                    zp[(i, j)] += h;
                    let mut zm = z.clone();
                    zm[(i, j)] -= h;
                    let fd = (net.forward(&zp, None).unwrap()[i] - net.forward(&zm, None).unwrap()[i])
                        / (2.0 * h);
                    assert!((fd - g[(i, j)]).abs() <= 1e-4 * g[(i, j)].abs().max(1e-3));
                }
            }
        }
    }

    #[test]
    fn zero_net_loss_is_smoothing_constant() {
        let mut net = CriticNet::new(&Architecture::homogeneous(vec![4]), 2, 1, 0).unwrap();
        let zeros = vec![0.0; net.num_params()];
        net.set_params(&zeros).unwrap();
        let joint = random_rows(5, 3, 1);
        let prod = random_rows(5, 3, 2);
        let w = PenaltyWeights { lambda: 2.0, rho: 0.5, eps: 1e-3 };
        let eta = [0.25, 0.75];
        let out = net.loss_gradients(&eta, &joint, &prod, w, None).unwrap();
        let expected = 0.5 * 2.0 * (1e-3 / 0.25 + 1e-3 / 0.75);
        assert!((out.loss - expected).abs() < 1e-15);
        assert!(out.grads.iter().all(|&g| g == 0.0));
        assert_eq!(out.sq_grads, vec![0.0, 0.0]);
    }

    #[test]
    fn identical_batches_have_zero_mean_difference() {
        let net = CriticNet::new(&Architecture::homogeneous(vec![5]), 2, 1, 3).unwrap();
        let z = random_rows(8, 3, 5);
        let w = PenaltyWeights { lambda: 1.0, rho: 0.1, eps: 1e-6 };
        let eta = [0.5, 0.5];
        let out = net.loss_gradients(&eta, &z, &z, w, None).unwrap();
        assert!(out.delta.abs() < 1e-15);
        let f = net.forward(&z, None).unwrap();
        let penalty = crate::simplex::penalty_eta_part(&out.sq_grads, &eta, 1.0, 1e-6)
            + 0.05 * f.norm_squared() / 8.0;
        assert!((out.loss - penalty).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_positive_eta() {
        let net = CriticNet::new(&Architecture::homogeneous(vec![5]), 2, 1, 3).unwrap();
        let z = random_rows(4, 3, 5);
        let w = PenaltyWeights { lambda: 1.0, rho: 0.1, eps: 1e-6 };
        let err = net.loss_gradients(&[1.0, 0.0], &z, &z, w, None).unwrap_err();
        assert!(matches!(err, SicError::Precondition(_)));
    }

    #[test]
    fn branch_split_keeps_cross_weights_zero() {
        let mut arch = Architecture::big_critic();
        arch.hidden = vec![6, 4];
        arch.branch = Some(BranchSplit { x_units: 4, y_units: 2 });
        let net = CriticNet::new(&arch, 3, 1, 2).unwrap();
        let w0 = &net.weights()[0];
        for r in 0..6 {
            for c in 0..4 {
                if (r < 4) != (c < 3) {
                    assert_eq!(w0[(r, c)], 0.0);
                }
            }
        }
        let joint = random_rows(5, 4, 1);
        let prod = random_rows(5, 4, 2);
        let w = PenaltyWeights { lambda: 1.0, rho: 0.1, eps: 1e-6 };
        let out = net.loss_gradients(&[0.2, 0.3, 0.5], &joint, &prod, w, None).unwrap();
        let mask = net.param_mask().unwrap();
        for (g, m) in out.grads.iter().zip(mask) {
            if m == 0.0 {
                assert_eq!(*g, 0.0);
            }
        }
    }

    #[test]
    fn dropout_mask_applies_to_values_and_gradients() {
        let net = CriticNet::new(&Architecture::homogeneous(vec![6, 6]), 2, 1, 1)
            .unwrap()
            .with_dropout(0.5)
            .unwrap();
        let z = random_rows(4, 3, 8);
        let mask = DropoutMask::sample(&net, 4, 42);
        assert_eq!(mask, DropoutMask::sample(&net, 4, 42));
        let f = net.forward(&z, Some(&mask)).unwrap();
        let g = net.input_gradient(&z, Some(&mask)).unwrap();
        // homogeneity holds for a fixed mask as well
        for i in 0..4 {
            let euler: f64 = (0..3).map(|j| g[(i, j)] * z[(i, j)]).sum();
            assert!((euler - f[i]).abs() < 1e-12 * (1.0 + f[i].abs()));
        }
        let wrong = DropoutMask::sample(&net, 3, 42);
        assert!(net.forward(&z, Some(&wrong)).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let net = CriticNet::new(&Architecture::big_critic(), 5, 1, 7).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: CriticNet = serde_json::from_str(&json).unwrap();
        assert_eq!(net, back);
    }
}
