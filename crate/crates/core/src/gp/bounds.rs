//! Closed-form bounds on the posterior of a GP trained on a
//! `tau`-discretization (one training input within `tau`, in 1-norm, of
//! every query).

use serde::{Deserialize, Serialize};

use super::{GpError, GpModel};
use crate::domain::BoxDomain;

/// `sigma_tilde = n_x * sqrt(2 L_k tau + 2 N L_k tau |K^-1|_F max k)`.
///
/// Upper-bounds the summed posterior standard deviation at any query
/// within `tau` of a training input.
pub fn variance_upper_bound(model: &GpModel, tau: f64) -> Result<f64, GpError> {
    if tau.is_nan() || tau < 0.0 {
        return Err(GpError::NegativeTau(tau));
    }
    let lk = model.kernel_lipschitz();
    let n = model.len() as f64;
    let inner = 2.0 * lk * tau + 2.0 * n * lk * tau * model.k_inv_frobenius() * model.kernel().max_value();
    Ok(model.n_x() as f64 * inner.sqrt())
}

/// Per output dimension: `max_i y_i + sqrt(N) L_k tau |K^-1 y|_2`.
pub fn mean_upper_bound(model: &GpModel, tau: f64) -> Result<Vec<f64>, GpError> {
    if tau.is_nan() || tau < 0.0 {
        return Err(GpError::NegativeTau(tau));
    }
    let slope = (model.len() as f64).sqrt() * model.kernel_lipschitz() * tau;
    Ok(model.output_max().iter().zip(model.k_inv_y_norm()).map(|(y, a)| y + slope * a).collect())
}

/// Ingredients of the probabilistic uniform error bound
/// `|g(z) - mu(z)| <= sqrt(beta) sigma(z) + gamma` on a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformErrorBound {
    /// Covering gap the bound was evaluated at.
    pub tau: f64,
    /// `ln M(tau, Z)`; kept in log form since `M` overflows for fine gaps.
    pub log_covering: f64,
    pub beta: f64,
    pub sqrt_beta: f64,
    /// Posterior-mean Lipschitz bound per output dimension.
    pub l_mu: Vec<f64>,
    /// Modulus of continuity of the posterior standard deviation at `tau`.
    pub omega: f64,
    pub gamma_per_dim: Vec<f64>,
    /// Sum of `gamma_per_dim`: the additive slack for the 1-norm error.
    pub gamma: f64,
}

/// Cells per side so that every point of a side of length `side` lies
/// within `tau / dim` of a cell center.
pub(crate) fn cells_per_side(side: f64, tau: f64, dim: usize) -> f64 {
    (side * dim as f64 / (2.0 * tau)).ceil().max(1.0)
}

/// `ln M` for the axis-aligned cover with per-dimension step `2 tau / D`.
pub fn log_covering_number(domain: &BoxDomain, tau: f64) -> f64 {
    domain.sides().iter().map(|s| cells_per_side(*s, tau, domain.dim()).ln()).sum()
}

/// Evaluates `beta(tau) = 2 ln(M(tau, Z) / delta)` and
/// `gamma(tau) = (L_mu + L_f) tau + sqrt(beta) omega(tau)` for noise-free
/// observations.
pub fn uniform_error_beta(
    model: &GpModel,
    domain: &BoxDomain,
    delta: f64,
    tau: f64,
    l_f: f64,
) -> Result<UniformErrorBound, GpError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(GpError::InvalidProbability(delta));
    }
    if !(tau > 0.0) {
        return Err(GpError::NonPositiveTau(tau));
    }
    if domain.dim() != model.input_dim() {
        return Err(GpError::DimensionMismatch { expected: model.input_dim(), got: domain.dim() });
    }
    let lk = model.kernel_lipschitz();
    let n = model.len() as f64;
    let l_mu: Vec<f64> = model.k_inv_y_norm().iter().map(|a| lk * n.sqrt() * a).collect();
    let omega = (2.0 * tau * lk * (1.0 + n * model.k_inv_frobenius() * model.kernel().max_value())).sqrt();
    let log_covering = log_covering_number(domain, tau);
    let beta = (2.0 * (log_covering - delta.ln())).max(0.0);
    let sqrt_beta = beta.sqrt();
    let gamma_per_dim: Vec<f64> = l_mu.iter().map(|l| (l + l_f) * tau + sqrt_beta * omega).collect();
    let gamma = gamma_per_dim.iter().sum();
    Ok(UniformErrorBound { tau, log_covering, beta, sqrt_beta, l_mu, omega, gamma_per_dim, gamma })
}
