//! Energy-style safety index `phi = sigma + d_min^n - d^n - k * d_dot` and
//! the probabilistic one-step bound
//! `U_f(x, u) = phi(mu_f(x, u)) + L_phi * beta_f * sigma_f(x, u)`.
//!
//! The index is evaluated through a caller-supplied measure map
//! `x -> (d, d_dot)`, so nothing here depends on a particular environment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{GpError, GpModel};

#[derive(Debug, Error)]
pub enum SafetyError {
    #[error("invalid safety index parameters: {0}")]
    InvalidParams(String),
    #[error("distance {d} is negative, undefined for fractional exponent {n}")]
    NegativeDistance { d: f64, n: f64 },
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Parameters `{sigma, n, k, eta, d_min}` of the safety index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyIndexParams {
    pub sigma: f64,
    pub n: f64,
    pub k: f64,
    pub eta: f64,
    pub d_min: f64,
}

impl SafetyIndexParams {
    /// The `sigma = 0, n = 1` family produced by synthesis.
    pub fn linear(k: f64, eta: f64, d_min: f64) -> Self {
        Self { sigma: 0.0, n: 1.0, k, eta, d_min }
    }

    pub fn validate(&self) -> Result<(), SafetyError> {
        let ok = self.sigma.is_finite()
            && self.sigma >= 0.0
            && self.n.is_finite()
            && self.n > 0.0
            && self.k.is_finite()
            && self.k >= 0.0
            && self.eta.is_finite()
            && self.eta >= 0.0
            && self.d_min.is_finite()
            && self.d_min > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SafetyError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Distance to the constraint boundary and its rate of change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyMeasure {
    pub d: f64,
    pub d_dot: f64,
}

impl SafetyMeasure {
    /// The raw constraint `phi_0 = d_min - d`; safe iff nonpositive.
    pub fn constraint(&self, d_min: f64) -> f64 {
        d_min - self.d
    }
}

fn power(d: f64, n: f64) -> Result<f64, SafetyError> {
    if n.fract() == 0.0 && n.abs() < i32::MAX as f64 {
        return Ok(d.powi(n as i32));
    }
    if d < 0.0 {
        return Err(SafetyError::NegativeDistance { d, n });
    }
    Ok(d.powf(n))
}

pub fn phi(params: &SafetyIndexParams, m: SafetyMeasure) -> Result<f64, SafetyError> {
    Ok(params.sigma + power(params.d_min, params.n)? - power(m.d, params.n)? - params.k * m.d_dot)
}

/// 1-norm Lipschitz constant of `phi` as a function of the state, given
/// 1-norm Lipschitz constants of `d` and `d_dot`. `d_max` bounds `d` on the
/// domain and only matters for `n > 1`.
pub fn phi_lipschitz(params: &SafetyIndexParams, l_dx: f64, l_ddx: f64, d_max: f64) -> Result<f64, SafetyError> {
    if !(params.n > 0.0) {
        return Err(SafetyError::InvalidParams(format!("exponent n must be positive, got {}", params.n)));
    }
    if l_dx < 0.0 || l_ddx < 0.0 {
        return Err(SafetyError::InvalidParams("Lipschitz constants must be nonnegative".into()));
    }
    let slope = if params.n >= 1.0 {
        params.n * d_max.powf(params.n - 1.0)
    } else {
        params.n * params.d_min.powf(params.n - 1.0)
    };
    Ok(slope.max(params.k) * (l_dx + l_ddx))
}

/// `U_f` split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperBound {
    /// `phi` at the posterior mean of the next state.
    pub phi_mean: f64,
    /// `L_phi * beta_f * sigma_f`.
    pub margin: f64,
    pub sigma: f64,
}

impl UpperBound {
    pub fn value(&self) -> f64 {
        self.phi_mean + self.margin
    }
}

/// Bundles what is needed to evaluate `U_f` and the safe-control predicate.
#[derive(Clone, Copy)]
pub struct SafetyCheck<'a, M> {
    pub model: &'a GpModel,
    pub params: SafetyIndexParams,
    pub measure: M,
    pub l_phi: f64,
}

impl<'a, M> SafetyCheck<'a, M>
where
    M: Fn(&[f64]) -> SafetyMeasure,
{
    pub fn new(model: &'a GpModel, params: SafetyIndexParams, measure: M, l_phi: f64) -> Self {
        Self { model, params, measure, l_phi }
    }

    pub fn phi(&self, x: &[f64]) -> Result<f64, SafetyError> {
        phi(&self.params, (self.measure)(x))
    }

    /// `U_f` at several controls for one state. With `skip_at` set, a
    /// control whose mean term alone reaches it is returned as `None`
    /// without a variance solve, since `U_f >= phi(mu)`.
    pub fn upper_bounds(
        &self,
        x: &[f64],
        controls: &[Vec<f64>],
        skip_at: Option<f64>,
    ) -> Result<Vec<Option<UpperBound>>, SafetyError> {
        let mut kstars = Vec::with_capacity(controls.len());
        let mut phis = Vec::with_capacity(controls.len());
        for u in controls {
            let w = self.model.joint_input(x, u)?;
            let kstar = self.model.kstar(&w);
            phis.push(phi(&self.params, (self.measure)(&self.model.mean_from_kstar(&kstar)))?);
            kstars.push(kstar);
        }
        let needed: Vec<usize> = (0..controls.len()).filter(|&i| skip_at.is_none_or(|t| phis[i] < t)).collect();
        let picked: Vec<Vec<f64>> = needed.iter().map(|&i| std::mem::take(&mut kstars[i])).collect();
        let stds = self.model.std_batch(&picked);
        let mut out = vec![None; controls.len()];
        for (&i, std) in needed.iter().zip(stds) {
            let sigma = self.model.n_x() as f64 * std;
            out[i] = Some(UpperBound { phi_mean: phis[i], margin: self.l_phi * self.model.beta_f() * sigma, sigma });
        }
        Ok(out)
    }

    pub fn upper_bound(&self, x: &[f64], u: &[f64]) -> Result<UpperBound, SafetyError> {
        let p = self.model.predict(x, u)?;
        Ok(UpperBound {
            phi_mean: phi(&self.params, (self.measure)(&p.mean))?,
            margin: self.l_phi * self.model.beta_f() * p.sigma,
            sigma: p.sigma,
        })
    }

    /// Right-hand side `max(phi(x) - eta, 0)` of the safe-control condition,
    /// evaluated at the observed current state.
    pub fn threshold(&self, x: &[f64]) -> Result<f64, SafetyError> {
        Ok((self.phi(x)? - self.params.eta).max(0.0))
    }

    pub fn is_safe(&self, x: &[f64], u: &[f64]) -> Result<bool, SafetyError> {
        Ok(self.upper_bound(x, u)?.value() < self.threshold(x)?)
    }
}

pub fn u_f_bound<M: Fn(&[f64]) -> SafetyMeasure>(
    model: &GpModel,
    params: &SafetyIndexParams,
    measure: M,
    x: &[f64],
    u: &[f64],
    l_phi: f64,
) -> Result<f64, SafetyError> {
    Ok(SafetyCheck::new(model, *params, measure, l_phi).upper_bound(x, u)?.value())
}

/// `U_f(x, u) < max(phi(x) - eta, 0)`, strict.
pub fn is_safe_control<M: Fn(&[f64]) -> SafetyMeasure>(
    model: &GpModel,
    params: &SafetyIndexParams,
    measure: M,
    x: &[f64],
    u: &[f64],
    l_phi: f64,
) -> Result<bool, SafetyError> {
    SafetyCheck::new(model, *params, measure, l_phi).is_safe(x, u)
}
