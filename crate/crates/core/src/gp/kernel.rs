use serde::{Deserialize, Serialize};

use super::GpError;

/// Isotropic squared-exponential covariance
/// `k(w, w') = signal_variance * exp(-|w - w'|_2^2 / (2 l^2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename = "squared_exponential")]
pub struct Kernel {
    pub signal_variance: f64,
    pub lengthscale: f64,
}

impl Kernel {
    pub fn squared_exponential(signal_variance: f64, lengthscale: f64) -> Result<Self, GpError> {
        let k = Kernel { signal_variance, lengthscale };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.lengthscale.is_finite() && self.lengthscale > 0.0) {
            return Err(GpError::InvalidHyperparameter(format!(
                "lengthscale must be positive and finite, got {}",
                self.lengthscale
            )));
        }
        if !(self.signal_variance.is_finite() && self.signal_variance >= 0.0) {
            return Err(GpError::InvalidHyperparameter(format!(
                "signal variance must be nonnegative and finite, got {}",
                self.signal_variance
            )));
        }
        Ok(())
    }

    /// Kernel value from a precomputed squared Euclidean distance.
    #[inline]
    pub fn from_sq_distance(&self, sq: f64) -> f64 {
        self.signal_variance * (-0.5 * sq / (self.lengthscale * self.lengthscale)).exp()
    }

    /// Unchecked evaluation for the hot path; inputs are validated at the
    /// model boundary.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.from_sq_distance(sq)
    }

    pub fn try_eval(&self, a: &[f64], b: &[f64]) -> Result<f64, GpError> {
        if a.len() != b.len() {
            return Err(GpError::DimensionMismatch { expected: a.len(), got: b.len() });
        }
        if !a.iter().chain(b).all(|v| v.is_finite()) {
            return Err(GpError::NonFinite("kernel input"));
        }
        Ok(self.eval(a, b))
    }

    /// `max_{w,w'} k(w, w')`, attained on the diagonal.
    pub fn max_value(&self) -> f64 {
        self.signal_variance
    }

    /// Lipschitz constant of `k(., w')` with respect to the 1-norm.
    ///
    /// `|d/dr (s^2 exp(-r^2 / 2l^2))|` peaks at `r = l` with value
    /// `s^2 exp(-1/2) / l`; that bounds the Euclidean gradient, and the
    /// 1-norm bound follows from `|.|_2 <= |.|_1`.
    pub fn lipschitz(&self) -> f64 {
        self.signal_variance * (-0.5f64).exp() / self.lengthscale
    }
}
