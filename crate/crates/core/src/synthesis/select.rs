use serde::{Deserialize, Serialize};

use super::SynthesisError;
use crate::env::LipschitzBundle;
use crate::gp::{Dataset, GpSummary};
use crate::safety_index::{SafetyIndexParams, SafetyMeasure};

/// Inputs of the discretization condition on `tau_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauConditionInputs {
    pub tau_x: f64,
    pub infsup_lb: f64,
    pub lipschitz: LipschitzBundle,
    pub beta_f: f64,
    pub n_x: usize,
    pub grid_size: usize,
    pub gp: GpSummary,
}

/// Which summand of `1 + L_f + 2 beta_f n_x sqrt(2 L_k) sqrt(1 + |X| |K^-1| max k)`
/// is largest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DominantTerm {
    Unit,
    DynamicsLipschitz,
    Posterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauCondition {
    pub ok: bool,
    /// Largest admissible `tau_x`.
    pub rhs: f64,
    pub posterior_term: f64,
    pub dominant: DominantTerm,
}

/// `tau_x <= min{1, [lb / (2 (L_dx + L_ddx) (1 + L_f + 2 beta_f n_x sqrt(2 L_k)
/// sqrt(1 + |X| |K^-1| max k)))]^2}`, false whenever `lb <= 0`.
pub fn check_tau_condition(inp: &TauConditionInputs) -> TauCondition {
    let l = &inp.lipschitz;
    let posterior_term = 2.0
        * inp.beta_f
        * inp.n_x as f64
        * (2.0 * inp.gp.kernel_lipschitz).sqrt()
        * (1.0 + inp.grid_size as f64 * inp.gp.k_inv_frobenius * inp.gp.max_kernel).sqrt();
    let dominant = if posterior_term >= l.l_f.max(1.0) {
        DominantTerm::Posterior
    } else if l.l_f >= 1.0 {
        DominantTerm::DynamicsLipschitz
    } else {
        DominantTerm::Unit
    };
    let rhs = if inp.infsup_lb > 0.0 {
        let ratio = inp.infsup_lb / (2.0 * (l.l_dx + l.l_ddx) * (1.0 + l.l_f + posterior_term));
        (ratio * ratio).min(1.0)
    } else {
        0.0
    };
    TauCondition { ok: inp.infsup_lb > 0.0 && inp.tau_x <= rhs, rhs, posterior_term, dominant }
}

/// Denominator used for the per-point bound `Upsilon_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpsilonForm {
    /// `(d_dot_GP - d_dot_i) - (L_dx + L_ddx)(tau_x + L_f tau_x + 2 beta_f sigma_tilde)`.
    Certified,
    /// `d_dot_GP - d_dot_i`, without the discretization and posterior slack.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub params: SafetyIndexParams,
    pub upsilon: Vec<f64>,
    pub upsilon_max: f64,
    pub argmax: usize,
}

/// Inputs shared by every row of the gain selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KSelectionInputs {
    pub lipschitz: LipschitzBundle,
    pub tau_x: f64,
    pub beta_f: f64,
    pub sigma_tilde: f64,
    pub eta: f64,
    pub d_min: f64,
    /// Relative margin above `max{1, max_i Upsilon_i}`.
    pub margin: f64,
    pub form: UpsilonForm,
}

/// `Upsilon_i = (eta + d_i - d_GP,i) / denominator_i`; `Err` carries the
/// denominator when it is not positive.
pub fn upsilon(inp: &KSelectionInputs, now: SafetyMeasure, next: SafetyMeasure) -> Result<f64, f64> {
    let l = &inp.lipschitz;
    let mut denom = next.d_dot - now.d_dot;
    if inp.form == UpsilonForm::Certified {
        denom -= (l.l_dx + l.l_ddx) * (inp.tau_x + l.l_f * inp.tau_x + 2.0 * inp.beta_f * inp.sigma_tilde);
    }
    if denom > 0.0 {
        Ok((inp.eta + now.d - next.d) / denom)
    } else {
        Err(denom)
    }
}

/// Picks `sigma = 0, n = 1, k = (1 + margin) max{1, max_i Upsilon_i}`.
pub fn select_k<M: Fn(&[f64]) -> SafetyMeasure>(
    dataset: &Dataset,
    measure: M,
    inp: &KSelectionInputs,
) -> Result<KSelection, SynthesisError> {
    if dataset.is_empty() {
        return Err(SynthesisError::InvalidConfig("empty dataset".into()));
    }
    let upsilon = dataset
        .samples()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            upsilon(inp, measure(&s.state), measure(&s.next_state))
                .map_err(|value| SynthesisError::NonPositiveDenominator { index: i, value })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let (argmax, upsilon_max) =
        upsilon.iter().copied().enumerate().fold((0, f64::NEG_INFINITY), |a, (i, v)| if v > a.1 { (i, v) } else { a });
    let k = (1.0 + inp.margin) * upsilon_max.max(1.0);
    Ok(KSelection { params: SafetyIndexParams::linear(k, inp.eta, inp.d_min), upsilon, upsilon_max, argmax })
}
