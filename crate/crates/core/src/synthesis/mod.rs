//! Offline stage: discretize the state space, lower-bound the inf-sup of
//! the one-step change of `d_dot`, build the dataset, fit the model, check
//! the discretization condition and select the safety-index gain.

mod data;
pub mod grid;
mod infsup;
mod select;

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use data::{build_dataset, BuiltDataset};
pub use grid::{discretize, grid_size, Grid, DEFAULT_GRID_CAP};
pub use infsup::{control_grid, estimate_infsup, ControlSampler, ControlSelection, InfSupEstimate};
pub use select::{
    check_tau_condition, select_k, upsilon, DominantTerm, KSelection, KSelectionInputs, TauCondition,
    TauConditionInputs, UpsilonForm,
};

use crate::env::{EnvConfig, Environment, LipschitzBundle};
use crate::gp::{variance_upper_bound, Calibration, Dataset, GpError, GpModel, GpSummary, Kernel};
use crate::parallel::Exec;
use crate::safety_index::{phi_lipschitz, SafetyCheck, SafetyError, SafetyIndexParams, SafetyMeasure};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid synthesis configuration: {0}")]
    InvalidConfig(String),
    #[error("grid at tau = {tau} has {count} points, above the cap of {cap}")]
    GridTooLarge { tau: f64, count: usize, cap: usize },
    #[error(
        "no control with positive one-step change of d_dot at grid point #{index} {point:?} \
         (best sampled {best:e}); the inf-sup assumption does not hold there"
    )]
    AssumptionViolation { index: usize, point: Vec<f64>, best: f64 },
    #[error("inf-sup lower bound {lower_bound:e} is not positive")]
    NonPositiveInfSup { lower_bound: f64 },
    #[error(
        "no sampled control at grid point #{index} {point:?} reaches delta d_dot > {required:e} \
         (best {best:e}); the Lipschitz slack or the inf-sup grid is too loose"
    )]
    ControlNotFound { index: usize, point: Vec<f64>, best: f64, required: f64 },
    #[error("denominator of the gain bound at dataset row {index} is {value:e}; certificate inputs are inconsistent")]
    NonPositiveDenominator { index: usize, value: f64 },
    #[error("synthesis failed: {reason}")]
    Failed { reason: String, iterations: Vec<IterationRecord> },
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
}

/// Whether the design must pass every condition of the certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthesisMode {
    /// Shrinks `tau_x` until the discretization condition holds and uses
    /// the Lipschitz-slack gain bound. Fails rather than emit an unproven
    /// certificate.
    #[default]
    Certified,
    /// One pass at `tau0`: the dataset threshold uses the sampled inf-sup
    /// without Lipschitz slack, the discretization condition is evaluated
    /// and reported but not enforced, and the gain bound drops the slack
    /// terms. The result is flagged as not certified.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShrinkSchedule {
    #[default]
    Halve,
    /// Multiply by 0.99.
    OnePercent,
}

impl ShrinkSchedule {
    pub fn factor(self) -> f64 {
        match self {
            ShrinkSchedule::Halve => 0.5,
            ShrinkSchedule::OnePercent => 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub env: EnvConfig,
    pub kernel: Kernel,
    pub delta: f64,
    pub eta: f64,
    pub tau0: f64,
    pub shrink: ShrinkSchedule,
    pub max_iterations: usize,
    pub grid_cap: usize,
    /// Largest dataset the dense GP is fitted on.
    pub dataset_cap: usize,
    /// Gap of the inf-sup grid; `None` reuses the `tau_x` grid.
    pub tilde_tau: Option<f64>,
    pub infsup_sampler: ControlSampler,
    pub dataset_sampler: ControlSampler,
    pub selection: ControlSelection,
    pub mode: SynthesisMode,
    pub gamma_fraction: f64,
    pub k_margin: f64,
    /// Replaces the environment's Lipschitz bundle when set.
    pub lipschitz: Option<LipschitzBundle>,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            kernel: Kernel { signal_variance: 1.0, lengthscale: 1.0 },
            delta: 0.01,
            eta: 0.05,
            tau0: 0.5,
            shrink: ShrinkSchedule::Halve,
            max_iterations: 64,
            grid_cap: DEFAULT_GRID_CAP,
            dataset_cap: 6000,
            tilde_tau: None,
            infsup_sampler: ControlSampler::default(),
            dataset_sampler: ControlSampler::default(),
            selection: ControlSelection::Best,
            mode: SynthesisMode::Certified,
            gamma_fraction: 0.01,
            k_margin: 0.01,
            lipschitz: None,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let bad = |m: &str| Err(SynthesisError::InvalidConfig(m.into()));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta must lie in (0, 1)");
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta must be nonnegative");
        }
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return bad("tau0 must be positive");
        }
        if !(self.k_margin > 0.0) {
            return bad("k_margin must be positive for the strict gain inequality");
        }
        if !(self.gamma_fraction > 0.0) {
            return bad("gamma_fraction must be positive");
        }
        if let Some(t) = self.tilde_tau {
            if !(t > 0.0) {
                return bad("tilde_tau must be positive");
            }
        }
        self.kernel.validate()?;
        self.infsup_sampler.validate()?;
        self.dataset_sampler.validate()
    }

    /// Copy with every random component reseeded from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        if let ControlSampler::Random { seed: s, .. } = &mut c.infsup_sampler {
            *s = seed;
        }
        if let ControlSampler::Random { seed: s, .. } = &mut c.dataset_sampler {
            *s = seed.wrapping_add(1);
        }
        if let ControlSelection::Random { seed: s, .. } = &mut c.selection {
            *s = seed.wrapping_add(2);
        }
        c
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Diagnostics of one candidate `tau_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub tau: f64,
    pub grid_size: usize,
    pub infsup_lb: Option<f64>,
    pub infsup_min_sample: Option<f64>,
    pub sigma_tilde: Option<f64>,
    pub beta_f: Option<f64>,
    pub tau_condition: Option<TauCondition>,
    pub note: String,
}

impl IterationRecord {
    fn new(tau: f64) -> Self {
        Self {
            tau,
            grid_size: 0,
            infsup_lb: None,
            infsup_min_sample: None,
            sigma_tilde: None,
            beta_f: None,
            tau_condition: None,
            note: String::new(),
        }
    }
}

/// All Lipschitz constants the certificate depends on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateLipschitz {
    pub l_f: f64,
    pub l_k: f64,
    pub l_dx: f64,
    pub l_ddx: f64,
    pub l_delta_ddot: f64,
    pub l_phi: f64,
}

/// Per-row check of `U_f(x_i, u_i) < max{phi(x_i) - eta, 0} - L_phi L_f tau_x
/// - L_phi tau_x - 2 L_phi beta_f sigma_tilde` over the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMarginReport {
    pub rows: usize,
    pub violations: usize,
    /// Smallest `rhs - U_f` over the rows.
    pub min_slack: f64,
    pub argmin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub crate_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisCertificate {
    pub environment: String,
    pub mode: SynthesisMode,
    /// True only when every certificate condition was verified.
    pub certified: bool,
    pub tau_x: f64,
    pub grid_size: usize,
    pub dataset_path: Option<String>,
    pub model_path: Option<String>,
    pub sigma_tilde: f64,
    pub infsup_lb: f64,
    pub infsup_min_sample: f64,
    pub tilde_tau: f64,
    pub tau_condition_ok: bool,
    pub tau_condition: TauCondition,
    pub upsilon_max: f64,
    pub params: SafetyIndexParams,
    pub lipschitz: CertificateLipschitz,
    pub beta_f: f64,
    pub delta: f64,
    pub kernel: Kernel,
    pub gp: GpSummary,
    pub dataset_margin: DatasetMarginReport,
    pub provenance: Provenance,
}

impl SynthesisCertificate {
    /// The safe-control predicate this certificate describes, with
    /// predicted states measured through `env`.
    pub fn safety_check<'a>(
        &self,
        model: &'a GpModel,
        env: &'a dyn Environment,
    ) -> SafetyCheck<'a, impl Fn(&[f64]) -> SafetyMeasure + Sync + 'a> {
        SafetyCheck::new(model, self.params, move |x: &[f64]| env.measure_prediction(x), self.lipschitz.l_phi)
    }

    /// Copy with gain `k` and the matching `L_phi`. The result is not a
    /// certificate for `k` and is marked uncertified unless `k` is unchanged.
    pub fn with_gain(&self, k: f64, d_max: f64) -> Result<Self, SafetyError> {
        let mut c = self.clone();
        c.params.k = k;
        c.params.validate()?;
        c.lipschitz.l_phi = phi_lipschitz(&c.params, c.lipschitz.l_dx, c.lipschitz.l_ddx, d_max)?;
        c.certified &= k == self.params.k;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).map_err(std::io::Error::other)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> std::io::Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?).map_err(std::io::Error::other)
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub certificate: SynthesisCertificate,
    pub dataset: Dataset,
    pub model: GpModel,
    pub infsup: InfSupEstimate,
    pub iterations: Vec<IterationRecord>,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Evaluates the dataset margin condition at every training row.
#[allow(clippy::too_many_arguments)]
pub fn verify_dataset_margin(
    env: &dyn Environment,
    model: &GpModel,
    params: &SafetyIndexParams,
    dataset: &Dataset,
    lipschitz: &LipschitzBundle,
    tau_x: f64,
    sigma_tilde: f64,
    l_phi: f64,
    exec: Exec,
) -> Result<DatasetMarginReport, SynthesisError> {
    let check = SafetyCheck::new(model, *params, |x: &[f64]| env.measure_prediction(x), l_phi);
    let slack_terms =
        l_phi * lipschitz.l_f * tau_x + l_phi * tau_x + 2.0 * l_phi * model.beta_f() * sigma_tilde;
    let slacks = exec.try_map(dataset.len(), |i| {
        let s = &dataset.samples()[i];
        let rhs = check.threshold(&s.state)? - slack_terms;
        Ok::<f64, SafetyError>(rhs - check.upper_bound(&s.state, &s.control)?.value())
    })?;
    let (argmin, min_slack) =
        slacks.iter().copied().enumerate().fold((0, f64::INFINITY), |a, (i, v)| if v < a.1 { (i, v) } else { a });
    Ok(DatasetMarginReport {
        rows: slacks.len(),
        violations: slacks.iter().filter(|s| !(**s > 0.0)).count(),
        min_slack,
        argmin,
    })
}

fn describe_tau_failure(c: &TauCondition, tau: f64) -> String {
    let term = match c.dominant {
        DominantTerm::Unit => "the constant 1",
        DominantTerm::DynamicsLipschitz => "L_f",
        DominantTerm::Posterior => "the posterior term 2 beta_f n_x sqrt(2 L_k) sqrt(1 + |X| |K^-1| max k)",
    };
    format!(
        "tau_x = {tau} exceeds the admissible {:e}; dominant term: {term} (posterior term = {:e})",
        c.rhs, c.posterior_term
    )
}

/// Runs the offline synthesis loop.
pub fn synthesize(
    env: &dyn Environment,
    config: &SynthesisConfig,
    exec: Exec,
) -> Result<SynthesisOutcome, SynthesisError> {
    config.validate()?;
    let started = unix_now();
    let bundle = config.lipschitz.unwrap_or_else(|| env.lipschitz());
    let joint = env.state_box().product(env.control_box());
    let rounds = match config.mode {
        SynthesisMode::Certified => config.max_iterations.max(1),
        SynthesisMode::Empirical => 1,
    };
    let mut tau = config.tau0;
    let mut iterations = Vec::new();
    let fail = |reason: String, iterations: Vec<IterationRecord>| SynthesisError::Failed { reason, iterations };

    for _ in 0..rounds {
        let mut rec = IterationRecord::new(tau);
        let grid = match discretize(env.state_box(), tau, config.grid_cap) {
            Ok(g) => g,
            Err(SynthesisError::GridTooLarge { count, cap, .. }) => {
                let last = iterations.last().map(|r: &IterationRecord| r.note.clone()).unwrap_or_default();
                return Err(fail(
                    format!("grid cap reached at tau = {tau} ({count} > {cap} points); last diagnostic: {last}"),
                    iterations,
                ));
            }
            Err(e) => return Err(e),
        };
        rec.grid_size = grid.len();
        let tilde_grid = match config.tilde_tau {
            Some(t) => discretize(env.state_box(), t, config.grid_cap)?,
            None => grid.clone(),
        };
        let est = estimate_infsup(env, &tilde_grid, bundle.l_delta_ddot, &config.infsup_sampler, exec)?;
        rec.infsup_lb = Some(est.lower_bound);
        rec.infsup_min_sample = Some(est.min_value);
        let data_lb = match config.mode {
            SynthesisMode::Certified => est.lower_bound,
            SynthesisMode::Empirical => est.min_value,
        };
        if data_lb <= 0.0 {
            rec.note = format!(
                "inf-sup lower bound {:e} is not positive: Lipschitz slack L_delta_ddot * tilde_tau = {:e} \
                 exceeds the smallest sampled sup {:e} (grid point #{})",
                est.lower_bound,
                est.l_delta_ddot * est.tilde_tau,
                est.min_value,
                est.argmin
            );
            iterations.push(rec);
            if config.tilde_tau.is_some() {
                let note = iterations.last().unwrap().note.clone();
                return Err(fail(note, iterations));
            }
            tau *= config.shrink.factor();
            continue;
        }
        if grid.len() > config.dataset_cap {
            rec.note = format!("dataset of {} rows exceeds the cap of {}", grid.len(), config.dataset_cap);
            iterations.push(rec);
            let note = iterations.last().unwrap().note.clone();
            return Err(fail(note, iterations));
        }
        let built = build_dataset(env, &grid, data_lb, &config.dataset_sampler, &config.selection, exec)?;
        let calibration = Calibration { domain: joint.clone(), data_tau: tau, l_f: bundle.l_f, gamma_fraction: config.gamma_fraction };
        let model = GpModel::fit(config.kernel, &built.dataset, config.delta, &calibration)?;
        let sigma_tilde = variance_upper_bound(&model, tau)?;
        let cond = check_tau_condition(&TauConditionInputs {
            tau_x: tau,
            infsup_lb: est.lower_bound,
            lipschitz: bundle,
            beta_f: model.beta_f(),
            n_x: env.state_dim(),
            grid_size: grid.len(),
            gp: model.summary(),
        });
        rec.sigma_tilde = Some(sigma_tilde);
        rec.beta_f = Some(model.beta_f());
        rec.tau_condition = Some(cond);
        if !cond.ok {
            rec.note = describe_tau_failure(&cond, tau);
        }
        iterations.push(rec);
        if !(cond.ok || config.mode == SynthesisMode::Empirical) {
            tau *= config.shrink.factor();
            continue;
        }

        let form = match config.mode {
            SynthesisMode::Certified => UpsilonForm::Certified,
            SynthesisMode::Empirical => UpsilonForm::Empirical,
        };
        let ksel = select_k(
            &built.dataset,
            |x| env.measure(x),
            &KSelectionInputs {
                lipschitz: bundle,
                tau_x: tau,
                beta_f: model.beta_f(),
                sigma_tilde,
                eta: config.eta,
                d_min: env.d_min(),
                margin: config.k_margin,
                form,
            },
        )?;
        let l_phi = phi_lipschitz(&ksel.params, bundle.l_dx, bundle.l_ddx, env.d_max())?;
        let margin = verify_dataset_margin(env, &model, &ksel.params, &built.dataset, &bundle, tau, sigma_tilde, l_phi, exec)?;
        let certified = config.mode == SynthesisMode::Certified && cond.ok;
        let certificate = SynthesisCertificate {
            environment: env.name().to_string(),
            mode: config.mode,
            certified,
            tau_x: tau,
            grid_size: grid.len(),
            dataset_path: None,
            model_path: None,
            sigma_tilde,
            infsup_lb: est.lower_bound,
            infsup_min_sample: est.min_value,
            tilde_tau: est.tilde_tau,
            tau_condition_ok: cond.ok,
            tau_condition: cond,
            upsilon_max: ksel.upsilon_max,
            params: ksel.params,
            lipschitz: CertificateLipschitz {
                l_f: bundle.l_f,
                l_k: model.kernel_lipschitz(),
                l_dx: bundle.l_dx,
                l_ddx: bundle.l_ddx,
                l_delta_ddot: bundle.l_delta_ddot,
                l_phi,
            },
            beta_f: model.beta_f(),
            delta: config.delta,
            kernel: config.kernel,
            gp: model.summary(),
            dataset_margin: margin,
            provenance: Provenance {
                config_hash: config.hash(),
                seed: config.seed,
                started_unix: started,
                finished_unix: unix_now(),
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
            },
        };
        return Ok(SynthesisOutcome { certificate, dataset: built.dataset, model, infsup: est, iterations });
    }
    Err(fail(format!("no admissible tau_x within {rounds} iterations"), iterations))
}
