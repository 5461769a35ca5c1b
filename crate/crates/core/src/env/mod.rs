//! Environments: known dynamics used to generate data, evaluate the safety
//! measure and validate the learned model.

pub mod arm;
pub mod double_integrator;

use serde::{Deserialize, Serialize};

use crate::domain::BoxDomain;
use crate::safety_index::SafetyMeasure;

pub use arm::{ArmControl, ArmEnv, ArmGeometry, ArmState};
pub use double_integrator::DoubleIntegrator;

/// 1-norm Lipschitz constants of the dynamics and the safety measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBundle {
    /// `f` on the joint (state, control) input.
    pub l_f: f64,
    /// `d` on the state.
    pub l_dx: f64,
    /// `d_dot` on the state.
    pub l_ddx: f64,
    /// `delta_d_dot(x, u) = d_dot(f(x, u)) - d_dot(x)` on the state, for any
    /// fixed control.
    pub l_delta_ddot: f64,
}

/// A discrete-time system with a scalar safety measure.
pub trait Environment: Send + Sync {
    fn name(&self) -> &str;

    fn state_box(&self) -> &BoxDomain;

    fn control_box(&self) -> &BoxDomain;

    fn state_dim(&self) -> usize {
        self.state_box().dim()
    }

    fn control_dim(&self) -> usize {
        self.control_box().dim()
    }

    /// Column names of the state vector in trace files.
    fn state_labels(&self) -> Vec<String> {
        (1..=self.state_dim()).map(|i| format!("x{i}")).collect()
    }

    /// The true one-step map `x_{t+1} = f(x_t, u_t)`.
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64>;

    fn measure(&self, x: &[f64]) -> SafetyMeasure;

    fn lipschitz(&self) -> LipschitzBundle;

    /// Upper bound of `d` over the state box.
    fn d_max(&self) -> f64;

    /// Default `d_min` for this environment.
    fn d_min(&self) -> f64;

    /// Whether `step` always lands in the state box. Then projecting a
    /// predicted state onto the box never increases its 1-norm error.
    fn step_stays_in_box(&self) -> bool {
        false
    }

    /// Measure of a predicted next state, projected onto the state box when
    /// the true dynamics are known to stay inside it.
    fn measure_prediction(&self, x: &[f64]) -> SafetyMeasure {
        if self.step_stays_in_box() {
            self.measure(&self.state_box().clamp(x))
        } else {
            self.measure(x)
        }
    }

    fn delta_d_dot(&self, x: &[f64], u: &[f64]) -> f64 {
        self.measure(&self.step(x, u)).d_dot - self.measure(x).d_dot
    }
}

/// Serializable environment selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvConfig {
    Arm {
        #[serde(default)]
        geometry: ArmGeometry,
        #[serde(default = "arm::default_control_limit")]
        control_limit: f64,
    },
    ToyDoubleIntegrator(double_integrator::DoubleIntegratorConfig),
}

impl EnvConfig {
    pub fn build(&self) -> Box<dyn Environment> {
        match self {
            EnvConfig::Arm { geometry, control_limit } => Box::new(ArmEnv::new(*geometry, *control_limit)),
            EnvConfig::ToyDoubleIntegrator(c) => Box::new(DoubleIntegrator::new(*c)),
        }
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Arm { geometry: ArmGeometry::default(), control_limit: arm::default_control_limit() }
    }
}
