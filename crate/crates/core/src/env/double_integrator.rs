//! One-dimensional double integrator `p'' = u` approaching an obstacle at
//! `p = 0`, with `d = p` and `d_dot = v`. One step changes `d_dot` by
//! exactly `dt * u`, which makes every synthesis quantity closed-form.

use serde::{Deserialize, Serialize};

use super::{Environment, LipschitzBundle};
use crate::domain::BoxDomain;
use crate::safety_index::SafetyMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoubleIntegratorConfig {
    pub dt: f64,
    pub position_max: f64,
    pub speed_max: f64,
    pub control_limit: f64,
    pub d_min: f64,
}

impl Default for DoubleIntegratorConfig {
    fn default() -> Self {
        Self { dt: 0.1, position_max: 2.0, speed_max: 1.0, control_limit: 1.0, d_min: 0.2 }
    }
}

#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    config: DoubleIntegratorConfig,
    state_box: BoxDomain,
    control_box: BoxDomain,
}

impl DoubleIntegrator {
    pub fn new(config: DoubleIntegratorConfig) -> Self {
        Self {
            config,
            state_box: BoxDomain::new(vec![0.0, -config.speed_max], vec![config.position_max, config.speed_max]),
            control_box: BoxDomain::symmetric(config.control_limit, 1),
        }
    }

    pub fn config(&self) -> &DoubleIntegratorConfig {
        &self.config
    }
}

impl Default for DoubleIntegrator {
    fn default() -> Self {
        Self::new(DoubleIntegratorConfig::default())
    }
}

impl Environment for DoubleIntegrator {
    fn name(&self) -> &str {
        "toy-double-integrator"
    }

    fn state_box(&self) -> &BoxDomain {
        &self.state_box
    }

    fn control_box(&self) -> &BoxDomain {
        &self.control_box
    }

    fn state_labels(&self) -> Vec<String> {
        vec!["p".into(), "v".into()]
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let dt = self.config.dt;
        let v = x[1] + dt * u[0];
        vec![x[0] + dt * v, v]
    }

    fn measure(&self, x: &[f64]) -> SafetyMeasure {
        SafetyMeasure { d: x[0], d_dot: x[1] }
    }

    fn lipschitz(&self) -> LipschitzBundle {
        LipschitzBundle { l_f: 1.0 + self.config.dt, l_dx: 1.0, l_ddx: 1.0, l_delta_ddot: 0.0 }
    }

    fn d_max(&self) -> f64 {
        self.config.position_max
    }

    fn d_min(&self) -> f64 {
        self.config.d_min
    }
}
