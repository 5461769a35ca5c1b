//! Planar two-link arm next to a vertical wall.
//!
//! State `[theta1, theta2, theta1_dot, theta2_dot]` with both angles in the
//! world frame, control `[theta1_ddot, theta2_ddot]`. The wall is the plane
//! `x = wall_offset`; the distance `d` is the wall offset minus a
//! log-sum-exp soft maximum of the horizontal coordinates of the elbow and
//! the end effector.

use serde::{Deserialize, Serialize};

use super::{Environment, LipschitzBundle};
use crate::domain::BoxDomain;
use crate::safety_index::SafetyMeasure;

pub(crate) fn default_control_limit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmGeometry {
    pub link_length: f64,
    pub wall_offset: f64,
    pub dt: f64,
    pub d_min: f64,
    /// Temperature of the soft maximum in `d`.
    pub softmax_temperature: f64,
    /// Joint speed limit, also the velocity side of the state box.
    pub max_joint_speed: f64,
}

impl Default for ArmGeometry {
    fn default() -> Self {
        Self {
            link_length: 1.0,
            wall_offset: 1.0,
            dt: 1e-3,
            d_min: 0.1,
            softmax_temperature: 50.0,
            max_joint_speed: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub theta1: f64,
    pub theta2: f64,
    pub theta1_dot: f64,
    pub theta2_dot: f64,
}

impl ArmState {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.theta1, self.theta2, self.theta1_dot, self.theta2_dot]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self { theta1: x[0], theta2: x[1], theta1_dot: x[2], theta2_dot: x[3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmControl {
    pub theta1_ddot: f64,
    pub theta2_ddot: f64,
}

impl ArmControl {
    pub fn to_vec(self) -> Vec<f64> {
        vec![self.theta1_ddot, self.theta2_ddot]
    }
}

#[derive(Debug, Clone)]
pub struct ArmEnv {
    geometry: ArmGeometry,
    state_box: BoxDomain,
    control_box: BoxDomain,
}

impl ArmEnv {
    /// Arm with accelerations limited to `[-control_limit, control_limit]`.
    pub fn new(geometry: ArmGeometry, control_limit: f64) -> Self {
        use std::f64::consts::PI;
        let v = geometry.max_joint_speed;
        Self {
            geometry,
            state_box: BoxDomain::new(vec![0.0, 0.0, -v, -v], vec![PI, 2.0 * PI, v, v]),
            control_box: BoxDomain::symmetric(control_limit, 2),
        }
    }

    pub fn geometry(&self) -> &ArmGeometry {
        &self.geometry
    }

    /// Elbow and end-effector positions.
    pub fn joint_points(&self, theta1: f64, theta2: f64) -> [(f64, f64); 2] {
        let l = self.geometry.link_length;
        let p1 = (l * theta1.cos(), l * theta1.sin());
        [p1, (p1.0 + l * theta2.cos(), p1.1 + l * theta2.sin())]
    }

    pub fn step_state(&self, x: ArmState, u: ArmControl) -> ArmState {
        ArmState::from_slice(&self.step(&x.to_vec(), &u.to_vec()))
    }
}

impl Environment for ArmEnv {
    fn name(&self) -> &str {
        "arm"
    }

    fn state_box(&self) -> &BoxDomain {
        &self.state_box
    }

    fn control_box(&self) -> &BoxDomain {
        &self.control_box
    }

    fn state_labels(&self) -> Vec<String> {
        ["theta1", "theta2", "dtheta1", "dtheta2"].map(String::from).to_vec()
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let dt = self.geometry.dt;
        let (lo, hi) = (&self.state_box.lower, &self.state_box.upper);
        let w1 = (x[2] + dt * u[0]).clamp(lo[2], hi[2]);
        let w2 = (x[3] + dt * u[1]).clamp(lo[3], hi[3]);
        vec![(x[0] + dt * w1).clamp(lo[0], hi[0]), (x[1] + dt * w2).clamp(lo[1], hi[1]), w1, w2]
    }

    fn measure(&self, x: &[f64]) -> SafetyMeasure {
        let g = &self.geometry;
        let l = g.link_length;
        let t = g.softmax_temperature;
        let a = l * x[0].cos();
        let b = a + l * x[1].cos();
        let m = a.max(b);
        let lse = m + ((t * (a - m)).exp() + (t * (b - m)).exp()).ln() / t;
        // weight of the end effector in the soft maximum
        let w = 1.0 / (1.0 + (-t * (b - a)).exp());
        SafetyMeasure {
            d: g.wall_offset - lse,
            d_dot: l * x[0].sin() * x[2] + w * l * x[1].sin() * x[3],
        }
    }

    fn lipschitz(&self) -> LipschitzBundle {
        let g = &self.geometry;
        let l = g.link_length;
        let l_f = 1.0 + g.dt;
        let l_ddx = l.max(l * g.max_joint_speed * (1.0 + g.softmax_temperature * l / 4.0));
        LipschitzBundle { l_f, l_dx: l, l_ddx, l_delta_ddot: l_ddx * (1.0 + l_f) }
    }

    fn step_stays_in_box(&self) -> bool {
        true
    }

    fn d_max(&self) -> f64 {
        self.geometry.wall_offset + self.geometry.link_length
    }

    fn d_min(&self) -> f64 {
        self.geometry.d_min
    }
}
