//! JSON run configuration shared by every command.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use gpsafe::safeguard::SafeguardConfig;
use gpsafe::sim::FeasibilityConfig;
use gpsafe::synthesis::SynthesisConfig;
use gpsafe::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub steps: usize,
    /// One rollout per seed; each seeds its initial state and policy.
    pub seeds: Vec<u64>,
    /// Fixed initial state; sampled with `phi <= 0` when absent.
    pub initial_state: Option<Vec<f64>>,
    pub max_initial_draws: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self { steps: 2000, seeds: vec![0, 1], initial_state: None, max_initial_draws: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub queries: usize,
    pub lipschitz_pairs: usize,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { queries: 10_000, lipschitz_pairs: 100_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    /// Directory holding `certificate.json` and the model; defaults to the
    /// output directory.
    pub artifacts: Option<PathBuf>,
    pub seed: u64,
    /// Disables the rayon pool for sweeps.
    pub sequential: bool,
    pub synthesis: SynthesisConfig,
    pub safeguard: SafeguardConfig,
    pub rollout: RolloutConfig,
    pub feasibility: FeasibilityConfig,
    pub validation: ValidationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("runs/default"),
            artifacts: None,
            seed: 0,
            sequential: false,
            synthesis: SynthesisConfig::default(),
            safeguard: SafeguardConfig::default(),
            rollout: RolloutConfig::default(),
            feasibility: FeasibilityConfig::default(),
            validation: ValidationConfig::default(),
        }
    }
}

impl RunConfig {
    /// Copy with every seed derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.synthesis = c.synthesis.with_seed(seed);
        c.safeguard.seed = seed;
        c.rollout.seeds = (0..c.rollout.seeds.len() as u64).map(|i| seed.wrapping_add(i)).collect();
        c.feasibility.seed = seed;
        c.validation.seed = seed;
        c
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}
