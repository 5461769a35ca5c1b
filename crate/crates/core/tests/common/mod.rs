#![allow(dead_code)]

use gpsafe::env::{DoubleIntegrator, EnvConfig};
use gpsafe::synthesis::{synthesize, ControlSampler, ControlSelection, SynthesisConfig, SynthesisMode, SynthesisOutcome};
use gpsafe::{Exec, Kernel};

pub fn toy_config(mode: SynthesisMode) -> SynthesisConfig {
    SynthesisConfig {
        env: EnvConfig::ToyDoubleIntegrator(Default::default()),
        kernel: Kernel { signal_variance: 100.0, lengthscale: 30.0 },
        tau0: 0.2,
        mode,
        dataset_cap: 500,
        dataset_sampler: ControlSampler::Random { seed: 1, batch: 64, max_batches: 8 },
        selection: ControlSelection::Random { seed: 2, min_fraction_of_best: 0.0 },
        ..SynthesisConfig::default()
    }
}

pub fn toy() -> (DoubleIntegrator, SynthesisOutcome) {
    let env = DoubleIntegrator::default();
    let out = synthesize(&env, &toy_config(SynthesisMode::Empirical), Exec::Parallel).unwrap();
    (env, out)
}
