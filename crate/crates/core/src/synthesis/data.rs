use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::grid::Grid;
use super::infsup::{pick, ControlSampler, ControlSelection};
use super::SynthesisError;
use crate::env::Environment;
use crate::gp::{Dataset, TransitionSample};
use crate::parallel::Exec;

/// Dataset with one transition per grid point, plus the realized
/// `delta_d_dot` of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltDataset {
    pub dataset: Dataset,
    pub delta_d_dot: Vec<f64>,
}

/// For each grid point, finds a control with
/// `d_dot(f(x_i, u_i)) - d_dot(x_i) > infsup_lb / 2` and records the
/// transition.
pub fn build_dataset(
    env: &dyn Environment,
    grid: &Grid,
    infsup_lb: f64,
    sampler: &ControlSampler,
    selection: &ControlSelection,
    exec: Exec,
) -> Result<BuiltDataset, SynthesisError> {
    if !(infsup_lb > 0.0) {
        return Err(SynthesisError::NonPositiveInfSup { lower_bound: infsup_lb });
    }
    sampler.validate()?;
    let required = infsup_lb / 2.0;
    let cbox = env.control_box();
    let rows = exec.try_map(grid.len(), |i| {
        let x = grid.point(i);
        let mut rng = ChaCha8Rng::seed_from_u64(match selection {
            ControlSelection::Random { seed, .. } => *seed,
            ControlSelection::Best => 0,
        });
        rng.set_stream(i as u64);
        let mut best = f64::NEG_INFINITY;
        for stage in sampler.stages(cbox, i) {
            let scored: Vec<(usize, f64)> =
                stage.iter().enumerate().map(|(c, u)| (c, env.delta_d_dot(&x, u))).collect();
            best = scored.iter().map(|s| s.1).fold(best, f64::max);
            if let Some(c) = pick(selection, &scored, required, &mut rng) {
                let u = stage[c].clone();
                let next = env.step(&x, &u);
                return Ok((TransitionSample { state: x, control: u, next_state: next }, scored[c].1));
            }
        }
        Err(SynthesisError::ControlNotFound { index: i, point: x, best, required })
    })?;
    let (samples, delta_d_dot): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    let dataset = Dataset::from_samples(env.state_dim(), env.control_dim(), samples)?;
    Ok(BuiltDataset { dataset, delta_d_dot })
}
