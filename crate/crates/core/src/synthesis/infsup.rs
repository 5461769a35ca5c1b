use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::SynthesisError;
use crate::domain::BoxDomain;
use crate::env::Environment;
use crate::parallel::Exec;

/// How candidate controls are proposed at a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControlSampler {
    /// Cell-centered grids on the control box at resolutions
    /// `start, 2 start, 4 start, ...` per dimension, up to `max_resolution`.
    Grid { start_resolution: usize, max_resolution: usize },
    /// `batch` uniform samples per stage, at most `max_batches` stages,
    /// seeded per grid point.
    Random { seed: u64, batch: usize, max_batches: usize },
}

impl Default for ControlSampler {
    fn default() -> Self {
        ControlSampler::Grid { start_resolution: 2, max_resolution: 64 }
    }
}

impl ControlSampler {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let ok = match *self {
            ControlSampler::Grid { start_resolution, max_resolution } => {
                start_resolution >= 1 && max_resolution >= start_resolution
            }
            ControlSampler::Random { batch, max_batches, .. } => batch >= 1 && max_batches >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(SynthesisError::InvalidConfig(format!("invalid control sampler {self:?}")))
        }
    }

    /// Candidate batches for grid point `index`, coarse to fine.
    pub fn stages(&self, control_box: &BoxDomain, index: usize) -> Vec<Vec<Vec<f64>>> {
        match *self {
            ControlSampler::Grid { start_resolution, max_resolution } => {
                let mut out = Vec::new();
                let mut r = start_resolution;
                while r <= max_resolution {
                    out.push(control_grid(control_box, r));
                    r *= 2;
                }
                out
            }
            ControlSampler::Random { seed, batch, max_batches } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index as u64);
                (0..max_batches).map(|_| (0..batch).map(|_| control_box.sample(&mut rng)).collect()).collect()
            }
        }
    }
}

/// Cell-centered grid with `resolution` points per dimension: coordinate
/// `lo + (j + 1/2) * side / resolution`.
pub fn control_grid(control_box: &BoxDomain, resolution: usize) -> Vec<Vec<f64>> {
    let m = control_box.dim();
    let sides = control_box.sides();
    let total = resolution.pow(m as u32);
    (0..total)
        .map(|mut idx| {
            let mut u = vec![0.0; m];
            for j in (0..m).rev() {
                let i = idx % resolution;
                idx /= resolution;
                u[j] = control_box.lower[j] + (i as f64 + 0.5) * sides[j] / resolution as f64;
            }
            u
        })
        .collect()
}

/// Lower bound on `inf_x sup_u delta_d_dot(x, u)` from per-point samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfSupEstimate {
    /// `min_i value_i - l_delta_ddot * tilde_tau`.
    pub lower_bound: f64,
    /// `min_i value_i`, the bound without Lipschitz slack.
    pub min_value: f64,
    pub argmin: usize,
    pub l_delta_ddot: f64,
    pub tilde_tau: f64,
    /// Best sampled `delta_d_dot` per grid point.
    pub values: Vec<f64>,
    /// Row-major `len x n_u` controls attaining `values`.
    pub controls: Vec<f64>,
    pub n_u: usize,
}

impl InfSupEstimate {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn u_safe(&self, i: usize) -> &[f64] {
        &self.controls[i * self.n_u..(i + 1) * self.n_u]
    }
}

/// Per grid point, refines the control sampler until some control has a
/// positive `delta_d_dot`, and keeps the best one of that stage.
pub fn estimate_infsup(
    env: &dyn Environment,
    grid: &Grid,
    l_delta_ddot: f64,
    sampler: &ControlSampler,
    exec: Exec,
) -> Result<InfSupEstimate, SynthesisError> {
    sampler.validate()?;
    if grid.is_empty() {
        return Err(SynthesisError::InvalidConfig("empty grid".into()));
    }
    let cbox = env.control_box();
    let shared = match sampler {
        ControlSampler::Grid { .. } => Some(sampler.stages(cbox, 0)),
        ControlSampler::Random { .. } => None,
    };
    let per_point = exec.try_map(grid.len(), |i| {
        let x = grid.point(i);
        let own;
        let stages = match &shared {
            Some(s) => s,
            None => {
                own = sampler.stages(cbox, i);
                &own
            }
        };
        let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
        for (s, stage) in stages.iter().enumerate() {
            best = (f64::NEG_INFINITY, s, 0);
            for (c, u) in stage.iter().enumerate() {
                let v = env.delta_d_dot(&x, u);
                if v > best.0 {
                    best = (v, s, c);
                }
            }
            if best.0 > 0.0 {
                return Ok((best.0, stages[best.1][best.2].clone()));
            }
        }
        Err(SynthesisError::AssumptionViolation { index: i, point: x, best: best.0 })
    })?;
    let n_u = cbox.dim();
    let mut values = Vec::with_capacity(per_point.len());
    let mut controls = Vec::with_capacity(per_point.len() * n_u);
    for (v, u) in per_point {
        values.push(v);
        controls.extend(u);
    }
    let (argmin, min_value) =
        values.iter().copied().enumerate().fold((0, f64::INFINITY), |a, (i, v)| if v < a.1 { (i, v) } else { a });
    Ok(InfSupEstimate {
        lower_bound: min_value - l_delta_ddot * grid.tau,
        min_value,
        argmin,
        l_delta_ddot,
        tilde_tau: grid.tau,
        values,
        controls,
        n_u,
    })
}

/// Rule for picking the data control among candidates that satisfy the
/// dataset condition `delta_d_dot > lb / 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ControlSelection {
    /// The qualifying candidate with the largest `delta_d_dot`.
    #[default]
    Best,
    /// Uniform among qualifying candidates whose `delta_d_dot` is also at
    /// least `min_fraction_of_best` of the stage maximum.
    Random { seed: u64, min_fraction_of_best: f64 },
}

pub(crate) fn pick<R: Rng>(
    selection: &ControlSelection,
    scored: &[(usize, f64)],
    required: f64,
    rng: &mut R,
) -> Option<usize> {
    let best = scored.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    if !(best > required) {
        return None;
    }
    match *selection {
        ControlSelection::Best => scored.iter().find(|s| s.1 == best).map(|s| s.0),
        ControlSelection::Random { min_fraction_of_best, .. } => {
            let floor = min_fraction_of_best * best;
            let ok: Vec<usize> = scored.iter().filter(|s| s.1 > required && s.1 >= floor).map(|s| s.0).collect();
            Some(ok[rng.random_range(0..ok.len())])
        }
    }
}
