//! Safeguarded rollouts and feasibility maps.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::BoxDomain;
use crate::env::Environment;
use crate::parallel::Exec;
use crate::safeguard::{Safeguard, SafeguardStatus};
use crate::safety_index::{phi, SafetyError, SafetyIndexParams, SafetyMeasure};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed trace: {0}")]
    Format(String),
    #[error("no state with phi <= 0 found after {0} draws")]
    NoSafeInitialState(usize),
    #[error("invalid feasibility grid: {0}")]
    InvalidGrid(String),
}

/// Source of nominal controls.
pub trait Policy {
    fn control(&mut self, t: usize, x: &[f64]) -> Vec<f64>;
}

/// Uniform random exploration over the control box.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    control_box: BoxDomain,
}

impl RandomPolicy {
    pub fn new(control_box: BoxDomain, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), control_box }
    }
}

impl Policy for RandomPolicy {
    fn control(&mut self, _t: usize, _x: &[f64]) -> Vec<f64> {
        self.control_box.sample(&mut self.rng)
    }
}

impl<F: FnMut(usize, &[f64]) -> Vec<f64>> Policy for F {
    fn control(&mut self, t: usize, x: &[f64]) -> Vec<f64> {
        self(t, x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    pub state: Vec<f64>,
    pub u_ref: Vec<f64>,
    pub u: Vec<f64>,
    pub phi: f64,
    pub phi_next: f64,
    pub u_f: f64,
    pub threshold: f64,
    pub status: SafeguardStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub state_labels: Vec<String>,
    pub control_dim: usize,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        h.extend(self.state_labels.iter().cloned());
        h.extend((1..=self.control_dim).map(|i| format!("u{i}_ref")));
        h.extend((1..=self.control_dim).map(|i| format!("u{i}")));
        h.extend(["phi", "phi_next", "u_f", "threshold", "status"].map(String::from));
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.header())?;
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            row.extend(r.state.iter().chain(&r.u_ref).chain(&r.u).map(f64::to_string));
            row.extend([r.phi, r.phi_next, r.u_f, r.threshold].map(|v| v.to_string()));
            row.push(r.status.as_str().to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        let control_dim = header.iter().filter(|h| h.ends_with("_ref")).count();
        let fixed = 1 + 2 * control_dim + 5;
        if header.len() < fixed || header[0] != "t" {
            return Err(SimError::Format(format!("unexpected header {header:?}")));
        }
        let n_x = header.len() - fixed;
        let state_labels = header[1..1 + n_x].to_vec();
        let num = |s: &str| s.parse::<f64>().map_err(|e| SimError::Format(format!("{s:?}: {e}")));
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            if row.len() != header.len() {
                return Err(SimError::Format(format!("row has {} fields, expected {}", row.len(), header.len())));
            }
            let vals: Vec<&str> = row.iter().collect();
            let vec_of = |a: usize, b: usize| vals[a..b].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>();
            let base = 1 + n_x + 2 * control_dim;
            records.push(TraceRecord {
                t: vals[0].parse().map_err(|e| SimError::Format(format!("t: {e}")))?,
                state: vec_of(1, 1 + n_x)?,
                u_ref: vec_of(1 + n_x, 1 + n_x + control_dim)?,
                u: vec_of(1 + n_x + control_dim, base)?,
                phi: num(vals[base])?,
                phi_next: num(vals[base + 1])?,
                u_f: num(vals[base + 2])?,
                threshold: num(vals[base + 3])?,
                status: vals[base + 4].parse().map_err(SimError::Format)?,
            });
        }
        Ok(Self { state_labels, control_dim, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    /// Largest `phi` over all visited states, including the final one.
    pub max_phi: Option<f64>,
    /// Steps with `phi(f(x, u)) > U_f(x, u)`.
    pub bound_violations: usize,
    /// Safeguarded steps whose control does not satisfy `U_f < threshold`.
    pub unsafe_controls: usize,
    /// Visited states with `phi > 0` after a start with `phi <= 0`.
    pub invariance_violations: usize,
    /// Visited states with `d < d_min`.
    pub constraint_violations: usize,
    pub min_d: Option<f64>,
    pub fallback_count: usize,
    /// Fallback steps taken from a state outside the state box, where the
    /// model carries no guarantee.
    pub fallbacks_outside_box: usize,
    pub projected_count: usize,
    /// Steps taken from a state outside the state box.
    pub steps_outside_box: usize,
    /// Mean of `U_f - phi(f(x, u))`.
    pub mean_gap: f64,
}

impl TraceSummary {
    pub fn from_trace(trace: &Trace, env: &dyn Environment, d_min: f64) -> Self {
        let starts_safe = trace.records.first().is_some_and(|r| r.phi <= 0.0);
        let mut s = TraceSummary {
            steps: trace.len(),
            max_phi: None,
            bound_violations: 0,
            unsafe_controls: 0,
            invariance_violations: 0,
            constraint_violations: 0,
            min_d: None,
            fallback_count: 0,
            fallbacks_outside_box: 0,
            projected_count: 0,
            steps_outside_box: 0,
            mean_gap: 0.0,
        };
        let visit = |s: &mut TraceSummary, x: &[f64], p: f64| {
            s.max_phi = Some(s.max_phi.map_or(p, |m| m.max(p)));
            let d = env.measure(x).d;
            s.min_d = Some(s.min_d.map_or(d, |m| m.min(d)));
            if d < d_min {
                s.constraint_violations += 1;
            }
            if starts_safe && p > 0.0 {
                s.invariance_violations += 1;
            }
        };
        for r in &trace.records {
            visit(&mut s, &r.state, r.phi);
            let outside = !env.state_box().contains(&r.state);
            s.steps_outside_box += usize::from(outside);
            if r.phi_next > r.u_f {
                s.bound_violations += 1;
            }
            match r.status {
                SafeguardStatus::InfeasibleFallback => {
                    s.fallback_count += 1;
                    s.fallbacks_outside_box += usize::from(outside);
                }
                status => {
                    if status == SafeguardStatus::Projected {
                        s.projected_count += 1;
                    }
                    if r.u_f >= r.threshold {
                        s.unsafe_controls += 1;
                    }
                }
            }
            s.mean_gap += r.u_f - r.phi_next;
        }
        if let Some(last) = trace.records.last() {
            let x = env.step(&last.state, &last.u);
            visit(&mut s, &x, last.phi_next);
            s.mean_gap /= trace.len() as f64;
        }
        s
    }
}

/// Runs `steps` safeguarded steps of the true dynamics from `x0`.
pub fn rollout<M, P>(
    env: &dyn Environment,
    guard: &Safeguard<'_, M>,
    policy: &mut P,
    x0: &[f64],
    steps: usize,
) -> Result<Trace, SimError>
where
    M: Fn(&[f64]) -> SafetyMeasure,
    P: Policy + ?Sized,
{
    let mut records = Vec::with_capacity(steps);
    let mut x = x0.to_vec();
    let check = guard.check();
    for t in 0..steps {
        let u_ref = policy.control(t, &x);
        let res = guard.project(&x, &u_ref)?;
        let next = env.step(&x, &res.control);
        records.push(TraceRecord {
            t,
            state: x.clone(),
            u_ref,
            u: res.control,
            phi: check.phi(&x)?,
            phi_next: check.phi(&next)?,
            u_f: res.u_f_value,
            threshold: res.threshold,
            status: res.status,
        });
        x = next;
    }
    Ok(Trace { state_labels: env.state_labels(), control_dim: env.control_dim(), records })
}

/// Rejection-samples a state with `phi(x) <= 0` and `d >= d_min`.
pub fn sample_safe_state<R: Rng + ?Sized>(
    env: &dyn Environment,
    params: &SafetyIndexParams,
    rng: &mut R,
    max_draws: usize,
) -> Result<Vec<f64>, SimError> {
    for _ in 0..max_draws {
        let x = env.state_box().sample(rng);
        let m = env.measure(&x);
        if m.d >= params.d_min && phi(params, m)? <= 0.0 {
            return Ok(x);
        }
    }
    Err(SimError::NoSafeInitialState(max_draws))
}

/// Grid over the position half of the state; the velocity half is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeasibilityConfig {
    /// Cells per position dimension.
    pub cells: Vec<usize>,
    pub samples_per_cell: usize,
    pub seed: u64,
}

impl Default for FeasibilityConfig {
    fn default() -> Self {
        Self { cells: vec![8, 16], samples_per_cell: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityMeta {
    pub cells: Vec<usize>,
    /// Cell centers per position dimension.
    pub centers: Vec<Vec<f64>>,
    pub samples_per_cell: usize,
    pub seed: u64,
    pub k: f64,
    pub scan_resolution: usize,
    pub total_infeasible: usize,
    pub total_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityMap {
    /// Row-major counts, last position dimension fastest.
    pub counts: Vec<usize>,
    pub meta: FeasibilityMeta,
}

impl FeasibilityMap {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Writes the counts as a matrix: rows index the first position
    /// dimension, columns the remaining ones.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let cols: usize = self.meta.cells.iter().skip(1).product();
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for row in self.counts.chunks(cols.max(1)) {
            out.write_record(row.iter().map(usize::to_string))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<(), SimError> {
        self.write_csv(std::fs::File::create(csv_path)?)?;
        std::fs::write(meta_path, serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }
}

/// Counts, per position cell, the sampled states for which the safeguard's
/// control-grid scan finds no safe control.
pub fn feasibility_map<M>(
    env: &dyn Environment,
    guard: &Safeguard<'_, M>,
    config: &FeasibilityConfig,
    exec: Exec,
) -> Result<FeasibilityMap, SimError>
where
    M: Fn(&[f64]) -> SafetyMeasure + Sync,
{
    let sbox = env.state_box();
    let n_pos = sbox.dim() / 2;
    if config.cells.len() != n_pos || config.cells.contains(&0) {
        return Err(SimError::InvalidGrid(format!(
            "expected {n_pos} positive cell counts, got {:?}",
            config.cells
        )));
    }
    let centers: Vec<Vec<f64>> = (0..n_pos)
        .map(|j| {
            let h = (sbox.upper[j] - sbox.lower[j]) / config.cells[j] as f64;
            (0..config.cells[j]).map(|i| sbox.lower[j] + (i as f64 + 0.5) * h).collect()
        })
        .collect();
    let n_cells: usize = config.cells.iter().product();
    let vel_box = BoxDomain::new(sbox.lower[n_pos..].to_vec(), sbox.upper[n_pos..].to_vec());
    let counts = exec.try_map(n_cells, |cell| -> Result<usize, SimError> {
        let mut pos = vec![0.0; n_pos];
        let mut rem = cell;
        for j in (0..n_pos).rev() {
            pos[j] = centers[j][rem % config.cells[j]];
            rem /= config.cells[j];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(cell as u64);
        let mut count = 0;
        for _ in 0..config.samples_per_cell {
            let mut x = pos.clone();
            x.extend(vel_box.sample(&mut rng));
            if !guard.scan_has_safe_control(&x)? {
                count += 1;
            }
        }
        Ok(count)
    })?;
    let total_infeasible = counts.iter().sum();
    Ok(FeasibilityMap {
        counts,
        meta: FeasibilityMeta {
            cells: config.cells.clone(),
            centers,
            samples_per_cell: config.samples_per_cell,
            seed: config.seed,
            k: guard.check().params.k,
            scan_resolution: guard.config().scan_resolution,
            total_infeasible,
            total_samples: n_cells * config.samples_per_cell,
        },
    })
}
