//! Runtime projection of a nominal control onto the set of controls with
//! `U_f(x, u) < max(phi(x) - eta, 0)`.
//!
//! The search casts rays from the (box-clamped) nominal control along
//! seeded unit directions, doubles the step until a safe point is
//! hit and bisects back to the boundary. Rays are advanced in lockstep so
//! every round is one batched posterior evaluation, and rays that cannot
//! beat the best distance found so far are dropped. A few refinement
//! rounds recast rays around the best direction. If no ray finds a safe
//! control, a control grid is scanned; if that also fails the control with
//! the smallest `U_f` is returned and flagged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{l2_distance, BoxDomain};
use crate::safety_index::{SafetyCheck, SafetyError, SafetyMeasure, UpperBound};
use crate::synthesis::control_grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafeguardConfig {
    /// Rays per round.
    pub directions: usize,
    pub seed: u64,
    /// Bisection tolerance as a fraction of the control-box diameter.
    pub tolerance: f64,
    /// First step of the doubling phase as a fraction of the diameter;
    /// never below the tolerance.
    pub initial_step: f64,
    /// Per-dimension resolution of the fallback grid scan.
    pub scan_resolution: usize,
    /// Extra rounds of rays around the best direction.
    pub refine_rounds: usize,
}

impl Default for SafeguardConfig {
    fn default() -> Self {
        Self { directions: 20, seed: 0, tolerance: 1e-4, initial_step: 1.0 / 32.0, scan_resolution: 16, refine_rounds: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SafeguardStatus {
    NominalSafe,
    Projected,
    InfeasibleFallback,
}

impl SafeguardStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SafeguardStatus::NominalSafe => "nominal-safe",
            SafeguardStatus::Projected => "projected",
            SafeguardStatus::InfeasibleFallback => "infeasible-fallback",
        }
    }
}

impl std::str::FromStr for SafeguardStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nominal-safe" => Ok(SafeguardStatus::NominalSafe),
            "projected" => Ok(SafeguardStatus::Projected),
            "infeasible-fallback" => Ok(SafeguardStatus::InfeasibleFallback),
            other => Err(format!("unknown safeguard status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafeguardResult {
    pub control: Vec<f64>,
    pub status: SafeguardStatus,
    pub u_f_value: f64,
    pub threshold: f64,
    pub samples_used: usize,
}

pub struct Safeguard<'a, M> {
    check: SafetyCheck<'a, M>,
    control_box: BoxDomain,
    config: SafeguardConfig,
    directions: Vec<Vec<f64>>,
}

struct Ray {
    dir: Vec<f64>,
    t_max: f64,
    /// Largest step known to be unsafe.
    lo: f64,
    t: f64,
    /// Smallest step known to be safe.
    hi: Option<f64>,
    exhausted: bool,
}

/// Seeded unit directions. Plane directions are evenly spaced from a random
/// phase, others are normalized Gaussian draws, optionally spread around a
/// center.
fn unit_directions(rng: &mut ChaCha8Rng, count: usize, dim: usize, around: Option<(&[f64], f64)>) -> Vec<Vec<f64>> {
    if dim == 2 && around.is_none() {
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let step = std::f64::consts::TAU / count as f64;
        return (0..count)
            .map(|i| {
                let a = phase + i as f64 * step;
                vec![a.cos(), a.sin()]
            })
            .collect();
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let g: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let v: Vec<f64> = match around {
            Some((c, spread)) => c.iter().zip(&g).map(|(a, b)| a + spread * b).collect(),
            None => g,
        };
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            out.push(v.iter().map(|x| x / norm).collect());
        }
    }
    out
}

impl<'a, M> Safeguard<'a, M>
where
    M: Fn(&[f64]) -> SafetyMeasure,
{
    pub fn new(check: SafetyCheck<'a, M>, control_box: BoxDomain, config: SafeguardConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let directions = unit_directions(&mut rng, config.directions.max(1), control_box.dim(), None);
        Self { check, control_box, config, directions }
    }

    pub fn check(&self) -> &SafetyCheck<'a, M> {
        &self.check
    }

    pub fn config(&self) -> &SafeguardConfig {
        &self.config
    }

    pub fn control_box(&self) -> &BoxDomain {
        &self.control_box
    }

    fn tolerance(&self) -> f64 {
        (self.config.tolerance * self.control_box.diameter()).max(f64::MIN_POSITIVE)
    }

    fn point(&self, u0: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
        let raw: Vec<f64> = u0.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        self.control_box.clamp(&raw)
    }

    fn safe_flags(&self, x: &[f64], controls: &[Vec<f64>], threshold: f64) -> Result<Vec<bool>, SafetyError> {
        Ok(self
            .check
            .upper_bounds(x, controls, Some(threshold))?
            .into_iter()
            .map(|b| b.is_some_and(|b| b.value() < threshold))
            .collect())
    }

    /// Lockstep ray search; returns the closest safe point to `u_ref` found
    /// along `dirs` together with its ray index.
    fn search(
        &self,
        x: &[f64],
        u0: &[f64],
        u_ref: &[f64],
        dirs: &[Vec<f64>],
        threshold: f64,
        used: &mut usize,
    ) -> Result<Option<(usize, Vec<f64>)>, SafetyError> {
        let tol = self.tolerance();
        let t0 = (self.config.initial_step * self.control_box.diameter()).max(tol);
        let mut rays: Vec<Ray> = dirs
            .iter()
            .map(|d| {
                let mut t_max = f64::INFINITY;
                for j in 0..d.len() {
                    if d[j] > 0.0 {
                        t_max = t_max.min((self.control_box.upper[j] - u0[j]) / d[j]);
                    } else if d[j] < 0.0 {
                        t_max = t_max.min((self.control_box.lower[j] - u0[j]) / d[j]);
                    }
                }
                let t_max = t_max.max(0.0);
                Ray { dir: d.clone(), t_max, lo: 0.0, t: t0.min(t_max), hi: None, exhausted: t_max <= 0.0 }
            })
            .collect();

        // doubling
        loop {
            let best_hi = rays.iter().filter_map(|r| r.hi).fold(f64::INFINITY, f64::min);
            let active: Vec<usize> =
                (0..rays.len()).filter(|&i| rays[i].hi.is_none() && !rays[i].exhausted && rays[i].t < best_hi).collect();
            if active.is_empty() {
                break;
            }
            let pts: Vec<Vec<f64>> = active.iter().map(|&i| self.point(u0, &rays[i].dir, rays[i].t)).collect();
            *used += pts.len();
            let flags = self.safe_flags(x, &pts, threshold)?;
            for (&i, safe) in active.iter().zip(flags) {
                let r = &mut rays[i];
                if safe {
                    r.hi = Some(r.t);
                } else if r.t >= r.t_max {
                    r.exhausted = true;
                } else {
                    r.lo = r.t;
                    r.t = (2.0 * r.t).min(r.t_max);
                }
            }
        }

        // bisection
        loop {
            let best_hi = rays.iter().filter_map(|r| r.hi).fold(f64::INFINITY, f64::min);
            let active: Vec<usize> = (0..rays.len())
                .filter(|&i| rays[i].hi.is_some_and(|h| h - rays[i].lo > tol) && rays[i].lo < best_hi)
                .collect();
            if active.is_empty() {
                break;
            }
            let mids: Vec<f64> = active.iter().map(|&i| 0.5 * (rays[i].lo + rays[i].hi.unwrap())).collect();
            let pts: Vec<Vec<f64>> = active.iter().zip(&mids).map(|(&i, &m)| self.point(u0, &rays[i].dir, m)).collect();
            *used += pts.len();
            let flags = self.safe_flags(x, &pts, threshold)?;
            for ((&i, m), safe) in active.iter().zip(mids).zip(flags) {
                if safe {
                    rays[i].hi = Some(m);
                } else {
                    rays[i].lo = m;
                }
            }
        }

        let mut best: Option<(usize, Vec<f64>, f64)> = None;
        for (i, r) in rays.iter().enumerate() {
            if let Some(h) = r.hi {
                let u = self.point(u0, &r.dir, h);
                let dist = l2_distance(&u, u_ref);
                if best.as_ref().is_none_or(|b| dist < b.2) {
                    best = Some((i, u, dist));
                }
            }
        }
        Ok(best.map(|(i, u, _)| (i, u)))
    }

    /// Full `U_f` over the fallback control grid.
    pub fn scan(&self, x: &[f64]) -> Result<Vec<(Vec<f64>, UpperBound)>, SafetyError> {
        let grid = control_grid(&self.control_box, self.config.scan_resolution);
        let bounds = self.check.upper_bounds(x, &grid, None)?;
        Ok(grid.into_iter().zip(bounds).map(|(u, b)| (u, b.expect("no skipping requested"))).collect())
    }

    /// Whether the fallback grid scan contains a safe control. Stops at the
    /// first one.
    pub fn scan_has_safe_control(&self, x: &[f64]) -> Result<bool, SafetyError> {
        let threshold = self.check.threshold(x)?;
        let grid = control_grid(&self.control_box, self.config.scan_resolution);
        for chunk in grid.chunks(self.config.scan_resolution.max(1)) {
            if self.safe_flags(x, chunk, threshold)?.into_iter().any(|s| s) {
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub fn project(&self, x: &[f64], u_ref: &[f64]) -> Result<SafeguardResult, SafetyError> {
        let threshold = self.check.threshold(x)?;
        let u0 = self.control_box.clamp(u_ref);
        let mut used = 1;
        let nominal = self.check.upper_bound(x, &u0)?;
        if nominal.value() < threshold {
            return Ok(SafeguardResult {
                control: u0,
                status: SafeguardStatus::NominalSafe,
                u_f_value: nominal.value(),
                threshold,
                samples_used: used,
            });
        }

        let mut found = self.search(x, &u0, u_ref, &self.directions, threshold, &mut used)?.map(|(i, u)| {
            let d = self.directions[i].clone();
            (u, d)
        });
        if found.is_some() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(1);
            let mut spread = 0.5;
            for _ in 0..self.config.refine_rounds {
                let (best_u, best_dir) = found.clone().unwrap();
                let dirs = unit_directions(&mut rng, self.directions.len(), u0.len(), Some((&best_dir, spread)));
                if let Some((i, u)) = self.search(x, &u0, u_ref, &dirs, threshold, &mut used)? {
                    if l2_distance(&u, u_ref) < l2_distance(&best_u, u_ref) {
                        found = Some((u, dirs[i].clone()));
                    }
                }
                spread *= 0.5;
            }
        }
        if let Some((u, _)) = found {
            let b = self.check.upper_bound(x, &u)?;
            return Ok(SafeguardResult {
                control: u,
                status: SafeguardStatus::Projected,
                u_f_value: b.value(),
                threshold,
                samples_used: used + 1,
            });
        }

        let scan = self.scan(x)?;
        used += scan.len();
        let mut safe_best: Option<(usize, f64)> = None;
        let mut lowest = (0usize, f64::INFINITY);
        for (i, (u, b)) in scan.iter().enumerate() {
            let v = b.value();
            if v < lowest.1 {
                lowest = (i, v);
            }
            if v < threshold {
                let dist = l2_distance(u, u_ref);
                if safe_best.is_none_or(|s| dist < s.1) {
                    safe_best = Some((i, dist));
                }
            }
        }
        let (index, status) = match safe_best {
            Some((i, _)) => (i, SafeguardStatus::Projected),
            None => (lowest.0, SafeguardStatus::InfeasibleFallback),
        };
        let (u, b) = &scan[index];
        Ok(SafeguardResult { control: u.clone(), status, u_f_value: b.value(), threshold, samples_used: used })
    }
}
