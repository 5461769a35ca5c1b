//! Empirical sweeps that check the closed-form bounds of a fitted model and
//! the Lipschitz bundle of an environment against random queries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::domain::{l1_distance, BoxDomain};
use crate::env::Environment;
use crate::gp::{mean_upper_bound, variance_upper_bound, GpError, GpModel};
use crate::parallel::Exec;

/// Indices of violating queries kept in a report.
const MAX_LISTED: usize = 20;
/// Absolute slack for round-off in the random-pair Lipschitz checks.
const LIPSCHITZ_ROUNDOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub queries: usize,
    pub violations: usize,
    /// Smallest `bound - observed` over the queries.
    pub min_slack: f64,
    /// Largest `observed / bound` over the queries with a positive bound.
    pub max_ratio: f64,
    pub violating: Vec<usize>,
    pub passed: bool,
}

impl SuiteReport {
    /// Builds a report from `(observed, bound)` pairs; a query violates when
    /// `observed > bound`. `allowed` violations still pass.
    pub fn from_pairs(name: &str, pairs: &[(f64, f64)], allowed: usize) -> Self {
        let mut r = SuiteReport {
            name: name.to_string(),
            queries: pairs.len(),
            violations: 0,
            min_slack: f64::INFINITY,
            max_ratio: 0.0,
            violating: Vec::new(),
            passed: true,
        };
        for (i, &(obs, bound)) in pairs.iter().enumerate() {
            let ok = obs <= bound;
            if !ok {
                r.violations += 1;
                if r.violating.len() < MAX_LISTED {
                    r.violating.push(i);
                }
            }
            r.min_slack = r.min_slack.min(bound - obs);
            if bound > 0.0 {
                r.max_ratio = r.max_ratio.max(obs / bound);
            }
        }
        r.passed = r.violations <= allowed;
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub suites: Vec<SuiteReport>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn new(suites: Vec<SuiteReport>) -> Self {
        let passed = suites.iter().all(|s| s.passed);
        Self { suites, passed }
    }
}

/// Uniform sample from the 1-norm ball of radius `r` around `center`.
pub fn sample_l1_ball<R: Rng + ?Sized>(rng: &mut R, center: &[f64], r: f64) -> Vec<f64> {
    let d = center.len();
    let e: Vec<f64> = (0..=d).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    center
        .iter()
        .zip(&e)
        .map(|(c, ei)| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            c + sign * r * ei / total
        })
        .collect()
}

/// Queries within `tau` (1-norm, joint input) of a random training input.
pub fn in_grid_queries(model: &GpModel, tau: f64, count: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = model.n_x();
    (0..count)
        .map(|_| {
            let i = rng.random_range(0..model.len());
            let w = sample_l1_ball(&mut rng, model.input(i), tau);
            (w[..n_x].to_vec(), w[n_x..].to_vec())
        })
        .collect()
}

/// `sigma_f <= sigma_tilde` and per-dimension `mu <= mean bound` on
/// in-grid queries.
pub fn posterior_bound_suites(
    model: &GpModel,
    tau: f64,
    queries: usize,
    seed: u64,
    exec: Exec,
) -> Result<[SuiteReport; 2], GpError> {
    let qs = in_grid_queries(model, tau, queries, seed);
    let preds = model.predict_batch(&qs, exec)?;
    let sigma_tilde = variance_upper_bound(model, tau)?;
    let mean_bound = mean_upper_bound(model, tau)?;
    let var: Vec<(f64, f64)> = preds.iter().map(|p| (p.sigma, sigma_tilde)).collect();
    let mean: Vec<(f64, f64)> = preds
        .iter()
        .map(|p| {
            // worst dimension relative to its own bound
            p.mean
                .iter()
                .zip(&mean_bound)
                .map(|(m, b)| (*m, *b))
                .max_by(|a, b| (a.0 - a.1).total_cmp(&(b.0 - b.1)))
                .unwrap()
        })
        .collect();
    Ok([SuiteReport::from_pairs("variance-bound", &var, 0), SuiteReport::from_pairs("mean-bound", &mean, 0)])
}

/// Coverage of `|f - mu_f|_1 <= beta_f sigma_f + gamma` on uniform queries
/// over `domain` (joint state-control box), and of the same bound without
/// `gamma` as used by `U_f`. Each passes when its miss rate is at most
/// `delta`.
pub fn calibration_suites(
    env: &dyn Environment,
    model: &GpModel,
    domain: &BoxDomain,
    queries: usize,
    seed: u64,
    exec: Exec,
) -> Result<[SuiteReport; 2], GpError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = model.n_x();
    let qs: Vec<(Vec<f64>, Vec<f64>)> = (0..queries)
        .map(|_| {
            let w = domain.sample(&mut rng);
            (w[..n_x].to_vec(), w[n_x..].to_vec())
        })
        .collect();
    let preds = model.predict_batch(&qs, exec)?;
    let gamma = model.error_bound().map_or(0.0, |b| b.gamma);
    let errors: Vec<(f64, f64)> =
        qs.iter().zip(&preds).map(|((x, u), p)| (l1_distance(&env.step(x, u), &p.mean), model.beta_f() * p.sigma)).collect();
    let with_gamma: Vec<(f64, f64)> = errors.iter().map(|&(e, b)| (e, b + gamma)).collect();
    let allowed = (model.delta() * queries as f64).floor() as usize;
    Ok([
        SuiteReport::from_pairs("calibration", &with_gamma, allowed),
        SuiteReport::from_pairs("calibration-without-gamma", &errors, allowed),
    ])
}

/// Random-pair checks of every constant in the environment's Lipschitz
/// bundle, all in the 1-norm.
pub fn lipschitz_suites(env: &dyn Environment, pairs: usize, seed: u64) -> [SuiteReport; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = env.lipschitz();
    let (sbox, cbox) = (env.state_box(), env.control_box());
    let mut f = Vec::with_capacity(pairs);
    let mut d = Vec::with_capacity(pairs);
    let mut dd = Vec::with_capacity(pairs);
    let mut delta = Vec::with_capacity(pairs);
    for _ in 0..pairs {
        let (x1, x2) = (sbox.sample(&mut rng), sbox.sample(&mut rng));
        let (u1, u2) = (cbox.sample(&mut rng), cbox.sample(&mut rng));
        let dx = l1_distance(&x1, &x2);
        let dw = dx + l1_distance(&u1, &u2);
        let fd = l1_distance(&env.step(&x1, &u1), &env.step(&x2, &u2));
        let tol = LIPSCHITZ_ROUNDOFF;
        f.push((fd, b.l_f * dw + tol));
        let (m1, m2) = (env.measure(&x1), env.measure(&x2));
        d.push(((m1.d - m2.d).abs(), b.l_dx * dx + tol));
        dd.push(((m1.d_dot - m2.d_dot).abs(), b.l_ddx * dx + tol));
        let g = (env.delta_d_dot(&x1, &u1) - env.delta_d_dot(&x2, &u1)).abs();
        delta.push((g, b.l_delta_ddot * dx + tol));
    }
    [
        SuiteReport::from_pairs("lipschitz-f", &f, 0),
        SuiteReport::from_pairs("lipschitz-d", &d, 0),
        SuiteReport::from_pairs("lipschitz-d-dot", &dd, 0),
        SuiteReport::from_pairs("lipschitz-delta-d-dot", &delta, 0),
    ]
}

/// Every suite, as run by the command-line `validate` command.
#[allow(clippy::too_many_arguments)]
pub fn validate_model(
    env: &dyn Environment,
    model: &GpModel,
    tau: f64,
    queries: usize,
    lipschitz_pairs: usize,
    seed: u64,
    exec: Exec,
) -> Result<ValidationReport, GpError> {
    let [var, mean] = posterior_bound_suites(model, tau, queries, seed, exec)?;
    let domain = env.state_box().product(env.control_box());
    let [cal, strict] = calibration_suites(env, model, &domain, queries, seed.wrapping_add(1), exec)?;
    let mut suites = vec![var, mean, cal, strict];
    suites.extend(lipschitz_suites(env, lipschitz_pairs, seed.wrapping_add(2)));
    Ok(ValidationReport::new(suites))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = [0.5, -1.0, 2.0];
        for _ in 0..1000 {
            let p = sample_l1_ball(&mut rng, &c, 0.3);
            assert!(l1_distance(&p, &c) <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn report_counts_and_allowance() {
        let r = SuiteReport::from_pairs("x", &[(1.0, 2.0), (3.0, 2.0), (0.0, 0.0)], 1);
        assert_eq!(r.violations, 1);
        assert_eq!(r.violating, vec![1]);
        assert!(r.passed);
        assert_eq!(r.min_slack, -1.0);
        assert_eq!(r.max_ratio, 1.5);
        assert!(!SuiteReport::from_pairs("x", &[(3.0, 2.0)], 0).passed);
    }
}
