//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test -p gpsafe --release --features acceptance --test acceptance`
//! runs every criterion; `ACCEPTANCE=1,4` selects a subset. The process exits
//! with status 1 when any selected criterion fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gpsafe::domain::l2_distance;
use gpsafe::gp::Calibration;
use gpsafe::safety_index::SafetyMeasure;
use gpsafe::sim::{feasibility_map, rollout, sample_safe_state, FeasibilityConfig, RandomPolicy, TraceSummary};
use gpsafe::synthesis::{synthesize, SynthesisConfig, SynthesisError, SynthesisOutcome};
use gpsafe::validation::{calibration_suites, posterior_bound_suites};
use gpsafe::{
    BoxDomain, Dataset, Environment, Exec, GpModel, Kernel, LipschitzBundle, Safeguard, SafeguardConfig,
    SafeguardStatus, TransitionSample,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const PAPER_K: f64 = 2.54;
const PAPER_DATASET: usize = 2516;

struct Outcome {
    passed: bool,
    detail: String,
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

struct ArmRun {
    synthesis: SynthesisConfig,
    safeguard: SafeguardConfig,
}

fn load_run(name: &str) -> ArmRun {
    let text = std::fs::read_to_string(configs_dir().join(name)).expect("config readable");
    let v: Value = serde_json::from_str(&text).expect("config is JSON");
    let synthesis = serde_json::from_value(v["synthesis"].clone()).expect("synthesis section");
    let safeguard = v.get("safeguard").map_or_else(SafeguardConfig::default, |s| {
        serde_json::from_value(s.clone()).expect("safeguard section")
    });
    ArmRun { synthesis, safeguard }
}

struct Shared {
    env: Box<dyn Environment>,
    run: ArmRun,
    outcome: SynthesisOutcome,
    synth_time: Duration,
}

impl Shared {
    fn new() -> Self {
        let run = load_run("arm.json");
        let env = run.synthesis.env.build();
        let started = Instant::now();
        let outcome = synthesize(env.as_ref(), &run.synthesis, Exec::Parallel).expect("empirical arm synthesis");
        let synth_time = started.elapsed();
        println!(
            "arm synthesis: k = {:.4}, tau_x = {}, N = {}, beta_f = {:.3}, {:.1?}",
            outcome.certificate.params.k,
            outcome.certificate.tau_x,
            outcome.certificate.grid_size,
            outcome.certificate.beta_f,
            synth_time
        );
        Self { env, run, outcome, synth_time }
    }

    fn guard(&self) -> Safeguard<'_, impl Fn(&[f64]) -> SafetyMeasure + Sync + '_> {
        Safeguard::new(
            self.outcome.certificate.safety_check(&self.outcome.model, self.env.as_ref()),
            self.env.control_box().clone(),
            self.run.safeguard,
        )
    }

    fn rollouts(&self, seeds: impl Iterator<Item = u64>, steps: usize) -> Vec<TraceSummary> {
        let env = self.env.as_ref();
        let guard = self.guard();
        let params = self.outcome.certificate.params;
        seeds
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x0 = sample_safe_state(env, &params, &mut rng, 100_000).expect("safe initial state");
                let mut policy = RandomPolicy::new(env.control_box().clone(), seed.wrapping_add(1));
                let trace = rollout(env, &guard, &mut policy, &x0, steps).expect("rollout");
                TraceSummary::from_trace(&trace, env, params.d_min)
            })
            .collect()
    }
}

fn within(elapsed: Duration, minutes: f64) -> bool {
    elapsed.as_secs_f64() < minutes * 60.0
}

fn criterion_1(s: &Shared) -> Outcome {
    let started = Instant::now();
    let [var, mean] =
        posterior_bound_suites(&s.outcome.model, s.outcome.certificate.tau_x, 10_000, 1, Exec::Parallel).unwrap();
    let elapsed = started.elapsed();
    Outcome {
        passed: var.violations == 0 && mean.violations == 0 && within(elapsed, 1.0),
        detail: format!(
            "variance {}/{} violations (max ratio {:.3e}), mean {}/{} (min slack {:.3e}), {elapsed:.1?} \
             after a {:.1?} synthesis",
            var.violations, var.queries, var.max_ratio, mean.violations, mean.queries, mean.min_slack, s.synth_time
        ),
    }
}

/// Damped pendulum with a torque input.
struct Pendulum {
    sbox: BoxDomain,
    cbox: BoxDomain,
}

const PENDULUM_DT: f64 = 0.1;

impl Environment for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }
    fn state_box(&self) -> &BoxDomain {
        &self.sbox
    }
    fn control_box(&self) -> &BoxDomain {
        &self.cbox
    }
    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let w = x[1] + PENDULUM_DT * (-x[0].sin() - 0.2 * x[1] + u[0]);
        vec![x[0] + PENDULUM_DT * x[1], w]
    }
    fn measure(&self, x: &[f64]) -> SafetyMeasure {
        SafetyMeasure { d: 1.0 - x[0], d_dot: -x[1] }
    }
    fn lipschitz(&self) -> LipschitzBundle {
        LipschitzBundle { l_f: 1.0 + PENDULUM_DT, l_dx: 1.0, l_ddx: 1.0, l_delta_ddot: 2.0 * PENDULUM_DT }
    }
    fn d_max(&self) -> f64 {
        2.0
    }
    fn d_min(&self) -> f64 {
        0.1
    }
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let env = Pendulum { sbox: BoxDomain::symmetric(1.0, 2), cbox: BoxDomain::symmetric(1.0, 1) };
    let per_side = 8;
    let h = 2.0 / per_side as f64;
    let c = |i: usize| -1.0 + (i as f64 + 0.5) * h;
    let mut samples = Vec::new();
    for a in 0..per_side {
        for b in 0..per_side {
            for e in 0..per_side {
                let (x, u) = (vec![c(a), c(b)], vec![c(e)]);
                let next_state = env.step(&x, &u);
                samples.push(TransitionSample { state: x, control: u, next_state });
            }
        }
    }
    let ds = Dataset::from_samples(2, 1, samples).unwrap();
    let tau = 1.5 * h;
    let domain = env.state_box().product(env.control_box());
    let kernel = Kernel::squared_exponential(1.0, 1.0).unwrap();
    let model = GpModel::fit(kernel, &ds, 0.01, &Calibration::new(domain.clone(), tau, env.lipschitz().l_f)).unwrap();
    let [cal, strict] = calibration_suites(&env, &model, &domain, 10_000, 2, Exec::Parallel).unwrap();
    let coverage = 1.0 - cal.violations as f64 / cal.queries as f64;
    let strict_coverage = 1.0 - strict.violations as f64 / strict.queries as f64;
    let elapsed = started.elapsed();
    Outcome {
        passed: coverage >= 0.99 && within(elapsed, 2.0),
        detail: format!(
            "coverage {coverage:.4} with gamma, {strict_coverage:.4} without; beta_f = {:.3}, N = {}, {elapsed:.1?}",
            model.beta_f(),
            ds.len()
        ),
    }
}

fn criterion_3(s: &Shared) -> Outcome {
    let run = load_run("arm_certified.json");
    let env = run.synthesis.env.build();
    let started = Instant::now();
    let result = synthesize(env.as_ref(), &run.synthesis, Exec::Parallel);
    let elapsed = started.elapsed();
    let emp = &s.outcome.certificate;
    let empirical = format!(
        "empirical mode for reference: k = {:.3}, N = {} at tau_x = {}",
        emp.params.k, emp.grid_size, emp.tau_x
    );
    match result {
        Ok(out) => {
            let c = &out.certificate;
            let k_ok = (1.0..=20.0).contains(&c.params.k);
            let near = (c.tau_x - 0.174).abs() <= 0.05;
            let n_ok = !near || (c.grid_size as f64 - PAPER_DATASET as f64).abs() <= 0.2 * PAPER_DATASET as f64;
            Outcome {
                passed: c.certified && c.params.sigma == 0.0 && c.params.n == 1.0 && k_ok && n_ok && within(elapsed, 30.0),
                detail: format!(
                    "certified = {}, k = {:.3} (paper {PAPER_K}), N = {} at tau_x = {}, {elapsed:.1?}",
                    c.certified, c.params.k, c.grid_size, c.tau_x
                ),
            }
        }
        Err(SynthesisError::Failed { reason, .. }) => Outcome {
            passed: false,
            detail: format!("certified synthesis did not converge: {reason}; {empirical}; {elapsed:.1?}"),
        },
        Err(e) => Outcome { passed: false, detail: format!("certified synthesis error: {e}; {empirical}") },
    }
}

fn criterion_4(s: &Shared) -> Outcome {
    let started = Instant::now();
    let sums = s.rollouts([0, 1].into_iter(), 2000);
    let elapsed = started.elapsed();
    let bound: usize = sums.iter().map(|t| t.bound_violations).sum();
    let unsafe_: usize = sums.iter().map(|t| t.unsafe_controls).sum();
    let projected: usize = sums.iter().map(|t| t.projected_count).sum();
    let fallback: usize = sums.iter().map(|t| t.fallback_count).sum();
    Outcome {
        passed: bound == 0 && unsafe_ == 0 && within(elapsed, 5.0),
        detail: format!(
            "4000 steps: {bound} bound violations, {unsafe_} unsafe safeguarded controls, {projected} projected, \
             {fallback} fallbacks, mean gap {:.4}, {elapsed:.1?}",
            sums.iter().map(|t| t.mean_gap).sum::<f64>() / sums.len() as f64
        ),
    }
}

fn criterion_5(s: &Shared) -> Outcome {
    let started = Instant::now();
    let env = s.env.as_ref();
    let config = FeasibilityConfig { cells: vec![8, 16], samples_per_cell: 100, seed: 0 };
    let map = feasibility_map(env, &s.guard(), &config, Exec::Parallel).unwrap();
    let weak = s.outcome.certificate.with_gain(0.1, env.d_max()).unwrap();
    let guard = Safeguard::new(weak.safety_check(&s.outcome.model, env), env.control_box().clone(), s.run.safeguard);
    let weak_map = feasibility_map(env, &guard, &config, Exec::Parallel).unwrap();
    let elapsed = started.elapsed();
    Outcome {
        passed: map.total() == 0 && weak_map.total() > 0 && within(elapsed, 15.0),
        detail: format!(
            "k = {:.3}: {} of {} infeasible; k = 0.1: {} of {}; {elapsed:.1?}",
            map.meta.k,
            map.total(),
            map.meta.total_samples,
            weak_map.total(),
            weak_map.meta.total_samples
        ),
    }
}

fn criterion_6(s: &Shared) -> Outcome {
    let started = Instant::now();
    let sums = s.rollouts(100..120, 2000);
    let elapsed = started.elapsed();
    let inv: usize = sums.iter().map(|t| t.invariance_violations).sum();
    let con: usize = sums.iter().map(|t| t.constraint_violations).sum();
    let fb: usize = sums.iter().map(|t| t.fallback_count).sum();
    let max_phi = sums.iter().filter_map(|t| t.max_phi).fold(f64::NEG_INFINITY, f64::max);
    let min_d = sums.iter().filter_map(|t| t.min_d).fold(f64::INFINITY, f64::min);
    Outcome {
        passed: inv == 0 && con == 0 && fb == 0 && within(elapsed, 20.0),
        detail: format!(
            "20 x 2000 steps: {inv} states with phi > 0, {con} with d < d_min, {fb} fallbacks, max phi {max_phi:.4}, \
             min d {min_d:.4}, {elapsed:.1?}"
        ),
    }
}

fn criterion_7(s: &Shared) -> Outcome {
    let started = Instant::now();
    let env = s.env.as_ref();
    let tau_star = 1.0;
    let taus = [tau_star, 7.0 * tau_star / 8.0, tau_star / 2.0, 3.0 * tau_star / 8.0];
    let mut outcomes = Vec::new();
    for &tau in &taus {
        let config = SynthesisConfig { tau0: tau, ..s.run.synthesis.clone() };
        outcomes.push(synthesize(env, &config, Exec::Parallel).expect("ablation synthesis"));
    }
    // one fixed trajectory, one fixed safety index: only the model changes
    let reference = &outcomes[0].certificate;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut x = sample_safe_state(env, &reference.params, &mut rng, 100_000).unwrap();
    let mut path = Vec::new();
    for _ in 0..500 {
        let u = env.control_box().sample(&mut rng);
        let next = env.step(&x, &u);
        path.push((x, u));
        x = next;
    }
    let gaps: Vec<f64> = outcomes
        .iter()
        .map(|o| {
            let check = reference.safety_check(&o.model, env);
            path.iter()
                .map(|(x, u)| check.upper_bound(x, u).unwrap().value() - check.phi(&env.step(x, u)).unwrap())
                .sum::<f64>()
                / path.len() as f64
        })
        .collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0]);
    let elapsed = started.elapsed();
    let table: Vec<String> = taus
        .iter()
        .zip(&outcomes)
        .zip(&gaps)
        .map(|((t, o), g)| format!("tau {t:.3} (N {}): {g:.4e}", o.certificate.grid_size))
        .collect();
    Outcome { passed: monotone && within(elapsed, 30.0), detail: format!("{}; {elapsed:.1?}", table.join(", ")) }
}

fn direct_inverse_check() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let f = |x: &[f64], u: &[f64]| vec![x[0] + 0.1 * x[1].sin() + 0.05 * u[0], x[1] + 0.1 * (x[0] * u[0]).cos()];
    let samples: Vec<TransitionSample> = (0..50)
        .map(|_| {
            let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let u = vec![rng.random_range(-1.0..1.0)];
            TransitionSample { next_state: f(&x, &u), state: x, control: u }
        })
        .collect();
    let ds = Dataset::from_samples(2, 1, samples).unwrap();
    let kernel = Kernel::squared_exponential(1.0, 0.5).unwrap();
    let model = GpModel::fit(kernel, &ds, 0.01, &Calibration::new(BoxDomain::symmetric(1.0, 3), 0.3, 1.2)).unwrap();
    let n = model.len();
    let inputs: Vec<&[f64]> = (0..n).map(|i| model.input(i)).collect();
    let gram =
        DMatrix::from_fn(n, n, |i, j| kernel.eval(inputs[i], inputs[j]) + if i == j { model.jitter() } else { 0.0 });
    let inv = gram.lu().try_inverse().unwrap();
    let (mut mean_err, mut var_err) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let w = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let kstar = DVector::from_fn(n, |i, _| kernel.eval(inputs[i], &w));
        let weights = &inv * &kstar;
        let p = model.predict(&w[..2], &w[2..]).unwrap();
        for (j, m) in p.mean.iter().enumerate() {
            let oracle: f64 = (0..n).map(|i| weights[i] * ds.samples()[i].next_state[j]).sum();
            mean_err = mean_err.max((m - oracle).abs() / oracle.abs().max(1.0));
        }
        let var = kernel.signal_variance - kstar.dot(&weights);
        var_err = var_err.max((p.std_per_dim[0].powi(2) - var).abs() / kernel.signal_variance);
    }
    (mean_err, var_err)
}

fn criterion_8(s: &Shared) -> Outcome {
    let started = Instant::now();
    let (mean_err, var_err) = direct_inverse_check();
    let env = s.env.as_ref();
    let guard = s.guard();
    let check = guard.check();
    let cbox = env.control_box();
    let diameter = l2_distance(&cbox.lower, &cbox.upper);
    let side = 201;
    let axis = |j: usize| -> Vec<f64> {
        (0..side).map(|i| cbox.lower[j] + (cbox.upper[j] - cbox.lower[j]) * i as f64 / (side - 1) as f64).collect()
    };
    let (a0, a1) = (axis(0), axis(1));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut queries, mut worst, mut failures) = (0, 0.0f64, 0);
    while queries < 100 {
        let x = env.state_box().sample(&mut rng);
        if check.phi(&x).unwrap() <= 0.0 {
            continue;
        }
        let u_ref = cbox.sample(&mut rng);
        if check.is_safe(&x, &u_ref).unwrap() {
            continue;
        }
        queries += 1;
        let r = guard.project(&x, &u_ref).unwrap();
        let threshold = check.threshold(&x).unwrap();
        // nearest safe point of the 201 x 201 grid, scanned in order of distance
        let mut grid: Vec<(f64, Vec<f64>)> =
            a0.iter().flat_map(|&p| a1.iter().map(move |&q| vec![p, q])).map(|u| (l2_distance(&u, &u_ref), u)).collect();
        grid.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut oracle = None;
        for chunk in grid.chunks(256) {
            let pts: Vec<Vec<f64>> = chunk.iter().map(|(_, u)| u.clone()).collect();
            let bounds = check.upper_bounds(&x, &pts, Some(threshold)).unwrap();
            if let Some(i) = bounds.iter().position(|b| b.is_some_and(|b| b.value() < threshold)) {
                oracle = Some(chunk[i].0);
                break;
            }
        }
        match (oracle, r.status) {
            (Some(best), SafeguardStatus::Projected) => {
                let got = l2_distance(&r.control, &u_ref);
                let excess = (got - best) / best;
                worst = worst.max(excess);
                if got > 1.05 * best + s.run.safeguard.tolerance * diameter {
                    failures += 1;
                }
            }
            (None, _) => {}
            (Some(_), _) => failures += 1,
        }
    }
    let elapsed = started.elapsed();
    Outcome {
        passed: mean_err <= 1e-8 && var_err <= 1e-8 && failures == 0 && within(elapsed, 5.0),
        detail: format!(
            "direct inverse: mean {mean_err:.2e}, variance {var_err:.2e}; projection: {failures} of {queries} \
             beyond 5% of the 201x201 oracle, worst excess {:.2}%; {elapsed:.1?}",
            100.0 * worst
        ),
    }
}

fn main() -> ExitCode {
    let selected: Vec<usize> = match std::env::var("ACCEPTANCE") {
        Ok(v) if !v.trim().is_empty() => v.split(',').map(|c| c.trim().parse().expect("criterion number")).collect(),
        _ => (1..=8).collect(),
    };
    let needs_arm = selected.iter().any(|&c| c != 2);
    let shared = needs_arm.then(Shared::new);
    let arm = || shared.as_ref().expect("arm synthesis");
    let mut all = true;
    for c in selected {
        let outcome = match c {
            1 => criterion_1(arm()),
            2 => criterion_2(),
            3 => criterion_3(arm()),
            4 => criterion_4(arm()),
            5 => criterion_5(arm()),
            6 => criterion_6(arm()),
            7 => criterion_7(arm()),
            8 => criterion_8(arm()),
            other => panic!("no criterion {other}"),
        };
        all &= outcome.passed;
        println!("{} criterion {c}: {}", if outcome.passed { "PASS" } else { "FAIL" }, outcome.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
