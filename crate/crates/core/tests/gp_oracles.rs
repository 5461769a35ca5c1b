use gpsafe::gp::{mean_upper_bound, variance_upper_bound, Calibration};
use gpsafe::validation::{in_grid_queries, posterior_bound_suites};
use gpsafe::{BoxDomain, Dataset, Exec, GpModel, Kernel, TransitionSample};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smooth(x: &[f64], u: &[f64]) -> Vec<f64> {
    vec![x[0] + 0.1 * x[1].sin() + 0.05 * u[0], x[1] + 0.1 * (x[0] * u[0]).cos() - 0.1]
}

fn random_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|_| {
            let x = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let u = vec![rng.random_range(-1.0..1.0)];
            let next_state = smooth(&x, &u);
            TransitionSample { state: x, control: u, next_state }
        })
        .collect();
    Dataset::from_samples(2, 1, samples).unwrap()
}

fn fit(ds: &Dataset, kernel: Kernel, tau: f64) -> GpModel {
    let domain = BoxDomain::symmetric(1.0, 3);
    GpModel::fit(kernel, ds, 0.01, &Calibration::new(domain, tau, 1.2)).unwrap()
}

/// Posterior through an explicit LU inverse of the jittered Gram matrix.
fn direct_inverse_posterior(model: &GpModel, ds: &Dataset, w: &[f64]) -> (Vec<f64>, f64) {
    let n = model.len();
    let k = model.kernel();
    let inputs: Vec<Vec<f64>> = ds.samples().iter().map(|s| s.input()).collect();
    let gram = DMatrix::from_fn(n, n, |i, j| k.eval(&inputs[i], &inputs[j]) + if i == j { model.jitter() } else { 0.0 });
    let inv = gram.lu().try_inverse().expect("invertible");
    let kstar = DVector::from_fn(n, |i, _| k.eval(&inputs[i], w));
    let weights = &inv * &kstar;
    let mean = (0..model.n_x())
        .map(|j| (0..n).map(|i| weights[i] * ds.samples()[i].next_state[j]).sum())
        .collect();
    let var = k.signal_variance - kstar.dot(&weights);
    (mean, var)
}

#[test]
fn predictions_match_direct_inverse() {
    let ds = random_dataset(50, 1);
    let model = fit(&ds, Kernel::squared_exponential(1.3, 0.4).unwrap(), 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let x = vec![rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2)];
        let u = vec![rng.random_range(-1.2..1.2)];
        let p = model.predict(&x, &u).unwrap();
        let (mean, var) = direct_inverse_posterior(&model, &ds, &[x[0], x[1], u[0]]);
        for (a, b) in p.mean.iter().zip(&mean) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
        let std = var.max(0.0).sqrt();
        // the variance is a cancellation, so compare it on the prior scale
        assert!((p.std_per_dim[0].powi(2) - var).abs() <= 1e-8 * 1.3, "variance {} vs {}", p.std_per_dim[0], std);
    }
    assert!(worst <= 1e-8, "worst relative mean error {worst}");
}

#[test]
fn variance_never_increases_with_more_data() {
    let full = random_dataset(40, 3);
    let kernel = Kernel::squared_exponential(1.0, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let queries: Vec<(Vec<f64>, Vec<f64>)> = (0..200)
        .map(|_| (vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], vec![rng.random_range(-1.0..1.0)]))
        .collect();
    let mut prev: Option<Vec<f64>> = None;
    for n in [5, 10, 20, 40] {
        let ds = Dataset::from_samples(2, 1, full.samples()[..n].to_vec()).unwrap();
        let m = fit(&ds, kernel, 0.3);
        let sig: Vec<f64> = m.predict_batch(&queries, Exec::Sequential).unwrap().iter().map(|p| p.sigma).collect();
        if let Some(p) = &prev {
            for (a, b) in sig.iter().zip(p) {
                assert!(*a <= b + 1e-9, "sigma grew from {b} to {a} at N = {n}");
            }
        }
        prev = Some(sig);
    }
}

/// One transition per cell center of a regular grid over the joint box, so
/// every joint query lies within `tau` of an input.
fn grid_dataset(per_side: usize) -> (Dataset, f64) {
    let h = 2.0 / per_side as f64;
    let c = |i: usize| -1.0 + (i as f64 + 0.5) * h;
    let mut samples = Vec::new();
    for a in 0..per_side {
        for b in 0..per_side {
            for e in 0..per_side {
                let x = vec![c(a), c(b)];
                let u = vec![c(e)];
                let next_state = smooth(&x, &u);
                samples.push(TransitionSample { state: x, control: u, next_state });
            }
        }
    }
    (Dataset::from_samples(2, 1, samples).unwrap(), 1.5 * h)
}

#[test]
fn variance_and_mean_bounds_hold_on_in_grid_queries() {
    let (ds, tau) = grid_dataset(5);
    for kernel in [Kernel::squared_exponential(1.0, 0.8).unwrap(), Kernel::squared_exponential(2.5, 1.5).unwrap()] {
        let model = fit(&ds, kernel, tau);
        let [var, mean] = posterior_bound_suites(&model, tau, 10_000, 7, Exec::Parallel).unwrap();
        assert_eq!(var.violations, 0, "{var:?}");
        assert_eq!(mean.violations, 0, "{mean:?}");
    }
}

#[test]
fn bounds_also_hold_against_a_brute_force_query_sweep() {
    let (ds, tau) = grid_dataset(4);
    let model = fit(&ds, Kernel::squared_exponential(1.0, 1.0).unwrap(), tau);
    let st = variance_upper_bound(&model, tau).unwrap();
    let mb = mean_upper_bound(&model, tau).unwrap();
    let qs = in_grid_queries(&model, tau, 10_000, 11);
    for (x, u) in &qs {
        let p = model.predict(x, u).unwrap();
        assert!(p.sigma <= st);
        for (m, b) in p.mean.iter().zip(&mb) {
            assert!(m <= b);
        }
    }
}

#[test]
fn sigma_tilde_decreases_with_tau() {
    let (ds, _) = grid_dataset(4);
    let model = fit(&ds, Kernel::squared_exponential(1.0, 1.0).unwrap(), 0.5);
    let mut last = f64::INFINITY;
    for tau in [0.8, 0.4, 0.2, 0.1, 0.05] {
        let s = variance_upper_bound(&model, tau).unwrap();
        assert!(s < last);
        last = s;
    }
}

#[test]
fn model_file_round_trip_through_disk() {
    let ds = random_dataset(30, 5);
    let model = fit(&ds, Kernel::squared_exponential(1.0, 0.6).unwrap(), 0.3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = GpModel::load(&path).unwrap();
    assert_eq!(back.beta_f(), model.beta_f());
    assert_eq!(back.k_inv_frobenius(), model.k_inv_frobenius());
    let a = model.predict(&[0.2, -0.3], &[0.1]).unwrap();
    let b = back.predict(&[0.2, -0.3], &[0.1]).unwrap();
    assert_eq!(a, b);
}
