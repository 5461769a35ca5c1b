use std::path::Path;

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use super::bounds::{uniform_error_beta, variance_upper_bound, UniformErrorBound};
use super::{Dataset, GpError, Kernel};
use crate::domain::BoxDomain;
use crate::parallel::Exec;

/// Relative jitter schedule: `1e-10 * s^2` escalated tenfold up to `1e-6 * s^2`.
const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;
/// Cap on halvings of the covering gap when folding `gamma` into `beta_f`.
const MAX_COVER_HALVINGS: usize = 200;

/// Inputs for choosing the confidence scale `beta_f` of the uniform error
/// bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// Joint (state, control) box the bound must hold on.
    pub domain: BoxDomain,
    /// 1-norm gap of the data discretization, used for `sigma_tilde`.
    pub data_tau: f64,
    /// Lipschitz constant of the true dynamics (per output dimension).
    pub l_f: f64,
    /// The covering gap is shrunk until `gamma <= gamma_fraction * beta_f * sigma_tilde`.
    pub gamma_fraction: f64,
}

impl Calibration {
    pub fn new(domain: BoxDomain, data_tau: f64, l_f: f64) -> Self {
        Self { domain, data_tau, l_f, gamma_fraction: 0.01 }
    }
}

/// Posterior prediction at one query.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictResult {
    /// Posterior mean of the next state.
    pub mean: Vec<f64>,
    /// Sum over output dimensions of the posterior standard deviation.
    pub sigma: f64,
    pub std_per_dim: Vec<f64>,
}

/// Quantities of a fitted model that enter the discretization condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpSummary {
    pub n: usize,
    pub k_inv_frobenius: f64,
    pub max_kernel: f64,
    pub kernel_lipschitz: f64,
    pub jitter: f64,
}

/// Fitted multi-output GP. Immutable after construction, so it can be
/// shared across prediction workers.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: Kernel,
    n_x: usize,
    n_u: usize,
    /// Row-major `N x (n_x + n_u)` training inputs.
    inputs: Vec<f64>,
    /// `N x n_x` observations.
    outputs: DMatrix<f64>,
    /// Cholesky factor `L` of `K + jitter I`, lower triangle packed row by
    /// row (row `i` starts at `i (i + 1) / 2`).
    lower: Vec<f64>,
    /// `(K + jitter I)^-1 y` per output column.
    alpha: DMatrix<f64>,
    jitter: f64,
    delta: f64,
    beta_f: f64,
    error_bound: Option<UniformErrorBound>,
    k_inv_frobenius: f64,
    k_inv_y_norm: Vec<f64>,
    output_max: Vec<f64>,
}

impl GpModel {
    /// Fits the model and selects `beta_f` from the uniform error bound on
    /// `calibration.domain`.
    pub fn fit(kernel: Kernel, dataset: &Dataset, delta: f64, calibration: &Calibration) -> Result<Self, GpError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(GpError::InvalidProbability(delta));
        }
        let mut model = Self::fit_posterior(kernel, dataset, delta, None, None)?;
        let bound = model.fold_error_budget(calibration)?;
        model.beta_f = bound.sqrt_beta;
        model.error_bound = Some(bound);
        Ok(model)
    }

    /// Posterior only; `beta_f` is left at 1 until set explicitly.
    fn fit_posterior(
        kernel: Kernel,
        dataset: &Dataset,
        delta: f64,
        fixed_jitter: Option<f64>,
        known_k_inv_frobenius: Option<f64>,
    ) -> Result<Self, GpError> {
        kernel.validate()?;
        if dataset.is_empty() {
            return Err(GpError::EmptyDataset);
        }
        let n = dataset.len();
        let (n_x, n_u) = (dataset.n_x(), dataset.n_u());
        let dim = n_x + n_u;
        let mut inputs = Vec::with_capacity(n * dim);
        for s in dataset.samples() {
            inputs.extend(s.state.iter().chain(&s.control));
        }
        let outputs = DMatrix::from_fn(n, n_x, |i, j| dataset.samples()[i].next_state[j]);

        let mut gram = DMatrix::zeros(n, n);
        let mut closest = (0, 0, f64::INFINITY);
        for i in 0..n {
            let wi = &inputs[i * dim..(i + 1) * dim];
            gram[(i, i)] = kernel.signal_variance;
            for j in 0..i {
                let wj = &inputs[j * dim..(j + 1) * dim];
                let sq: f64 = wi.iter().zip(wj).map(|(a, b)| (a - b) * (a - b)).sum();
                if sq == 0.0 {
                    return Err(GpError::DuplicateInput { first: j, second: i });
                }
                if sq < closest.2 {
                    closest = (j, i, sq);
                }
                let v = kernel.from_sq_distance(sq);
                gram[(i, j)] = v;
                gram[(j, i)] = v;
            }
        }

        let scale = kernel.signal_variance.max(f64::MIN_POSITIVE);
        let schedule: Vec<f64> = match fixed_jitter {
            Some(j) => vec![j],
            None => {
                let mut s = Vec::new();
                let mut rel = JITTER_START;
                while rel <= JITTER_MAX * (1.0 + 1e-9) {
                    s.push(rel * scale);
                    rel *= 10.0;
                }
                s
            }
        };
        let mut factor = None;
        for &jitter in &schedule {
            let mut k = gram.clone();
            for i in 0..n {
                k[(i, i)] += jitter;
            }
            if let Some(c) = Cholesky::new(k) {
                factor = Some((c, jitter));
                break;
            }
        }
        let (chol, jitter) = factor.ok_or(GpError::Factorization {
            jitter: *schedule.last().unwrap(),
            row_a: closest.0,
            row_b: closest.1,
            sq_distance: closest.2,
        })?;
        drop(gram);

        let alpha = chol.solve(&outputs);
        let k_inv_frobenius = known_k_inv_frobenius.unwrap_or_else(|| chol.inverse().norm());
        let l = chol.l_dirty();
        let mut lower = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            lower.extend((0..=i).map(|j| l[(i, j)]));
        }
        drop(chol);
        let k_inv_y_norm = (0..n_x).map(|j| alpha.column(j).norm()).collect();
        let output_max = (0..n_x).map(|j| outputs.column(j).max()).collect();
        Ok(Self {
            kernel,
            n_x,
            n_u,
            inputs,
            outputs,
            lower,
            alpha,
            jitter,
            delta,
            beta_f: 1.0,
            error_bound: None,
            k_inv_frobenius,
            k_inv_y_norm,
            output_max,
        })
    }

    /// Shrinks the covering gap until `gamma` is a negligible fraction of the
    /// `beta_f`-scaled variance bound, so `U_f` may omit it.
    fn fold_error_budget(&self, cal: &Calibration) -> Result<UniformErrorBound, GpError> {
        let sigma_tilde = variance_upper_bound(self, cal.data_tau)?;
        let mut tau = if cal.data_tau > 0.0 { cal.data_tau } else { 1.0 };
        let mut bound = uniform_error_beta(self, &cal.domain, self.delta, tau, cal.l_f)?;
        for _ in 0..MAX_COVER_HALVINGS {
            if bound.gamma <= cal.gamma_fraction * bound.sqrt_beta * sigma_tilde {
                break;
            }
            tau *= 0.5;
            bound = uniform_error_beta(self, &cal.domain, self.delta, tau, cal.l_f)?;
        }
        Ok(bound)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn input_dim(&self) -> usize {
        self.n_x + self.n_u
    }

    pub fn len(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input(&self, i: usize) -> &[f64] {
        let d = self.input_dim();
        &self.inputs[i * d..(i + 1) * d]
    }

    pub fn output(&self, i: usize) -> Vec<f64> {
        self.outputs.row(i).iter().copied().collect()
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Upper bound on `sigma` at any training input: the posterior variance
    /// of each dimension there cannot exceed the diagonal jitter, up to
    /// round-off in the triangular solve.
    pub fn interpolation_tolerance(&self) -> f64 {
        let roundoff = 64.0 * self.len() as f64 * f64::EPSILON * self.kernel.signal_variance;
        self.n_x as f64 * (self.jitter + roundoff).sqrt()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn beta_f(&self) -> f64 {
        self.beta_f
    }

    pub fn error_bound(&self) -> Option<&UniformErrorBound> {
        self.error_bound.as_ref()
    }

    /// Returns a copy with `beta_f` replaced, keeping the posterior.
    pub fn with_beta_f(&self, beta_f: f64) -> Self {
        let mut m = self.clone();
        m.beta_f = beta_f;
        m
    }

    pub fn kernel_lipschitz(&self) -> f64 {
        self.kernel.lipschitz()
    }

    pub fn k_inv_frobenius(&self) -> f64 {
        self.k_inv_frobenius
    }

    pub fn k_inv_y_norm(&self) -> &[f64] {
        &self.k_inv_y_norm
    }

    pub fn output_max(&self) -> &[f64] {
        &self.output_max
    }

    pub fn summary(&self) -> GpSummary {
        GpSummary {
            n: self.len(),
            k_inv_frobenius: self.k_inv_frobenius,
            max_kernel: self.kernel.max_value(),
            kernel_lipschitz: self.kernel.lipschitz(),
            jitter: self.jitter,
        }
    }

    /// Posterior mean and summed standard deviation at `(x, u)`.
    pub fn predict(&self, x: &[f64], u: &[f64]) -> Result<PredictResult, GpError> {
        Ok(self.predict_joint(&self.joint_input(x, u)?))
    }

    fn predict_joint(&self, w: &[f64]) -> PredictResult {
        let kstar = self.kstar(w);
        let mean = self.mean_from_kstar(&kstar);
        let std = self.std_batch(&[kstar])[0];
        PredictResult { mean, sigma: self.n_x as f64 * std, std_per_dim: vec![std; self.n_x] }
    }

    /// Validates a query and returns the joint input `w = (x, u)`.
    pub fn joint_input(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, GpError> {
        if x.len() != self.n_x {
            return Err(GpError::DimensionMismatch { expected: self.n_x, got: x.len() });
        }
        if u.len() != self.n_u {
            return Err(GpError::DimensionMismatch { expected: self.n_u, got: u.len() });
        }
        if !x.iter().chain(u).all(|v| v.is_finite()) {
            return Err(GpError::NonFinite("prediction query"));
        }
        let mut w = Vec::with_capacity(self.input_dim());
        w.extend_from_slice(x);
        w.extend_from_slice(u);
        Ok(w)
    }

    /// Cross-covariances `k(w_i, w)` against every training input.
    pub fn kstar(&self, w: &[f64]) -> Vec<f64> {
        let d = self.input_dim();
        (0..self.len()).map(|i| self.kernel.eval(&self.inputs[i * d..(i + 1) * d], w)).collect()
    }

    pub fn mean_from_kstar(&self, kstar: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..self.n_x).map(|j| dot(&self.alpha.as_slice()[j * n..(j + 1) * n], kstar)).collect()
    }

    /// Per-dimension posterior standard deviation for several
    /// cross-covariance vectors. The triangular factor is streamed once for
    /// the whole batch; each result is bit-identical to a solo evaluation.
    pub fn std_batch(&self, kstars: &[Vec<f64>]) -> Vec<f64> {
        let n = self.len();
        let mut v: Vec<Vec<f64>> = kstars.to_vec();
        for i in 0..n {
            let row = &self.lower[i * (i + 1) / 2..(i + 1) * (i + 2) / 2];
            let (off, pivot) = (&row[..i], row[i]);
            let mut groups = v.chunks_exact_mut(4);
            for g in &mut groups {
                let s = dot4(off, [&g[0][..i], &g[1][..i], &g[2][..i], &g[3][..i]]);
                for (vq, sq) in g.iter_mut().zip(s) {
                    vq[i] = (vq[i] - sq) / pivot;
                }
            }
            for vq in groups.into_remainder() {
                let s = dot(off, &vq[..i]);
                vq[i] = (vq[i] - s) / pivot;
            }
        }
        v.iter().map(|vq| (self.kernel.signal_variance - dot(vq, vq)).max(0.0).sqrt()).collect()
    }

    /// Predictions for many `(x, u)` queries, in query order.
    pub fn predict_batch(&self, queries: &[(Vec<f64>, Vec<f64>)], exec: Exec) -> Result<Vec<PredictResult>, GpError> {
        const CHUNK: usize = 32;
        let joints = queries.iter().map(|(x, u)| self.joint_input(x, u)).collect::<Result<Vec<_>, _>>()?;
        let chunks = exec.map(joints.len().div_ceil(CHUNK), |c| {
            let ws = &joints[c * CHUNK..((c + 1) * CHUNK).min(joints.len())];
            let kstars: Vec<Vec<f64>> = ws.iter().map(|w| self.kstar(w)).collect();
            let stds = self.std_batch(&kstars);
            kstars
                .iter()
                .zip(stds)
                .map(|(k, std)| PredictResult {
                    mean: self.mean_from_kstar(k),
                    sigma: self.n_x as f64 * std,
                    std_per_dim: vec![std; self.n_x],
                })
                .collect::<Vec<_>>()
        });
        Ok(chunks.into_iter().flatten().collect())
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            kernel: self.kernel,
            n_x: self.n_x,
            n_u: self.n_u,
            delta: self.delta,
            beta_f: self.beta_f,
            jitter: self.jitter,
            error_bound: self.error_bound.clone(),
            k_inv_frobenius: Some(self.k_inv_frobenius),
            inputs: (0..self.len()).map(|i| self.input(i).to_vec()).collect(),
            outputs: (0..self.len()).map(|i| self.output(i)).collect(),
            alpha: (0..self.len()).map(|i| self.alpha.row(i).iter().copied().collect()).collect(),
        }
    }

    /// Rebuilds a model from its export by refactorizing with the recorded
    /// jitter; the stored alpha is checked against the recomputed one.
    pub fn from_file(file: &ModelFile) -> Result<Self, GpError> {
        let samples = file
            .inputs
            .iter()
            .zip(&file.outputs)
            .map(|(w, y)| {
                if w.len() != file.n_x + file.n_u {
                    return Err(GpError::DimensionMismatch { expected: file.n_x + file.n_u, got: w.len() });
                }
                Ok(super::TransitionSample {
                    state: w[..file.n_x].to_vec(),
                    control: w[file.n_x..].to_vec(),
                    next_state: y.clone(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let dataset = Dataset::from_samples(file.n_x, file.n_u, samples)?;
        let mut model =
            Self::fit_posterior(file.kernel, &dataset, file.delta, Some(file.jitter), file.k_inv_frobenius)?;
        if file.alpha.len() != model.len() {
            return Err(GpError::Format("alpha row count differs from inputs".into()));
        }
        let scale = model.alpha.amax().max(1.0);
        for (i, row) in file.alpha.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                if (model.alpha[(i, j)] - a).abs() > 1e-6 * scale {
                    return Err(GpError::Format(format!("stored alpha disagrees with refit at ({i}, {j})")));
                }
            }
        }
        model.beta_f = file.beta_f;
        model.error_bound = file.error_bound.clone();
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GpError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, &self.to_file())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GpError> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: ModelFile = serde_json::from_reader(f)?;
        Self::from_file(&file)
    }
}

/// Dot product with eight independent partial sums. The summation order is
/// fixed, so the AVX2 build of the same loop gives identical results.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { dot_avx2(a, b) };
    }
    dot_portable(a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_avx2(a: &[f64], b: &[f64]) -> f64 {
    dot_portable(a, b)
}

#[inline(always)]
fn dot_portable(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 8];
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Four dot products against a shared left operand, each summed in the
/// same order as [`dot`].
fn dot4(a: &[f64], b: [&[f64]; 4]) -> [f64; 4] {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { dot4_avx2(a, b) };
    }
    dot4_portable(a, b)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot4_avx2(a: &[f64], b: [&[f64]; 4]) -> [f64; 4] {
    dot4_portable(a, b)
}

#[inline(always)]
fn dot4_portable(a: &[f64], b: [&[f64]; 4]) -> [f64; 4] {
    let n = a.len();
    let full = n - n % 8;
    let mut acc = [[0.0; 8]; 4];
    for c in (0..full).step_by(8) {
        let x = &a[c..c + 8];
        for q in 0..4 {
            let y = &b[q][c..c + 8];
            for k in 0..8 {
                acc[q][k] += x[k] * y[k];
            }
        }
    }
    let mut out = [0.0; 4];
    for q in 0..4 {
        let tail: f64 = a[full..].iter().zip(&b[q][full..n]).map(|(x, y)| x * y).sum();
        let s = &acc[q];
        out[q] = ((s[0] + s[4]) + (s[1] + s[5])) + ((s[2] + s[6]) + (s[3] + s[7])) + tail;
    }
    out
}

/// JSON export of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub kernel: Kernel,
    pub n_x: usize,
    pub n_u: usize,
    pub delta: f64,
    pub beta_f: f64,
    pub jitter: f64,
    pub error_bound: Option<UniformErrorBound>,
    /// Recomputed on load when absent.
    #[serde(default)]
    pub k_inv_frobenius: Option<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
}
