//! `gpsafe` command-line driver.
//!
//! Every command reads a JSON run configuration, writes its artifacts to the
//! output directory and records the fully resolved configuration in
//! `manifest.json`. Exit status: 0 on success, 1 when synthesis or a
//! validation suite fails, 2 on usage and I/O errors.

mod config;
mod manifest;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use gpsafe::safeguard::Safeguard;
use gpsafe::sim::{feasibility_map, rollout, sample_safe_state, RandomPolicy, TraceSummary};
use gpsafe::synthesis::{synthesize, SynthesisCertificate, SynthesisError};
use gpsafe::validation::validate_model;
use gpsafe::{Environment, GpModel};

use config::RunConfig;
use manifest::Manifest;

#[derive(Parser, Debug)]
#[command(name = "gpsafe", version, about = "Safe control with GP-learned dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `out` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a safety index and write the certificate, dataset and model.
    Synth(Common),
    /// Safeguarded rollouts of a random exploration policy.
    Rollout {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Count states without a safe control over a position grid.
    Feasibility {
        #[command(flatten)]
        common: Common,
        /// Replaces the certified gain `k`.
        #[arg(long)]
        k_override: Option<f64>,
    },
    /// Empirical sweeps of the posterior bounds and the Lipschitz bundle.
    Validate(Common),
}

/// Errors that map to exit status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

/// Whether the command's own checks passed.
enum Status {
    Ok,
    Failed,
}

struct Run {
    config: RunConfig,
    out: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn open(command: &str, common: &Common) -> Result<(Self, Box<dyn Environment>)> {
        let text = fs::read_to_string(&common.config)
            .map_err(|e| usage(format!("cannot read config {}: {e}", common.config.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| usage(format!("invalid config {}: {e}", common.config.display())))?;
        if let Some(seed) = common.seed {
            config = config.with_seed(seed);
        }
        let out = common.out.clone().unwrap_or_else(|| config.out.clone());
        fs::create_dir_all(&out).map_err(|e| usage(format!("cannot create {}: {e}", out.display())))?;
        let env = config.synthesis.env.build();
        let manifest = Manifest::new(command, &config, common)?;
        Ok((Self { config, out, manifest }, env))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn artifact_dir(&self) -> PathBuf {
        self.config.artifacts.clone().unwrap_or_else(|| self.out.clone())
    }

    fn load_artifacts(&self, env: &dyn Environment) -> Result<(SynthesisCertificate, GpModel)> {
        let dir = self.artifact_dir();
        let cert_path = dir.join("certificate.json");
        let cert = SynthesisCertificate::load(&cert_path)
            .map_err(|e| usage(format!("cannot load {}: {e}", cert_path.display())))?;
        let model_path = dir.join(cert.model_path.as_deref().unwrap_or("model.json"));
        let model =
            GpModel::load(&model_path).map_err(|e| usage(format!("cannot load {}: {e}", model_path.display())))?;
        if cert.environment != env.name() {
            return Err(usage(format!(
                "certificate is for environment {:?}, config selects {:?}",
                cert.environment,
                env.name()
            )));
        }
        Ok((cert, model))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, status: &Status) -> Result<()> {
        self.manifest.finish(matches!(status, Status::Ok));
        let path = self.path("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)?)
            .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        Ok(())
    }
}

fn cmd_synth(common: &Common) -> Result<Status> {
    let (mut run, env) = Run::open("synth", common)?;
    let env = env.as_ref();
    let started = Instant::now();
    let exec = run.config.exec();
    match synthesize(env, &run.config.synthesis, exec) {
        Ok(outcome) => {
            let mut cert = outcome.certificate.clone();
            cert.dataset_path = Some("dataset.csv".into());
            cert.model_path = Some("model.json".into());
            let ds = run.path("dataset.csv");
            outcome.dataset.save(&ds).map_err(|e| usage(format!("cannot write {}: {e}", ds.display())))?;
            run.manifest.outputs.push("dataset.csv".into());
            let mp = run.path("model.json");
            outcome.model.save(&mp).map_err(|e| usage(format!("cannot write {}: {e}", mp.display())))?;
            run.manifest.outputs.push("model.json".into());
            run.write_json("certificate.json", &cert)?;
            run.write_json("iterations.json", &outcome.iterations)?;
            eprintln!(
                "synthesized k = {:.6} at tau_x = {} (N = {}, certified = {}) in {:.1?}",
                cert.params.k,
                cert.tau_x,
                cert.grid_size,
                cert.certified,
                started.elapsed()
            );
            run.finish(&Status::Ok)?;
            Ok(Status::Ok)
        }
        Err(e) => {
            eprintln!("{e}");
            if let SynthesisError::Failed { iterations, .. } = &e {
                run.write_json("iterations.json", iterations)?;
            }
            run.write_json("failure.json", &serde_json::json!({ "error": e.to_string() }))?;
            run.finish(&Status::Failed)?;
            Ok(Status::Failed)
        }
    }
}

fn cmd_rollout(common: &Common, steps: Option<usize>) -> Result<Status> {
    let (mut run, env) = Run::open("rollout", common)?;
    let env = env.as_ref();
    if let Some(s) = steps {
        run.config.rollout.steps = s;
        run.manifest.set_config(&run.config)?;
    }
    let (cert, model) = run.load_artifacts(env)?;
    let guard = Safeguard::new(cert.safety_check(&model, env), env.control_box().clone(), run.config.safeguard);
    let mut summaries = Vec::new();
    for seed in run.config.rollout.seeds.clone() {
        let x0 = match &run.config.rollout.initial_state {
            Some(x) => x.clone(),
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                sample_safe_state(env, &cert.params, &mut rng, run.config.rollout.max_initial_draws)?
            }
        };
        let mut policy = RandomPolicy::new(env.control_box().clone(), seed.wrapping_add(1));
        let trace = rollout(env, &guard, &mut policy, &x0, run.config.rollout.steps)?;
        let name = format!("trace_seed{seed}.csv");
        let path = run.path(&name);
        trace.save(&path).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))?;
        run.manifest.outputs.push(name);
        let summary = TraceSummary::from_trace(&trace, env, cert.params.d_min);
        eprintln!(
            "seed {seed}: {} steps ({} outside the state box), max phi {:?}, {} bound violations, {} fallbacks ({} outside)",
            summary.steps,
            summary.steps_outside_box,
            summary.max_phi,
            summary.bound_violations,
            summary.fallback_count,
            summary.fallbacks_outside_box
        );
        run.write_json(&format!("summary_seed{seed}.json"), &summary)?;
        summaries.push(serde_json::json!({ "seed": seed, "summary": summary }));
    }
    run.write_json("rollout_summary.json", &summaries)?;
    run.finish(&Status::Ok)?;
    Ok(Status::Ok)
}

fn cmd_feasibility(common: &Common, k_override: Option<f64>) -> Result<Status> {
    let (mut run, env) = Run::open("feasibility", common)?;
    let env = env.as_ref();
    if let Some(k) = k_override {
        run.manifest.extra.insert("k_override".into(), serde_json::json!(k));
    }
    let (cert, model) = run.load_artifacts(env)?;
    let cert = match k_override {
        Some(k) => cert.with_gain(k, env.d_max()).map_err(|e| usage(format!("invalid --k-override: {e}")))?,
        None => cert,
    };
    let guard = Safeguard::new(cert.safety_check(&model, env), env.control_box().clone(), run.config.safeguard);
    let started = Instant::now();
    let map = feasibility_map(env, &guard, &run.config.feasibility, run.config.exec())?;
    let stem = match k_override {
        Some(k) => format!("feasibility_k{k}"),
        None => "feasibility".to_string(),
    };
    let (csv_name, meta_name) = (format!("{stem}.csv"), format!("{stem}.json"));
    let csv = run.path(&csv_name);
    map.save(&csv, run.path(&meta_name)).map_err(|e| usage(format!("cannot write {}: {e}", csv.display())))?;
    run.manifest.outputs.extend([csv_name, meta_name]);
    eprintln!(
        "k = {}: {} of {} sampled states without a safe control ({:.1?})",
        cert.params.k,
        map.total(),
        map.meta.total_samples,
        started.elapsed()
    );
    run.finish(&Status::Ok)?;
    Ok(Status::Ok)
}

fn cmd_validate(common: &Common) -> Result<Status> {
    let (mut run, env) = Run::open("validate", common)?;
    let env = env.as_ref();
    let (cert, model) = run.load_artifacts(env)?;
    let v = &run.config.validation;
    let report =
        validate_model(env, &model, cert.tau_x, v.queries, v.lipschitz_pairs, v.seed, run.config.exec())?;
    run.write_json("validation.json", &report)?;
    for s in &report.suites {
        let verdict = if s.passed { "pass" } else { "FAIL" };
        eprintln!("{verdict} {:<24} {} / {} violations, min slack {:.3e}", s.name, s.violations, s.queries, s.min_slack);
        if !s.passed {
            eprintln!("    violating queries: {:?}", s.violating);
        }
    }
    let status = if report.passed { Status::Ok } else { Status::Failed };
    run.finish(&status)?;
    Ok(status)
}

fn dispatch(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Synth(c) => cmd_synth(c),
        Command::Rollout { common, steps } => cmd_rollout(common, *steps),
        Command::Feasibility { common, k_override } => cmd_feasibility(common, *k_override),
        Command::Validate(c) => cmd_validate(c),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
