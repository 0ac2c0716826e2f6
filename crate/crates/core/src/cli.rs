//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::bound_report;
use crate::baselines::{baseline_init, run_baseline, BaselineKind};
use crate::error::{Error, Result};
use crate::model::{load_config, load_policy, validate_policy, Instance, PolicyVars, SolverConfig};
use crate::optimizer::{alternating_optimize, feasibility_repair, INITIAL_EXPONENT};
use crate::simulator::{run_simulation_traced, validate_bound, write_trace_csv, SimConfig};

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_NOT_CONVERGED: u8 = 3;
pub const EXIT_BOUND_VIOLATION: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "vidstall", version, about = "Stall bounds, policy optimization and simulation for erasure-coded video streaming")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Instance configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory receiving the output files.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Use finite-difference gradients.
    #[arg(long)]
    pub fd_gradients: bool,
    /// Worker threads for independent runs (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the stall bounds of a policy.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Optimize the policy for one trade-off weight.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<f64>,
        /// Start from a baseline initialization (pea, peb, peq, psp, plq, phq)
        /// instead of the uniform one.
        #[arg(long)]
        init: Option<String>,
    },
    /// Optimize for several trade-off weights.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated weights.
        #[arg(long, value_delimiter = ',', conflicts_with = "spec")]
        thetas: Vec<f64>,
        /// Sweep specification (JSON) with per-weight solver overrides.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Run the six comparison strategies.
    Baselines {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Simulate a policy.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        requests: usize,
        #[arg(long, default_value_t = 5)]
        replications: usize,
        #[arg(long, default_value_t = 0.1)]
        warmup: f64,
        /// Compare the simulated stalls with the analytic bound.
        #[arg(long)]
        validate: bool,
        /// Also write the request log of the first replication.
        #[arg(long)]
        trace: bool,
    },
}

/// Partial solver settings applied on top of the configuration's.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverride {
    pub step_gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_outer_iters: Option<usize>,
    pub slack_delta: Option<f64>,
    pub fd_gradients: Option<bool>,
}

impl SolverOverride {
    fn apply(&self, cfg: &mut SolverConfig) {
        if let Some(v) = self.step_gamma {
            cfg.step_gamma = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.max_outer_iters {
            cfg.max_outer_iters = v;
        }
        if let Some(v) = self.slack_delta {
            cfg.slack_delta = v;
        }
        if let Some(v) = self.fd_gradients {
            cfg.fd_gradients = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub theta: f64,
    #[serde(default)]
    pub overrides: SolverOverride,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub points: Vec<SweepPoint>,
}

impl SweepSpec {
    pub fn from_thetas(thetas: &[f64]) -> Self {
        Self {
            points: thetas
                .iter()
                .map(|&theta| SweepPoint {
                    theta,
                    overrides: SolverOverride::default(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Validation("sweep needs at least one theta".into()));
        }
        for (n, p) in self.points.iter().enumerate() {
            if !(0.0..=1.0).contains(&p.theta) {
                return Err(Error::Validation(format!("theta {} outside [0, 1]", p.theta)));
            }
            if self.points[..n].iter().any(|o| o.theta == p.theta) {
                return Err(Error::Validation(format!("duplicate theta {}", p.theta)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub theta: f64,
    pub weighted_mean_stall: Option<f64>,
    pub average_quality: Option<f64>,
    pub objective: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

/// Repaired uniform initialization.
pub fn default_init(inst: &Instance) -> Result<PolicyVars> {
    feasibility_repair(inst, &PolicyVars::uniform(inst, INITIAL_EXPONENT))
}

fn sweep_point(inst: &Instance, init: &PolicyVars, point: &SweepPoint) -> Result<SweepRow> {
    let mut cfg = inst.solver.clone();
    cfg.theta = point.theta;
    point.overrides.apply(&mut cfg);
    cfg.validate().map_err(Error::Validation)?;
    let res = alternating_optimize(inst, point.theta, init, &cfg)?;
    let report = bound_report(inst, &res.policy, point.theta)?;
    Ok(SweepRow {
        theta: point.theta,
        weighted_mean_stall: Some(report.weighted_mean_stall),
        average_quality: Some(report.average_quality),
        objective: Some(report.objective),
        iterations: Some(res.iterations),
        converged: Some(res.converged),
        error: None,
    })
}

/// Optimize every sweep point from the uniform initialization; rows are
/// sorted by theta and failures are kept in-row.
pub fn run_sweep(inst: &Instance, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let init = default_init(inst)?;
    let mut points = spec.points.clone();
    points.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    Ok(points
        .par_iter()
        .map(|p| {
            sweep_point(inst, &init, p).unwrap_or_else(|e| SweepRow {
                theta: p.theta,
                weighted_mean_stall: None,
                average_quality: None,
                objective: None,
                iterations: None,
                converged: None,
                error: Some(e.to_string()),
            })
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "theta",
        "weighted_mean_stall",
        "average_quality",
        "objective",
        "iterations",
        "converged",
        "error",
    ])?;
    fn opt<T: ToString>(v: &Option<T>) -> String {
        v.as_ref().map(|x| x.to_string()).unwrap_or_default()
    }
    for r in rows {
        w.write_record([
            r.theta.to_string(),
            opt(&r.weighted_mean_stall),
            opt(&r.average_quality),
            opt(&r.objective),
            opt(&r.iterations),
            opt(&r.converged),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Write `bytes` to `dir/name` through a temporary file and a rename.
fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(&path, e))?;
    tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
    Ok(path)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn load_instance(common: &Common) -> Result<Instance> {
    let mut inst = load_config(&common.config)?;
    if common.fd_gradients {
        let mut cfg = inst.solver.clone();
        cfg.fd_gradients = true;
        inst = inst.with_solver(cfg);
    }
    Ok(inst)
}

fn set_jobs(jobs: usize) {
    if jobs > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
}

fn require_feasible(inst: &Instance, x: &PolicyVars) -> Result<()> {
    let v = validate_policy(x, inst)?;
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Infeasible(v))
    }
}

/// Run a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Analyze { common, policy, theta } => {
            let inst = load_instance(&common)?;
            let x = load_policy(&policy, &inst)?;
            require_feasible(&inst, &x)?;
            let report = bound_report(&inst, &x, theta.unwrap_or(inst.solver.theta))?;
            write_atomic(&common.out_dir, "report.json", &json_bytes(&report)?)?;
            write_atomic(&common.out_dir, "report.csv", &csv_bytes(|b| report.write_csv(&inst, &x, b))?)?;
            eprintln!(
                "weighted mean stall bound {:.6} s, average quality {:.6}",
                report.weighted_mean_stall, report.average_quality
            );
            Ok(0)
        }
        Command::Optimize { common, theta, init } => {
            let inst = load_instance(&common)?;
            let theta = theta.unwrap_or(inst.solver.theta);
            let start = match init.as_deref() {
                None | Some("uniform") => default_init(&inst)?,
                Some(kind) => baseline_init(&inst, kind.parse::<BaselineKind>()?)?,
            };
            let res = alternating_optimize(&inst, theta, &start, &inst.solver)?;
            let report = bound_report(&inst, &res.policy, theta)?;
            let dir = &common.out_dir;
            write_atomic(dir, "policy.json", res.policy.to_json().as_bytes())?;
            write_atomic(dir, "trace.csv", &csv_bytes(|b| res.write_trace_csv(b))?)?;
            write_atomic(dir, "report.json", &json_bytes(&report)?)?;
            write_atomic(dir, "report.csv", &csv_bytes(|b| report.write_csv(&inst, &res.policy, b))?)?;
            eprintln!(
                "objective {:.9} after {} iterations, weighted mean stall bound {:.6} s, average quality {:.6}",
                res.objective, res.iterations, report.weighted_mean_stall, report.average_quality
            );
            if res.converged {
                Ok(0)
            } else {
                eprintln!("not converged within {} iterations", inst.solver.max_outer_iters);
                Ok(EXIT_NOT_CONVERGED)
            }
        }
        Command::Sweep { common, thetas, spec } => {
            set_jobs(common.jobs);
            let inst = load_instance(&common)?;
            let spec = match spec {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    serde_json::from_str(&text)?
                }
                None => SweepSpec::from_thetas(&thetas),
            };
            let rows = run_sweep(&inst, &spec)?;
            write_atomic(&common.out_dir, "sweep.csv", &csv_bytes(|b| write_sweep_csv(&rows, b))?)?;
            for r in &rows {
                if let Some(e) = &r.error {
                    eprintln!("theta {}: {e}", r.theta);
                }
            }
            Ok(if rows.iter().all(|r| r.converged == Some(true)) {
                0
            } else {
                EXIT_NOT_CONVERGED
            })
        }
        Command::Baselines { common, theta } => {
            set_jobs(common.jobs);
            let inst = load_instance(&common)?;
            let theta = theta.unwrap_or(inst.solver.theta);
            let runs: Vec<_> = BaselineKind::ALL
                .par_iter()
                .map(|&k| run_baseline(&inst, k, theta, &inst.solver))
                .collect();
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["baseline", "metric", "value"])?;
            let mut all_converged = true;
            for (kind, run) in BaselineKind::ALL.iter().zip(runs) {
                match run {
                    Ok(run) => {
                        all_converged &= run.result.converged;
                        for (metric, v) in [
                            ("weighted_mean_stall", run.report.weighted_mean_stall),
                            ("average_quality", run.report.average_quality),
                            ("objective", run.report.objective),
                        ] {
                            w.write_record([kind.name(), metric, &v.to_string()])?;
                        }
                    }
                    Err(e) => {
                        eprintln!("{kind}: {e}");
                        all_converged = false;
                        w.write_record([kind.name(), "error", &e.to_string()])?;
                    }
                }
            }
            let bytes = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
            write_atomic(&common.out_dir, "baselines.csv", &bytes)?;
            Ok(if all_converged { 0 } else { EXIT_NOT_CONVERGED })
        }
        Command::Simulate {
            common,
            policy,
            seed,
            requests,
            replications,
            warmup,
            validate,
            trace,
        } => {
            set_jobs(common.jobs);
            let inst = load_instance(&common)?;
            let x = load_policy(&policy, &inst)?;
            let sim = SimConfig {
                num_requests: requests,
                warmup_fraction: warmup,
                seed,
                replications,
            };
            let dir = &common.out_dir;
            if validate {
                let v = validate_bound(&inst, &x, &sim)?;
                write_atomic(dir, "validation.json", &json_bytes(&v)?)?;
                write_atomic(dir, "sim_report.json", &json_bytes(&v.simulation)?)?;
                if v.unstable {
                    eprintln!("some stream is overloaded; no bound is claimed");
                }
                let findings = v.findings();
                if findings > 0 {
                    eprintln!("{findings} simulated stalls exceed their bound");
                    return Ok(EXIT_BOUND_VIOLATION);
                }
                return Ok(0);
            }
            let (report, log) = run_simulation_traced(&inst, &x, &sim)?;
            write_atomic(dir, "sim_report.json", &json_bytes(&report)?)?;
            write_atomic(dir, "sim_report.csv", &csv_bytes(|b| report.write_csv(b))?)?;
            if trace {
                write_atomic(dir, "sim_trace.csv", &csv_bytes(|b| write_trace_csv(&log, b))?)?;
            }
            if report.unstable {
                eprintln!("some stream is overloaded");
            }
            Ok(0)
        }
    }
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Infeasible(_) | Error::Unstable { .. } | Error::EmptyInterval { .. } => EXIT_INFEASIBLE,
        _ => EXIT_FAILURE,
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
