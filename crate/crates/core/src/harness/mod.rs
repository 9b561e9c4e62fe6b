//! Experiment orchestration: builds problems from a [`RunConfig`], runs seeded
//! trials, and writes trace / summary / comparison CSVs.

mod config;
mod report;

pub use config::{
    parse_config, BoundsOverrides, ConfigError, DatasetSpec, InitSpec, PrivacySpec, RunConfig, TopologySpec,
};
pub use report::{account, bounds_report, AccountReport, AccountRow, BoundsOutput, BoundsRow};

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataset::{partition, preprocess, synthesize, DatasetError, DesignMatrix, RawTable, SyntheticData, SyntheticKind};
use crate::engine::{self, EngineConfig, EngineError, Init, Mode, Trajectory};
use crate::exec;
use crate::linalg::dot;
use crate::objective::{curvature, CurvatureReport, LocalObjective, LogisticShard, ObjectiveError, ObjectiveSpec, QuadraticTarget};
use crate::privacy::{calibrate, sensitivity, total_epsilon, NoiseSchedule, PrivacyBudget, PrivacyError};
use crate::topology::{Topology, TopologyError};
use crate::bounds::BoundsError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("trial {trial} failed: {source}")]
    Trial { trial: usize, source: EngineError },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("configurations disagree on {what}: {a} vs {b}")]
    MismatchedHorizon { what: &'static str, a: usize, b: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    /// Short error name for CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(ConfigError::Parse { .. }) => "ParseError",
            Self::Config(ConfigError::Validation { .. }) => "ValidationError",
            Self::Topology(TopologyError::DisconnectedGraph { .. }) => "DisconnectedGraph",
            Self::Topology(_) => "TopologyError",
            Self::Dataset(_) => "DatasetError",
            Self::Objective(_) => "ObjectiveError",
            Self::Privacy(_) => "InvalidParameter",
            Self::Bounds(BoundsError::InfeasibleBound(_)) => "InfeasibleBound",
            Self::Bounds(_) => "BoundsError",
            Self::Trial { source, .. } | Self::Engine(source) => match source {
                EngineError::InnerSolverDiverged { .. } => "InnerSolverDiverged",
                EngineError::NotConverged { .. } => "NotConverged",
                EngineError::InvalidConfig(_) => "InvalidConfig",
            },
            Self::MismatchedHorizon { .. } => "MismatchedHorizon",
            Self::Unsupported(_) => "Unsupported",
            Self::Io { .. } => "IoError",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read and parse a configuration file; relative paths inside it resolve
/// against the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(parse_config(&text, base)?)
}

/// Topology, local objectives and metadata for one configuration.
pub struct Problem {
    pub topology: Topology,
    pub objectives: Vec<Box<dyn LocalObjective>>,
    /// Hessian-convention curvature of the local objectives.
    pub curvature: CurvatureReport,
    /// Full training set (logistic problems only), for accuracy.
    pub records: Option<DesignMatrix>,
}

pub fn build_topology(cfg: &RunConfig, dim: usize) -> Result<Topology, HarnessError> {
    let topo = match &cfg.topology {
        TopologySpec::Generated(kind) => Topology::generate(kind, cfg.agents, dim)?,
        TopologySpec::EdgeFile(path) => {
            let t = Topology::from_edge_list_file(path, dim)?;
            if cfg.agents != 0 && cfg.agents != t.n_agents() {
                return Err(ConfigError::Validation {
                    field: "agents".into(),
                    msg: format!("edge list has {} agents, config says {}", t.n_agents(), cfg.agents),
                }
                .into());
            }
            t
        }
    };
    Ok(topo)
}

fn logistic_problem(cfg: &RunConfig, data: DesignMatrix, partition_seed: u64) -> Result<Problem, HarnessError> {
    let topology = build_topology(cfg, data.dim())?;
    let shards = partition(data.len(), topology.n_agents(), partition_seed)?;
    let spec = ObjectiveSpec::logistic(cfg.lambda, topology.n_agents(), cfg.grad_bound)?;
    let local: Vec<DesignMatrix> = shards.indices.iter().map(|idx| data.subset(idx)).collect();
    let curvature = curvature(&spec, &local);
    let objectives = local
        .into_iter()
        .map(|d| Box::new(LogisticShard::new(spec.clone(), d)) as Box<dyn LocalObjective>)
        .collect();
    Ok(Problem {
        topology,
        objectives,
        curvature,
        records: Some(data),
    })
}

pub fn build_problem(cfg: &RunConfig) -> Result<Problem, HarnessError> {
    match &cfg.dataset {
        DatasetSpec::Csv {
            csv,
            schema,
            missing_marker,
            partition_seed,
        } => {
            let raw = RawTable::from_files(csv, schema, missing_marker)?;
            logistic_problem(cfg, preprocess(&raw)?, *partition_seed)
        }
        DatasetSpec::Blobs {
            n,
            dim,
            separation,
            seed,
            partition_seed,
        } => {
            let kind = SyntheticKind::LogisticBlobs {
                n: *n,
                dim: *dim,
                separation: *separation,
                seed: *seed,
            };
            match synthesize(&kind)? {
                SyntheticData::Design(d) => logistic_problem(cfg, d, *partition_seed),
                SyntheticData::Targets(_) => unreachable!("blobs synthesize a design matrix"),
            }
        }
        DatasetSpec::Quadratic { targets } => {
            let topology = build_topology(cfg, targets[0].len())?;
            if topology.n_agents() != targets.len() {
                return Err(ConfigError::Validation {
                    field: "targets".into(),
                    msg: format!("{} targets for {} agents", targets.len(), topology.n_agents()),
                }
                .into());
            }
            let objectives = targets
                .iter()
                .map(|t| Box::new(QuadraticTarget { target: t.clone() }) as Box<dyn LocalObjective>)
                .collect();
            Ok(Problem {
                topology,
                objectives,
                curvature: CurvatureReport { mu: 1.0, v: 1.0 },
                records: None,
            })
        }
    }
}

/// Per-agent sensitivities `V / (eta |V_i|)`.
pub fn sensitivities(cfg: &RunConfig, topology: &Topology) -> Result<Vec<f64>, HarnessError> {
    topology
        .degrees()
        .into_iter()
        .map(|deg| sensitivity(cfg.grad_bound, cfg.eta, deg).map_err(HarnessError::from))
        .collect()
}

/// Noise schedule and budget implied by the privacy settings; `None` in
/// non-private mode.
pub fn privacy_plan(cfg: &RunConfig, topology: &Topology) -> Result<Option<(NoiseSchedule, Vec<f64>)>, HarnessError> {
    let sens = sensitivities(cfg, topology)?;
    let n = topology.n_agents();
    let schedule = match &cfg.privacy {
        PrivacySpec::NonPrivate => return Ok(None),
        PrivacySpec::Epsilon(eps) => calibrate(*eps, cfg.delta, cfg.decay, cfg.horizon, &sens)?,
        PrivacySpec::Sigma2(values) => {
            let per_agent = match values.len() {
                1 => vec![values[0]; n],
                len if len == n => values.clone(),
                len => {
                    return Err(ConfigError::Validation {
                        field: "sigma2".into(),
                        msg: format!("{len} variances for {n} agents"),
                    }
                    .into())
                }
            };
            if per_agent.iter().all(|&s| s == 0.0) {
                NoiseSchedule::zero(n, cfg.decay, cfg.horizon)?
            } else {
                NoiseSchedule::new(per_agent, cfg.decay, cfg.horizon)?
            }
        }
    };
    Ok(Some((schedule, sens)))
}

/// Budget of a noise schedule, `None` when any variance is zero.
pub fn budget(schedule: &NoiseSchedule, sens: &[f64], delta: f64) -> Option<PrivacyBudget> {
    total_epsilon(schedule, sens, delta).ok()
}

/// Engine settings for trial `trial`. Initialization and noise draw from
/// separate seeds derived from the trial seed.
pub fn engine_config(cfg: &RunConfig, plan: &Option<(NoiseSchedule, Vec<f64>)>, trial: usize) -> EngineConfig {
    let seed = cfg.trial_seed(trial);
    let mode = match plan {
        None => Mode::NonPrivate,
        Some((schedule, sens)) => Mode::Private {
            schedule: schedule.clone(),
            sensitivities: sens.clone(),
        },
    };
    EngineConfig {
        eta: cfg.eta,
        mode,
        inner: cfg.inner,
        horizon: cfg.horizon,
        init: match cfg.init {
            InitSpec::Zeros => Init::Zeros,
            InitSpec::Uniform { lo, hi } => Init::Uniform { lo, hi, seed: !seed },
        },
        rule: cfg.rule,
        noise_seed: seed,
        execution: cfg.execution,
    }
}

/// Per-iteration statistics across trials, population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats {
    /// Iterations `1..=K`.
    pub k: Vec<usize>,
    pub f_mean: Vec<f64>,
    pub f_std: Vec<f64>,
    /// Same statistics for the loss at the agent-averaged iterate.
    pub avg_iterate_mean: Vec<f64>,
    pub avg_iterate_std: Vec<f64>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(trajectories: &[Trajectory]) -> SummaryStats {
    let horizon = trajectories[0].snapshots.len() - 1;
    let mut s = SummaryStats {
        k: (1..=horizon).collect(),
        f_mean: Vec::with_capacity(horizon),
        f_std: Vec::with_capacity(horizon),
        avg_iterate_mean: Vec::with_capacity(horizon),
        avg_iterate_std: Vec::with_capacity(horizon),
    };
    for k in 1..=horizon {
        let (m, sd) = mean_std(&trajectories.iter().map(|t| t.snapshots[k].loss_global_avg).collect::<Vec<_>>());
        s.f_mean.push(m);
        s.f_std.push(sd);
        let (m, sd) = mean_std(&trajectories.iter().map(|t| t.snapshots[k].loss_avg_iterate).collect::<Vec<_>>());
        s.avg_iterate_mean.push(m);
        s.avg_iterate_std.push(sd);
    }
    s
}

pub struct TrialsOutcome {
    pub summary: SummaryStats,
    pub trajectories: Vec<Trajectory>,
    pub schedule: Option<NoiseSchedule>,
    pub budget: Option<PrivacyBudget>,
    pub accuracy: Option<Vec<f64>>,
}

/// Classification accuracy of `x` on `data`, predicting +1 when `<x, y> >= 0`.
pub fn accuracy(data: &DesignMatrix, x: &[f64]) -> f64 {
    let correct = (0..data.len())
        .filter(|&i| {
            let pred = if dot(x, data.row(i)) >= 0.0 { 1.0 } else { -1.0 };
            pred == data.label(i)
        })
        .count();
    correct as f64 / data.len() as f64
}

fn agent_mean(xs: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; xs[0].len()];
    for x in xs {
        crate::linalg::axpy(1.0 / xs.len() as f64, x, &mut m);
    }
    m
}

/// Run every trial of `cfg` on a prebuilt problem.
pub fn run_trials_on(cfg: &RunConfig, problem: &Problem) -> Result<TrialsOutcome, HarnessError> {
    let plan = privacy_plan(cfg, &problem.topology)?;
    let results = exec::map_range(cfg.trials, cfg.execution, |t| {
        engine::run(&problem.topology, &problem.objectives, &engine_config(cfg, &plan, t))
            .map_err(|source| HarnessError::Trial { trial: t, source })
    });
    let trajectories = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let accuracy = problem.records.as_ref().map(|data| {
        trajectories
            .iter()
            .map(|t| accuracy(data, &agent_mean(&t.last().x)))
            .collect()
    });
    Ok(TrialsOutcome {
        summary: summarize(&trajectories),
        budget: plan.as_ref().and_then(|(s, sens)| budget(s, sens, cfg.delta)),
        schedule: plan.map(|(s, _)| s),
        trajectories,
        accuracy,
    })
}

pub fn run_trials(cfg: &RunConfig) -> Result<TrialsOutcome, HarnessError> {
    run_trials_on(cfg, &build_problem(cfg)?)
}

/// `# key = value` lines echoing the resolved configuration.
pub fn header_block(title: &str, cfg: &RunConfig, prefix: &str) -> String {
    let mut out = String::new();
    if !title.is_empty() {
        let _ = writeln!(out, "# {title}");
    }
    for (k, v) in cfg.resolved() {
        let _ = writeln!(out, "# {prefix}{k} = {v}");
    }
    out
}

fn privacy_block(outcome: &TrialsOutcome) -> String {
    match (&outcome.schedule, &outcome.budget) {
        (None, _) => "# privacy = none (non-private run)\n".to_string(),
        (Some(_), None) => "# privacy = none (zero-variance schedule)\n".to_string(),
        (Some(s), Some(b)) => format!(
            "# sigma2_init = {}\n# rho_total = {}\n# epsilon = {}\n# delta = {}\n",
            s.sigma2_init().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            b.rho_total_worst,
            b.epsilon,
            b.delta
        ),
    }
}

pub const TRACE_COLUMNS: &str =
    "iteration,agent_id,loss_local,loss_global_avg,consensus_residual,sigma2,rho_cumulative,loss_avg_iterate";

pub fn trace_csv(cfg: &RunConfig, outcome: &TrialsOutcome, trial: usize) -> String {
    let mut out = header_block("padmm trace", cfg, "");
    let _ = writeln!(out, "# trial = {trial}\n# trial_seed = {}", cfg.trial_seed(trial));
    out.push_str(&privacy_block(outcome));
    out.push_str(TRACE_COLUMNS);
    out.push('\n');
    for s in &outcome.trajectories[trial].snapshots {
        for a in 0..s.x.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.iteration,
                a,
                s.local_loss[a],
                s.loss_global_avg,
                s.consensus_residual,
                s.sigma2[a],
                s.rho_cumulative[a],
                s.loss_avg_iterate
            );
        }
    }
    out
}

pub fn summary_csv(cfg: &RunConfig, outcome: &TrialsOutcome) -> String {
    let mut out = header_block("padmm summary", cfg, "");
    out.push_str(&privacy_block(outcome));
    out.push_str("k,f_mean,f_std,f_mean_avg_iterate,f_std_avg_iterate\n");
    let s = &outcome.summary;
    for i in 0..s.k.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            s.k[i], s.f_mean[i], s.f_std[i], s.avg_iterate_mean[i], s.avg_iterate_std[i]
        );
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(contents.as_bytes()).map_err(io_err(path))
}

/// Write `summary.csv` and one `trace_trial_NNN.csv` per trial into `dir`.
pub fn write_outputs(cfg: &RunConfig, outcome: &TrialsOutcome, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut written = Vec::with_capacity(outcome.trajectories.len() + 1);
    let summary = dir.join("summary.csv");
    write_file(&summary, &summary_csv(cfg, outcome))?;
    written.push(summary);
    for t in 0..outcome.trajectories.len() {
        let path = dir.join(format!("trace_trial_{t:03}.csv"));
        write_file(&path, &trace_csv(cfg, outcome, t))?;
        written.push(path);
    }
    Ok(written)
}

/// Joint `(k, f_mean_a, f_std_a, f_mean_b, f_std_b)` table for two runs.
pub fn compare(cfg_a: &RunConfig, cfg_b: &RunConfig) -> Result<String, HarnessError> {
    if cfg_a.horizon != cfg_b.horizon {
        return Err(HarnessError::MismatchedHorizon {
            what: "K",
            a: cfg_a.horizon,
            b: cfg_b.horizon,
        });
    }
    if cfg_a.trials != cfg_b.trials {
        return Err(HarnessError::MismatchedHorizon {
            what: "trials",
            a: cfg_a.trials,
            b: cfg_b.trials,
        });
    }
    let a = run_trials(cfg_a)?;
    let b = run_trials(cfg_b)?;
    Ok(comparison_csv(cfg_a, &a, cfg_b, &b))
}

pub fn comparison_csv(cfg_a: &RunConfig, a: &TrialsOutcome, cfg_b: &RunConfig, b: &TrialsOutcome) -> String {
    let mut out = header_block("padmm compare", cfg_a, "a.");
    out.push_str(&header_block("", cfg_b, "b."));
    out.push_str("k,f_mean_a,f_std_a,f_mean_b,f_std_b\n");
    let (sa, sb) = (&a.summary, &b.summary);
    for i in 0..sa.k.len() {
        let _ = writeln!(out, "{},{},{},{},{}", sa.k[i], sa.f_mean[i], sa.f_std[i], sb.f_mean[i], sb.f_std[i]);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub agents: usize,
    pub f_mean: f64,
    pub f_std: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub epsilon: Option<f64>,
}

/// Repeat `cfg` for each agent count (generated topologies only) and record
/// the final loss and accuracy of the agent-averaged model.
pub fn sweep(cfg: &RunConfig, agent_counts: &[usize]) -> Result<(Vec<SweepRow>, String), HarnessError> {
    if let TopologySpec::EdgeFile(_) = cfg.topology {
        return Err(HarnessError::Unsupported("agent sweep needs a generated topology".into()));
    }
    if let DatasetSpec::Quadratic { .. } = cfg.dataset {
        return Err(HarnessError::Unsupported("agent sweep needs a classification dataset".into()));
    }
    let mut rows = Vec::with_capacity(agent_counts.len());
    for &n in agent_counts {
        let mut c = cfg.clone();
        c.agents = n;
        let outcome = run_trials(&c)?;
        let last = outcome.summary.f_mean.len() - 1;
        let acc = outcome.accuracy.as_deref().unwrap_or(&[]);
        let (accuracy_mean, accuracy_std) = mean_std(acc);
        rows.push(SweepRow {
            agents: n,
            f_mean: outcome.summary.f_mean[last],
            f_std: outcome.summary.f_std[last],
            accuracy_mean,
            accuracy_std,
            epsilon: outcome.budget.as_ref().map(|b| b.epsilon),
        });
    }
    let mut out = header_block("padmm sweep", cfg, "");
    let _ = writeln!(
        out,
        "# agents = {}",
        agent_counts.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(",")
    );
    out.push_str("agents,f_mean_final,f_std_final,accuracy_mean,accuracy_std,epsilon\n");
    for r in &rows {
        let eps = r.epsilon.map_or_else(|| "inf".to_string(), |e| e.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.agents, r.f_mean, r.f_std, r.accuracy_mean, r.accuracy_std, eps
        );
    }
    Ok((rows, out))
}
