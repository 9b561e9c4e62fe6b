//! Decentralized consensus ADMM with optional perturbation of the broadcast
//! primal variables.
//!
//! Every iteration has three phases separated by barriers:
//!
//! 1. each agent solves its x-update from the step-k broadcasts,
//! 2. perturbs the result with its current noise variance and broadcasts it,
//! 3. updates its dual variable from the step-(k+1) broadcasts.
//!
//! Agents only read immutable broadcast snapshots and mutate their own state,
//! so phases 1 and 3 run data-parallel. Every agent draws noise from its own
//! stream, keyed by the master seed and agent id, which makes trajectories
//! independent of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::linalg::{axpy, norm, norm_sq, sub};
use crate::objective::LocalObjective;
use crate::privacy::{step_rho, NoiseSchedule};
use crate::topology::Topology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("inner solver for agent {agent} at iteration {iteration} stopped with residual {residual:e} after {iters} iterations")]
    InnerSolverDiverged {
        agent: usize,
        iteration: usize,
        residual: f64,
        iters: usize,
    },
    #[error("reference solver did not converge: gradient norm {grad_norm:e} after {iterations} iterations")]
    NotConverged { iterations: usize, grad_norm: f64 },
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    NonPrivate,
    Private {
        schedule: NoiseSchedule,
        /// Per-agent sensitivity, used only to report the cumulative rho.
        sensitivities: Vec<f64>,
    },
}

/// Which own iterate enters the x-update right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XUpdateRule {
    /// Own perturbed broadcast `x~_i^k`, as in the analyzed matrix form.
    #[default]
    Perturbed,
    /// Own unperturbed `x_i^k`, as literally written in the per-agent update.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSolver {
    pub max_iters: usize,
    pub tolerance: f64,
}

impl Default for InnerSolver {
    fn default() -> Self {
        Self {
            max_iters: 500,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Uniform { lo: f64, hi: f64, seed: u64 },
}

impl Default for Init {
    fn default() -> Self {
        Init::Uniform {
            lo: -0.1,
            hi: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub eta: f64,
    pub mode: Mode,
    pub inner: InnerSolver,
    pub horizon: usize,
    pub init: Init,
    pub rule: XUpdateRule,
    pub noise_seed: u64,
    pub execution: Execution,
}

impl EngineConfig {
    pub fn new(eta: f64, horizon: usize, mode: Mode) -> Self {
        Self {
            eta,
            mode,
            inner: InnerSolver::default(),
            horizon,
            init: Init::default(),
            rule: XUpdateRule::default(),
            noise_seed: 0,
            execution: Execution::default(),
        }
    }

    fn validate(&self, n_agents: usize) -> Result<(), EngineError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(EngineError::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.inner.tolerance > 0.0) || self.inner.max_iters == 0 {
            return Err(EngineError::InvalidConfig("inner solver needs tolerance > 0 and max_iters > 0".into()));
        }
        if let Init::Uniform { lo, hi, .. } = self.init {
            if !(lo <= hi) {
                return Err(EngineError::InvalidConfig(format!("init range [{lo}, {hi}] is empty")));
            }
        }
        if let Mode::Private { schedule, sensitivities } = &self.mode {
            if schedule.n_agents() != n_agents || sensitivities.len() != n_agents {
                return Err(EngineError::InvalidConfig(format!(
                    "noise schedule covers {} agents, sensitivities {}, topology has {n_agents}",
                    schedule.n_agents(),
                    sensitivities.len()
                )));
            }
            if schedule.horizon() != self.horizon {
                return Err(EngineError::InvalidConfig(format!(
                    "noise schedule horizon {} differs from run horizon {}",
                    schedule.horizon(),
                    self.horizon
                )));
            }
        }
        Ok(())
    }
}

/// One agent's private state.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub x: Vec<f64>,
    pub x_tilde: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Variance for the next broadcast.
    pub sigma2: f64,
    pub rho_cumulative: f64,
    rng: ChaCha8Rng,
}

impl AgentState {
    pub fn new(x0: Vec<f64>, sigma2: f64, rng: ChaCha8Rng) -> Self {
        Self {
            x_tilde: x0.clone(),
            alpha: vec![0.0; x0.len()],
            x: x0,
            sigma2,
            rho_cumulative: 0.0,
            rng,
        }
    }
}

/// Per-agent stream `agent` of the ChaCha generator keyed by `seed`.
pub fn agent_rng(seed: u64, agent: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64);
    rng
}

/// Solve `grad f_i(x) + alpha + 2 eta n x = eta (n own + sum_j x~_j)` for `x`.
///
/// Returns the solution and the number of inner iterations used (0 for a
/// closed form). Gradient descent runs on the strongly convex surrogate
/// `f_i(x) + eta n ||x||^2 - <b, x>` with step `1 / (v + 2 eta n)`.
#[allow(clippy::too_many_arguments)]
pub fn x_update<O: LocalObjective + ?Sized>(
    objective: &O,
    alpha: &[f64],
    own: &[f64],
    neighbor_sum: &[f64],
    degree: usize,
    eta: f64,
    warm_start: &[f64],
    inner: &InnerSolver,
) -> Result<(Vec<f64>, usize), (f64, usize)> {
    let n = degree as f64;
    let penalty = 2.0 * eta * n;
    let b: Vec<f64> = own
        .iter()
        .zip(neighbor_sum)
        .zip(alpha)
        .map(|((o, s), a)| eta * (n * o + s) - a)
        .collect();
    if let Some(x) = objective.solve_penalized(&b, penalty) {
        return Ok((x, 0));
    }
    let step = 1.0 / (objective.smoothness() + penalty);
    let mut x = warm_start.to_vec();
    let mut residual = f64::INFINITY;
    for it in 0..inner.max_iters {
        let mut r = objective.update_gradient(&x);
        for ((rj, xj), bj) in r.iter_mut().zip(&x).zip(&b) {
            *rj += penalty * xj - bj;
        }
        residual = norm(&r);
        if residual <= inner.tolerance {
            return Ok((x, it));
        }
        axpy(-step, &r, &mut x);
    }
    let mut r = objective.update_gradient(&x);
    for ((rj, xj), bj) in r.iter_mut().zip(&x).zip(&b) {
        *rj += penalty * xj - bj;
    }
    let final_residual = norm(&r);
    if final_residual <= inner.tolerance {
        return Ok((x, inner.max_iters));
    }
    Err((residual.min(final_residual), inner.max_iters))
}

/// `x~ = x + xi`, `xi ~ N(0, sigma2 I)`; no draw when `sigma2 == 0`.
pub fn perturb(x: &[f64], sigma2: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sigma2 == 0.0 {
        return x.to_vec();
    }
    let sd = sigma2.sqrt();
    x.iter()
        .map(|v| v + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `alpha + eta (n x~_i - sum_j x~_j)`.
pub fn dual_update(alpha: &[f64], own: &[f64], neighbor_sum: &[f64], degree: usize, eta: f64) -> Vec<f64> {
    let n = degree as f64;
    alpha
        .iter()
        .zip(own)
        .zip(neighbor_sum)
        .map(|((a, o), s)| a + eta * (n * o - s))
        .collect()
}

fn neighbor_sum(topology: &Topology, agent: usize, broadcasts: &[Vec<f64>]) -> Vec<f64> {
    let mut s = vec![0.0; broadcasts[agent].len()];
    for &j in topology.neighbors(agent) {
        axpy(1.0, &broadcasts[j], &mut s);
    }
    s
}

/// State of every agent after iteration `iteration` (0 is the initial state).
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub x: Vec<Vec<f64>>,
    pub x_tilde: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    /// Variance used for this iteration's broadcast (0 at iteration 0).
    pub sigma2: Vec<f64>,
    pub rho_cumulative: Vec<f64>,
    pub local_loss: Vec<f64>,
    /// Record-weighted mean per-record loss of each agent's own iterate on
    /// its own shard.
    pub loss_global_avg: f64,
    /// Mean per-record loss over all records at the agent-averaged iterate.
    pub loss_avg_iterate: f64,
    /// `max over edges ||x_i - x_j||`.
    pub consensus_residual: f64,
    pub inner_iterations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    pub fn losses(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.loss_global_avg).collect()
    }
}

fn snapshot<O: LocalObjective>(
    iteration: usize,
    topology: &Topology,
    objectives: &[O],
    agents: &[AgentState],
    sigma2_used: Vec<f64>,
    inner_iterations: Vec<usize>,
    exec: Execution,
) -> Snapshot {
    let x: Vec<Vec<f64>> = agents.iter().map(|a| a.x.clone()).collect();
    let dim = x[0].len();
    let mut x_bar = vec![0.0; dim];
    for xi in &x {
        axpy(1.0 / x.len() as f64, xi, &mut x_bar);
    }
    let per_agent = exec::map_range(agents.len(), exec, |i| {
        let o = &objectives[i];
        (o.loss(&x[i]), o.record_loss(&x[i]), o.record_loss(&x_bar))
    });
    let total_weight: f64 = objectives.iter().map(|o| o.weight() as f64).sum();
    let mut loss_global_avg = 0.0;
    let mut loss_avg_iterate = 0.0;
    for (o, (_, own, avg)) in objectives.iter().zip(&per_agent) {
        let w = o.weight() as f64 / total_weight;
        loss_global_avg += w * own;
        loss_avg_iterate += w * avg;
    }
    let consensus_residual = topology
        .edges()
        .iter()
        .map(|&(a, b)| norm(&sub(&x[a], &x[b])))
        .fold(0.0, f64::max);
    Snapshot {
        iteration,
        x_tilde: agents.iter().map(|a| a.x_tilde.clone()).collect(),
        alpha: agents.iter().map(|a| a.alpha.clone()).collect(),
        sigma2: sigma2_used,
        rho_cumulative: agents.iter().map(|a| a.rho_cumulative).collect(),
        local_loss: per_agent.iter().map(|p| p.0).collect(),
        x,
        loss_global_avg,
        loss_avg_iterate,
        consensus_residual,
        inner_iterations,
    }
}

fn initial_iterate(init: &Init, agent: usize, dim: usize) -> Vec<f64> {
    match *init {
        Init::Zeros => vec![0.0; dim],
        Init::Uniform { lo, hi, seed } => {
            let mut rng = agent_rng(seed, agent);
            (0..dim)
                .map(|_| if lo == hi { lo } else { rng.random_range(lo..hi) })
                .collect()
        }
    }
}

/// Run `config.horizon` iterations. With [`Mode::NonPrivate`] this is the
/// conventional decentralized ADMM.
pub fn run<O: LocalObjective>(
    topology: &Topology,
    objectives: &[O],
    config: &EngineConfig,
) -> Result<Trajectory, EngineError> {
    let initial: Vec<Vec<f64>> = (0..topology.n_agents())
        .map(|i| initial_iterate(&config.init, i, topology.dim()))
        .collect();
    run_from(topology, objectives, config, initial)
}

/// [`run`] from explicit initial iterates `x^0` (which are also `x~^0`).
pub fn run_from<O: LocalObjective>(
    topology: &Topology,
    objectives: &[O],
    config: &EngineConfig,
    initial: Vec<Vec<f64>>,
) -> Result<Trajectory, EngineError> {
    let n_agents = topology.n_agents();
    config.validate(n_agents)?;
    if objectives.len() != n_agents || initial.len() != n_agents {
        return Err(EngineError::InvalidConfig(format!(
            "{} objectives and {} initial iterates for {n_agents} agents",
            objectives.len(),
            initial.len()
        )));
    }
    let dim = topology.dim();
    if objectives.iter().any(|o| o.dim() != dim) || initial.iter().any(|x| x.len() != dim) {
        return Err(EngineError::InvalidConfig(format!("all iterates and objectives must have dimension {dim}")));
    }

    let (decay, sensitivities) = match &config.mode {
        Mode::NonPrivate => (1.0, None),
        Mode::Private { schedule, sensitivities } => (schedule.decay(), Some(sensitivities.clone())),
    };
    let mut agents: Vec<AgentState> = initial
        .into_iter()
        .enumerate()
        .map(|(i, x0)| {
            let sigma2 = match &config.mode {
                Mode::NonPrivate => 0.0,
                Mode::Private { schedule, .. } => schedule.sigma2_init()[i],
            };
            let mut state = AgentState::new(x0, sigma2, agent_rng(config.noise_seed, i));
            if sensitivities.is_none() {
                state.rho_cumulative = f64::INFINITY;
            }
            state
        })
        .collect();

    let exec = config.execution;
    let mut snapshots = Vec::with_capacity(config.horizon + 1);
    snapshots.push(snapshot(0, topology, objectives, &agents, vec![0.0; n_agents], vec![0; n_agents], exec));

    for k in 0..config.horizon {
        // Phase 1: x-update and perturbation from the step-k broadcasts.
        let broadcasts: Vec<Vec<f64>> = agents.iter().map(|a| a.x_tilde.clone()).collect();
        let results = exec::map_mut(&mut agents, exec, |i, state| {
            let nb = neighbor_sum(topology, i, &broadcasts);
            let own = match config.rule {
                XUpdateRule::Perturbed => &broadcasts[i],
                XUpdateRule::Literal => &state.x,
            };
            let (x_next, iters) = x_update(
                &objectives[i],
                &state.alpha,
                own,
                &nb,
                topology.degree(i),
                config.eta,
                &state.x,
                &config.inner,
            )
            .map_err(|(residual, iters)| EngineError::InnerSolverDiverged {
                agent: i,
                iteration: k + 1,
                residual,
                iters,
            })?;
            let used = state.sigma2;
            state.x_tilde = perturb(&x_next, used, &mut state.rng);
            state.x = x_next;
            state.sigma2 = used * decay;
            if let Some(sens) = &sensitivities {
                state.rho_cumulative += step_rho(sens[i], used).unwrap_or(f64::INFINITY);
            }
            Ok::<_, EngineError>((used, iters))
        });
        let mut sigma2_used = Vec::with_capacity(n_agents);
        let mut inner_iterations = Vec::with_capacity(n_agents);
        for r in results {
            let (s, it) = r?;
            sigma2_used.push(s);
            inner_iterations.push(it);
        }

        // Phase 2 barrier: everyone has broadcast x~^{k+1}.
        let broadcasts: Vec<Vec<f64>> = agents.iter().map(|a| a.x_tilde.clone()).collect();
        exec::for_each_mut(&mut agents, exec, |i, state| {
            let nb = neighbor_sum(topology, i, &broadcasts);
            state.alpha = dual_update(&state.alpha, &state.x_tilde, &nb, topology.degree(i), config.eta);
        });

        snapshots.push(snapshot(k + 1, topology, objectives, &agents, sigma2_used, inner_iterations, exec));
    }
    Ok(Trajectory { snapshots })
}

/// Minimize `sum_i f_i(x)` over a single shared `x` by gradient descent with
/// Armijo backtracking. Uses unclipped gradients.
pub fn centralized_reference<O: LocalObjective>(
    objectives: &[O],
    tolerance: f64,
    max_iters: usize,
) -> Result<Vec<f64>, EngineError> {
    let dim = objectives
        .first()
        .ok_or_else(|| EngineError::InvalidConfig("no objectives".into()))?
        .dim();
    let total = |x: &[f64]| objectives.iter().map(|o| o.loss(x)).sum::<f64>();
    let grad = |x: &[f64]| {
        let mut g = vec![0.0; dim];
        for o in objectives {
            axpy(1.0, &o.gradient(x), &mut g);
        }
        g
    };
    // Fixed step for the endgame: 1/L is a descent step for any L-smooth sum.
    let fixed = 1.0 / objectives.iter().map(|o| o.smoothness()).sum::<f64>();
    let mut x = vec![0.0; dim];
    let mut f = total(&x);
    let mut step = 1.0;
    let mut endgame = false;
    for it in 0..max_iters {
        let g = grad(&x);
        let gn2 = norm_sq(&g);
        if gn2.sqrt() <= tolerance {
            return Ok(x);
        }
        if endgame {
            axpy(-fixed, &g, &mut x);
            continue;
        }
        step *= 2.0;
        loop {
            let mut cand = x.clone();
            axpy(-step, &g, &mut cand);
            let fc = total(&cand);
            if fc < f - 0.5 * step * gn2 {
                x = cand;
                f = fc;
                break;
            }
            // Decrease below the rounding level of f: Armijo can no longer
            // discriminate, so finish with fixed steps.
            if 0.5 * step * gn2 <= 1e-12 * f.abs().max(1.0) && fixed.is_finite() {
                endgame = true;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                return Err(EngineError::NotConverged {
                    iterations: it,
                    grad_norm: gn2.sqrt(),
                });
            }
        }
    }
    let gn = norm(&grad(&x));
    if gn <= tolerance {
        Ok(x)
    } else {
        Err(EngineError::NotConverged {
            iterations: max_iters,
            grad_norm: gn,
        })
    }
}
