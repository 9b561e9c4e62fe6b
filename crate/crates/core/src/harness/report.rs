//! `account` and `bounds` reports.

use std::fmt::Write as _;

use super::{build_problem, build_topology, header_block, privacy_plan, run_trials_on, HarnessError, RunConfig};
use crate::bounds::{
    convex_bound, grid_search, reference_r_star, running_average, stacked_distance_sq, strong_bound_trajectory,
    strong_constants, BoundsConfig, StrongBoundReport,
};
use crate::engine::{self, EngineConfig, Mode};
use crate::harness::config::ConfigError;
use crate::objective::LocalObjective;
use crate::privacy::{compose_geometric, step_rho, zcdp_to_dp, PrivacyBudget};

#[derive(Debug, Clone, PartialEq)]
pub struct AccountRow {
    pub agent: usize,
    pub degree: usize,
    pub sensitivity: f64,
    pub sigma2_init: f64,
    pub rho_first: f64,
    pub rho_total: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccountReport {
    pub rows: Vec<AccountRow>,
    pub budget: Option<PrivacyBudget>,
    pub delta: f64,
    pub decay: f64,
    pub horizon: usize,
}

/// Per-agent privacy budget of a configuration. Needs only the topology.
pub fn account(cfg: &RunConfig) -> Result<AccountReport, HarnessError> {
    let topology = build_topology(cfg, 1)?;
    let plan = privacy_plan(cfg, &topology)?;
    let sens = super::sensitivities(cfg, &topology)?;
    let mut rows = Vec::with_capacity(topology.n_agents());
    for (i, &s) in sens.iter().enumerate() {
        let sigma2 = plan.as_ref().map_or(0.0, |(sched, _)| sched.sigma2_init()[i]);
        let (rho_first, rho_total, epsilon) = if sigma2 > 0.0 {
            let r1 = step_rho(s, sigma2)?;
            let total = compose_geometric(r1, cfg.decay, cfg.horizon)?;
            (r1, total, zcdp_to_dp(total, cfg.delta)?)
        } else {
            (f64::INFINITY, f64::INFINITY, f64::INFINITY)
        };
        rows.push(AccountRow {
            agent: i,
            degree: topology.degree(i),
            sensitivity: s,
            sigma2_init: sigma2,
            rho_first,
            rho_total,
            epsilon,
        });
    }
    Ok(AccountReport {
        budget: plan.as_ref().and_then(|(s, sens)| super::budget(s, sens, cfg.delta)),
        rows,
        delta: cfg.delta,
        decay: cfg.decay,
        horizon: cfg.horizon,
    })
}

const ACCOUNT_COLUMNS: [&str; 7] = ["agent", "degree", "sensitivity", "sigma2_init", "rho_first", "rho_total", "epsilon"];

impl AccountReport {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.agent.to_string(),
                    r.degree.to_string(),
                    format!("{:.6e}", r.sensitivity),
                    format!("{:.6e}", r.sigma2_init),
                    format!("{:.6e}", r.rho_first),
                    format!("{:.6e}", r.rho_total),
                    format!("{:.6}", r.epsilon),
                ]
            })
            .collect()
    }

    fn footer(&self) -> String {
        match &self.budget {
            Some(b) => format!(
                "total: rho = {:.6e}, epsilon = {:.6} at delta = {} (worst agent {}), K = {}, R = {}",
                b.rho_total_worst, b.epsilon, b.delta, b.worst_agent, self.horizon, self.decay
            ),
            None => "total: no privacy guarantee (non-private or zero-variance schedule)".to_string(),
        }
    }

    /// Column-aligned table.
    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let widths: Vec<usize> = (0..ACCOUNT_COLUMNS.len())
            .map(|c| cells.iter().map(|r| r[c].len()).chain([ACCOUNT_COLUMNS[c].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |row: Vec<&str>| {
            row.iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let _ = writeln!(out, "{}", line(ACCOUNT_COLUMNS.to_vec()));
        for r in &cells {
            let _ = writeln!(out, "{}", line(r.iter().map(String::as_str).collect()));
        }
        let _ = writeln!(out, "{}", self.footer());
        out
    }

    pub fn to_csv(&self, cfg: &RunConfig) -> String {
        let mut out = header_block("padmm account", cfg, "");
        let _ = writeln!(out, "# {}", self.footer());
        let _ = writeln!(out, "{}", ACCOUNT_COLUMNS.join(","));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.agent, r.degree, r.sensitivity, r.sigma2_init, r.rho_first, r.rho_total, r.epsilon
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsRow {
    pub k: usize,
    pub strong_bound: Option<f64>,
    /// Trial mean of `||x~^k - x*||^2`.
    pub strong_empirical: f64,
    pub convex_bound: Option<f64>,
    /// Trial mean of `f(x^_k) - f(x*)`; absent at `k = 0`.
    pub convex_empirical: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsOutput {
    pub mu_hessian: f64,
    /// Strong-convexity constant in the bound's convention (half the Hessian one).
    pub mu: f64,
    pub v: f64,
    pub phi: [(&'static str, f64); 7],
    pub strong: Option<StrongBoundReport>,
    pub candidates: usize,
    pub certificate: Option<String>,
    pub r_star_steps: Option<usize>,
    pub notes: Vec<String>,
    pub rows: Vec<BoundsRow>,
}

/// Reference non-private run length for the accumulated r* surrogate.
pub const R_STAR_HORIZON: usize = 5000;
pub const R_STAR_TOLERANCE: f64 = 1e-10;
/// Centralized solver settings for x*.
pub const X_STAR_TOLERANCE: f64 = 1e-9;
pub const X_STAR_MAX_ITERS: usize = 200_000;

fn total_loss(objectives: &[Box<dyn LocalObjective>], xs: &[Vec<f64>]) -> f64 {
    objectives.iter().zip(xs).map(|(o, x)| o.loss(x)).sum()
}

/// Theory constants for `cfg`, plus both bounds evaluated against the
/// trial-mean empirical quantities of the configured run.
pub fn bounds_report(cfg: &RunConfig) -> Result<BoundsOutput, HarnessError> {
    let problem = build_problem(cfg)?;
    let spectra = problem.topology.spectral()?;
    let n = problem.topology.n_agents();
    let mu_hessian = problem.curvature.mu;
    let mu = 0.5 * mu_hessian;
    let v = problem.curvature.v;
    let mut notes = Vec::new();

    let (strong, candidates, certificate) = if mu > 0.0 {
        let o = cfg.bounds;
        match (o.kappa2, o.b) {
            (Some(kappa2), Some(b)) => {
                let bc = BoundsConfig {
                    kappa2,
                    kappa4: o.kappa4,
                    b,
                    theta: o.theta,
                };
                let r = strong_constants(&spectra, mu, v, &bc)?;
                (Some(r), 1, crate::bounds::infeasibility_certificate(&spectra, mu, v))
            }
            (None, None) => {
                let g = grid_search(&spectra, mu, v, o.kappa4)?;
                if g.best.is_none() {
                    notes.push(format!("no feasible constants among {} grid candidates", g.candidates));
                }
                (g.best, g.candidates, g.certificate)
            }
            (Some(_), None) => {
                return Err(ConfigError::Validation {
                    field: "b".into(),
                    msg: "kappa2 and b must be given together".into(),
                }
                .into())
            }
            (None, Some(_)) => {
                return Err(ConfigError::Validation {
                    field: "kappa2".into(),
                    msg: "kappa2 and b must be given together".into(),
                }
                .into())
            }
        }
    } else {
        notes.push("objective is not strongly convex (mu = 0); linear-rate bound skipped".into());
        (None, 0, None)
    };
    if let Some(r) = &strong {
        if !r.feasible {
            notes.push(format!("constants infeasible: {}", r.violation.as_deref().unwrap_or("")));
        }
        if ((cfg.eta - r.eta_prescribed) / r.eta_prescribed).abs() > 1e-9 {
            notes.push(format!(
                "engine eta = {} differs from the prescribed eta = {}; the linear-rate bound is stated for the prescribed value",
                cfg.eta, r.eta_prescribed
            ));
        }
    }

    let x_star_one = engine::centralized_reference(&problem.objectives, X_STAR_TOLERANCE, X_STAR_MAX_ITERS)?;
    let x_star = vec![x_star_one; n];
    let f_star = total_loss(&problem.objectives, &x_star);
    let outcome = run_trials_on(cfg, &problem)?;
    let trials = outcome.trajectories.len() as f64;
    let horizon = cfg.horizon;

    let mut strong_empirical = vec![0.0; horizon + 1];
    for t in &outcome.trajectories {
        for (k, s) in t.snapshots.iter().enumerate() {
            strong_empirical[k] += stacked_distance_sq(&s.x_tilde, &x_star) / trials;
        }
    }

    let mut r_star_steps = None;
    let strong_bound = match strong.as_ref().filter(|r| r.feasible) {
        None => None,
        Some(report) => {
            let mut reference_cfg = EngineConfig::new(cfg.eta, R_STAR_HORIZON, Mode::NonPrivate);
            reference_cfg.inner = cfg.inner;
            reference_cfg.rule = cfg.rule;
            reference_cfg.execution = cfg.execution;
            let x0 = outcome.trajectories[0].snapshots[0].x.clone();
            let reference = engine::run_from(&problem.topology, &problem.objectives, &reference_cfg, x0)?;
            match reference_r_star(&spectra, &reference, R_STAR_TOLERANCE) {
                Err(e) => {
                    notes.push(format!("r* surrogate unavailable: {e}"));
                    None
                }
                Ok(rs) => {
                    r_star_steps = Some(rs.steps);
                    notes.push(format!(
                        "r* is approximated by accumulating Q x~^s over a {}-step non-private reference run",
                        rs.steps
                    ));
                    let mut mean = vec![0.0; horizon + 1];
                    let mut ok = true;
                    for t in &outcome.trajectories {
                        match strong_bound_trajectory(
                            report,
                            &t.snapshots[0].x_tilde,
                            &x_star,
                            &rs.r0,
                            &rs.r_star,
                            outcome.schedule.as_ref(),
                            horizon,
                        ) {
                            Ok(b) => mean.iter_mut().zip(b).for_each(|(m, v)| *m += v / trials),
                            Err(e) => {
                                notes.push(e.to_string());
                                ok = false;
                                break;
                            }
                        }
                    }
                    ok.then_some(mean)
                }
            }
        }
    };

    let averages: Vec<Vec<Vec<Vec<f64>>>> = outcome.trajectories.iter().map(running_average).collect();
    let ks: Vec<usize> = (1..=horizon).collect();
    let mut convex_mean = vec![0.0; horizon];
    let mut convex_ok = horizon > 0;
    for t in &outcome.trajectories {
        match convex_bound(&spectra, cfg.eta, &t.snapshots[0].x, &x_star, outcome.schedule.as_ref(), &ks) {
            Ok(rep) => convex_mean.iter_mut().zip(&rep.points).for_each(|(m, p)| *m += p.total() / trials),
            Err(e) => {
                notes.push(format!("general convex bound skipped: {e}"));
                convex_ok = false;
                break;
            }
        }
    }
    let mut rows = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let convex_empirical = (k > 0).then(|| {
            averages
                .iter()
                .map(|a| total_loss(&problem.objectives, &a[k - 1]) - f_star)
                .sum::<f64>()
                / trials
        });
        rows.push(BoundsRow {
            k,
            strong_bound: strong_bound.as_ref().map(|b| b[k]),
            strong_empirical: strong_empirical[k],
            convex_bound: (convex_ok && k > 0).then(|| convex_mean[k - 1]),
            convex_empirical,
        });
    }

    Ok(BoundsOutput {
        mu_hessian,
        mu,
        v,
        phi: [
            ("phi_max(L+)", spectra.phi_max_lplus),
            ("phi_min(L+)", spectra.phi_min_lplus),
            ("phi_max(L-)", spectra.phi_max_lminus),
            ("phi_min(L-)", spectra.phi_min_lminus),
            ("phi_max(M)", spectra.phi_max_m),
            ("phi_min(Q)", spectra.phi_min_q),
            ("phi_max(Q)", spectra.phi_max_q),
        ],
        strong,
        candidates,
        certificate,
        r_star_steps,
        notes,
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl BoundsOutput {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "curvature: mu (Hessian) = {}, mu (bound) = {}, v = {}", self.mu_hessian, self.mu, self.v);
        for (name, value) in &self.phi {
            let _ = writeln!(out, "{name:<12} = {value:.9}");
        }
        match &self.strong {
            None => {
                let _ = writeln!(out, "linear-rate bound: not evaluated");
            }
            Some(r) => {
                let _ = writeln!(
                    out,
                    "linear-rate constants ({} candidate(s)): feasible = {}",
                    self.candidates, r.feasible
                );
                for (name, value) in [
                    ("kappa1", r.kappa1),
                    ("kappa2", r.kappa2),
                    ("kappa3", r.kappa3),
                    ("kappa4", r.kappa4),
                    ("b", r.b),
                    ("theta", r.theta),
                    ("zeta", r.zeta),
                    ("eta_prescribed", r.eta_prescribed),
                    ("P", r.p),
                    ("H1", r.h1),
                    ("H2", r.h2),
                    ("W", r.w),
                    ("S2", r.s2),
                    ("S3", r.s3),
                ] {
                    let _ = writeln!(out, "  {name:<15} = {value:.9e}");
                }
            }
        }
        if let Some(c) = &self.certificate {
            let _ = writeln!(out, "infeasible for all constants: {c}");
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        if let Some(last) = self.rows.last() {
            let _ = writeln!(
                out,
                "final k = {}: strong bound = {}, strong empirical = {}, convex bound = {}, convex empirical = {}",
                last.k,
                opt(last.strong_bound),
                last.strong_empirical,
                opt(last.convex_bound),
                opt(last.convex_empirical)
            );
        }
        out
    }

    pub fn to_csv(&self, cfg: &RunConfig) -> String {
        let mut out = header_block("padmm bounds", cfg, "");
        for n in &self.notes {
            let _ = writeln!(out, "# note: {n}");
        }
        out.push_str("k,strong_bound,strong_empirical,convex_bound,convex_empirical\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.k,
                opt(r.strong_bound),
                r.strong_empirical,
                opt(r.convex_bound),
                opt(r.convex_empirical)
            );
        }
        out
    }
}
