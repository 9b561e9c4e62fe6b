//! Convergence-theory constants and bound trajectories.
//!
//! Strongly convex case: a linear-rate bound on `E||x~^k - x*||^2` with
//! contraction factor `W`, valid only for constants satisfying a set of
//! feasibility constraints that are checked here rather than assumed.
//! General convex case: an `O(1/K)` bound on the running-average objective gap.
//!
//! `mu` here follows the strong-convexity inequality without a 1/2 factor,
//! i.e. half the Hessian lower bound reported by [`crate::objective::curvature`].

use thiserror::Error;

use crate::engine::Trajectory;
use crate::linalg::{norm, norm_sq, sub};
use crate::privacy::NoiseSchedule;
use crate::topology::SpectralData;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("invalid bound parameter: {0}")]
    InvalidParameter(String),
    #[error("bound does not apply: {0}")]
    InfeasibleBound(String),
    #[error("accumulated r sequence did not settle: last increment {increment:e} after {steps} steps")]
    NotConverged { steps: usize, increment: f64 },
}

fn invalid(msg: impl Into<String>) -> BoundsError {
    BoundsError::InvalidParameter(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsConfig {
    pub kappa2: f64,
    pub kappa4: f64,
    pub b: f64,
    /// `None` picks half of `min(H1, H2)`.
    pub theta: Option<f64>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            kappa2: 2.0,
            kappa4: 2.0,
            b: 0.5,
            theta: None,
        }
    }
}

impl BoundsConfig {
    fn validate(&self) -> Result<(), BoundsError> {
        if !(self.kappa2 > 1.0 && self.kappa2.is_finite()) {
            return Err(invalid(format!("kappa2 must exceed 1, got {}", self.kappa2)));
        }
        if !(self.kappa4 > 1.0 && self.kappa4.is_finite()) {
            return Err(invalid(format!("kappa4 must exceed 1, got {}", self.kappa4)));
        }
        if !(self.b > 0.0 && self.b < 1.0) {
            return Err(invalid(format!("b must lie in (0, 1), got {}", self.b)));
        }
        if let Some(t) = self.theta {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid(format!("theta must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongBoundReport {
    pub mu: f64,
    pub v: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub b: f64,
    pub theta: f64,
    pub zeta: f64,
    pub eta_prescribed: f64,
    pub p: f64,
    pub h1: f64,
    pub h2: f64,
    pub w: f64,
    pub s2: f64,
    pub s3: f64,
    pub feasible: bool,
    /// First violated constraint when infeasible.
    pub violation: Option<String>,
}

/// Evaluate every constant of the strongly convex bound for the given choice
/// of free parameters, and check the feasibility constraints.
pub fn strong_constants(
    spectra: &SpectralData,
    mu: f64,
    v: f64,
    cfg: &BoundsConfig,
) -> Result<StrongBoundReport, BoundsError> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(invalid(format!("strongly convex bound needs mu > 0, got {mu}")));
    }
    if !(v >= mu && v.is_finite()) {
        return Err(invalid(format!("smoothness v must be finite and at least mu, got {v}")));
    }
    cfg.validate()?;
    let BoundsConfig { kappa2, kappa4, b, .. } = *cfg;

    let lp_max2 = spectra.phi_max_lplus.powi(2);
    let lp_min2 = spectra.phi_min_lplus.powi(2);
    let q_min2 = spectra.phi_min_q.powi(2);
    let m_max2 = spectra.phi_max_m.powi(2);
    let v2 = v * v;

    let kappa1 = 1.0 + 2.0 * mu * lp_max2 / (v2 * lp_min2);
    let zeta = 2.0 * (kappa2 - 1.0) * mu * q_min2 * lp_min2 / (kappa2 * v2 * lp_min2 + 2.0 * mu * lp_max2);
    let inv_k4 = 1.0 - 1.0 / kappa4;
    let h1 = b * (1.0 + zeta) * lp_min2 * inv_k4 / (4.0 * b * lp_min2 * inv_k4 + 16.0 * m_max2);
    let h2 = ((1.0 - b) * (1.0 + zeta) * lp_min2 - lp_max2) / (4.0 * lp_max2 + 4.0 * (1.0 - b) * lp_min2);
    let theta = cfg.theta.unwrap_or(0.5 * h1.min(h2));

    let kappa3 = ((v2 * lp_min2 + 2.0 * mu * lp_max2) / (theta * kappa1 * v2 * lp_min2)).sqrt() + 1.0;
    let eta_prescribed =
        (kappa1 * kappa2 * (kappa3 - 1.0) * v2 / (kappa3 * (kappa2 - 1.0) * q_min2 * lp_min2)).sqrt();
    let eta2 = eta_prescribed * eta_prescribed;
    let p = zeta * eta2 * kappa2 * m_max2 / q_min2 + zeta * eta2 * lp_max2 * kappa3 / 4.0;

    let s2 = 4.0 / ((1.0 + 4.0 * theta) * lp_max2);
    let w = (1.0 + 4.0 * theta) * lp_max2 / ((1.0 - b) * (1.0 + zeta - 4.0 * theta) * lp_min2);
    let inner = zeta.sqrt() + (2.0 * (kappa2 - 1.0) * q_min2 / (theta * kappa1 * kappa2)).sqrt();
    let s3 = (4.0 * zeta * kappa2 * m_max2 / q_min2 + lp_max2 * inner * inner)
        / ((1.0 - b) * (1.0 + zeta) * (1.0 + zeta - 4.0 * theta) * lp_min2)
        + b * (kappa4 - 1.0) / (1.0 - b);

    let lhs = (1.0 - b) * (1.0 + zeta) * lp_min2;
    let violation = if lhs <= lp_max2 {
        Some(format!(
            "(1-b)(1+zeta)phi_min^2(L+) = {lhs:.6} does not exceed phi_max^2(L+) = {lp_max2:.6}"
        ))
    } else if !(theta > 0.0) || theta >= h1.min(h2) {
        Some(format!("theta = {theta:.6e} is not in (0, min(H1, H2)) = (0, {:.6e})", h1.min(h2)))
    } else if !(w > 0.0 && w < 1.0) {
        Some(format!("contraction factor W = {w:.6} is not in (0, 1)"))
    } else {
        None
    };

    Ok(StrongBoundReport {
        mu,
        v,
        kappa1,
        kappa2,
        kappa3,
        kappa4,
        b,
        theta,
        zeta,
        eta_prescribed,
        p,
        h1,
        h2,
        w,
        s2,
        s3,
        feasible: violation.is_none(),
        violation,
    })
}

pub const GRID_KAPPA2: [f64; 5] = [1.1, 1.5, 2.0, 5.0, 10.0];
pub const GRID_B: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Outcome of the constant search.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    /// Feasible report with the smallest `W`, if any.
    pub best: Option<StrongBoundReport>,
    pub candidates: usize,
    /// Proof that no choice of constants can be feasible, when one exists.
    pub certificate: Option<String>,
}

/// Search kappa2 and b over a fixed grid with theta = min(H1, H2) / 2,
/// keeping the feasible combination with the smallest contraction factor.
pub fn grid_search(spectra: &SpectralData, mu: f64, v: f64, kappa4: f64) -> Result<GridSearch, BoundsError> {
    let mut best: Option<StrongBoundReport> = None;
    let mut candidates = 0;
    for &kappa2 in &GRID_KAPPA2 {
        for &b in &GRID_B {
            candidates += 1;
            let cfg = BoundsConfig {
                kappa2,
                kappa4,
                b,
                theta: None,
            };
            let report = strong_constants(spectra, mu, v, &cfg)?;
            if report.feasible && best.as_ref().is_none_or(|cur| report.w < cur.w) {
                best = Some(report);
            }
        }
    }
    Ok(GridSearch {
        best,
        candidates,
        certificate: infeasibility_certificate(spectra, mu, v),
    })
}

/// Since zeta increases in kappa2 towards `2 mu phi_min^2(Q) / v^2`, the
/// requirement `(1-b)(1+zeta) phi_min^2(L+) > phi_max^2(L+)` can never hold
/// when `1 + 2 mu phi_min^2(Q) / v^2 <= phi_max^2(L+) / phi_min^2(L+)`.
/// Returns the argument as text in that case.
pub fn infeasibility_certificate(spectra: &SpectralData, mu: f64, v: f64) -> Option<String> {
    let zeta_sup = 2.0 * mu * spectra.phi_min_q.powi(2) / (v * v);
    let ratio = (spectra.phi_max_lplus / spectra.phi_min_lplus).powi(2);
    (1.0 + zeta_sup <= ratio).then(|| {
        format!(
            "zeta < 2 mu phi_min^2(Q) / v^2 = {zeta_sup:.6} for every kappa2 > 1, so \
             (1-b)(1+zeta) < {:.6} for every b in (0,1); feasibility needs \
             (1-b)(1+zeta) > phi_max^2(L+)/phi_min^2(L+) = {ratio:.6}, which is impossible",
            1.0 + zeta_sup
        )
    })
}

fn squared_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| norm_sq(&sub(x, y))).sum()
}

/// Right-hand side of the strongly convex bound for iterations `0..=horizon`:
/// `W^k (||x~0 - x*||^2 + S2 ||r0 - r*||^2 + d S3 sum_i sigma2_i^1 W / (W - R))`.
///
/// `schedule = None` drops the noise term.
pub fn strong_bound_trajectory(
    report: &StrongBoundReport,
    x_tilde0: &[Vec<f64>],
    x_star: &[Vec<f64>],
    r0: &[Vec<f64>],
    r_star: &[Vec<f64>],
    schedule: Option<&NoiseSchedule>,
    horizon: usize,
) -> Result<Vec<f64>, BoundsError> {
    if !report.feasible {
        return Err(BoundsError::InfeasibleBound(
            report.violation.clone().unwrap_or_else(|| "constants are infeasible".into()),
        ));
    }
    let d = x_tilde0.first().map_or(0, Vec::len) as f64;
    let noise = match schedule {
        None => 0.0,
        Some(s) => {
            let r = s.decay();
            if r >= report.w {
                return Err(BoundsError::InfeasibleBound(format!(
                    "variance decay R = {r} is not below W = {}",
                    report.w
                )));
            }
            d * report.s3 * s.total_initial_variance() * report.w / (report.w - r)
        }
    };
    let constant = squared_distance(x_tilde0, x_star) + report.s2 * squared_distance(r0, r_star) + noise;
    let mut out = Vec::with_capacity(horizon + 1);
    let mut wk = 1.0;
    for _ in 0..=horizon {
        out.push(wk * constant);
        wk *= report.w;
    }
    Ok(out)
}

/// `r^0 = Q x~^0` and the limit of `r^k = sum_{s<=k} Q x~^s` along a
/// non-private reference run.
#[derive(Debug, Clone, PartialEq)]
pub struct RStar {
    pub r0: Vec<Vec<f64>>,
    pub r_star: Vec<Vec<f64>>,
    /// Number of increments accumulated before the stopping rule fired.
    pub steps: usize,
    pub last_increment: f64,
}

/// Accumulate `Q x~^s` over `reference` until an increment's norm drops
/// below `tolerance`. This is an approximation of the limit point.
pub fn reference_r_star(
    spectra: &SpectralData,
    reference: &Trajectory,
    tolerance: f64,
) -> Result<RStar, BoundsError> {
    let first = reference
        .snapshots
        .first()
        .ok_or_else(|| invalid("empty reference trajectory"))?;
    let r0 = SpectralData::apply(&spectra.q_mat, &first.x_tilde);
    let mut acc = r0.clone();
    let mut last_increment = f64::INFINITY;
    for (s, snap) in reference.snapshots.iter().enumerate().skip(1) {
        let inc = SpectralData::apply(&spectra.q_mat, &snap.x_tilde);
        for (a, i) in acc.iter_mut().zip(&inc) {
            crate::linalg::axpy(1.0, i, a);
        }
        last_increment = inc.iter().map(|v| norm_sq(v)).sum::<f64>().sqrt();
        if last_increment < tolerance {
            return Ok(RStar {
                r0,
                r_star: acc,
                steps: s,
                last_increment,
            });
        }
    }
    Err(BoundsError::NotConverged {
        steps: reference.snapshots.len().saturating_sub(1),
        increment: last_increment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexBoundPoint {
    pub k: usize,
    pub q_term: f64,
    pub lplus_term: f64,
    pub noise_term: f64,
}

impl ConvexBoundPoint {
    pub fn total(&self) -> f64 {
        self.q_term + self.lplus_term + self.noise_term
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexBoundReport {
    pub eta: f64,
    /// Numerators of the three terms; each term is its numerator over K.
    pub q_numerator: f64,
    pub lplus_numerator: f64,
    pub noise_numerator: f64,
    pub points: Vec<ConvexBoundPoint>,
}

impl ConvexBoundReport {
    pub fn at(&self, k: usize) -> ConvexBoundPoint {
        ConvexBoundPoint {
            k,
            q_term: self.q_numerator / k as f64,
            lplus_term: self.lplus_numerator / k as f64,
            noise_term: self.noise_numerator / k as f64,
        }
    }
}

/// Right-hand side of the general convex bound on `E[f(x^_K) - f(x*)]`:
/// `eta ||Q x0||^2 / K + eta ||x0 - x*||^2_{L+/2} / K
///  + eta d phi_max^2(L+) sum_i sigma2_i^1 / (2 phi_min(L-) (1 - R) K)`.
pub fn convex_bound(
    spectra: &SpectralData,
    eta: f64,
    x0: &[Vec<f64>],
    x_star: &[Vec<f64>],
    schedule: Option<&NoiseSchedule>,
    ks: &[usize],
) -> Result<ConvexBoundReport, BoundsError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("eta must be positive, got {eta}")));
    }
    if x0.len() != x_star.len() || x0.len() != spectra.l_plus.rows() {
        return Err(invalid("x0 and x_star must hold one vector per agent"));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0) {
        return Err(invalid(format!("K must be positive, got {k}")));
    }
    let d = x0.first().map_or(0, Vec::len) as f64;
    let qx0 = SpectralData::apply(&spectra.q_mat, x0);
    let q_numerator = eta * qx0.iter().map(|v| norm_sq(v)).sum::<f64>();
    let diff: Vec<Vec<f64>> = x0.iter().zip(x_star).map(|(a, b)| sub(a, b)).collect();
    let lplus_numerator = eta * SpectralData::quadratic_form(&spectra.l_plus.scale(0.5), &diff);
    let noise_numerator = match schedule {
        None => 0.0,
        Some(s) => {
            let r = s.decay();
            if !(r > 0.0 && r < 1.0) {
                return Err(invalid(format!("general convex bound needs 0 < R < 1, got {r}")));
            }
            eta * d * spectra.phi_max_lplus.powi(2) * s.total_initial_variance()
                / (2.0 * spectra.phi_min_lminus * (1.0 - r))
        }
    };
    let mut report = ConvexBoundReport {
        eta,
        q_numerator,
        lplus_numerator,
        noise_numerator,
        points: Vec::new(),
    };
    report.points = ks.iter().map(|&k| report.at(k)).collect();
    Ok(report)
}

/// Per-agent running mean of `x^1..x^K` for every `K >= 1`; element `K - 1`
/// holds `x^_K`.
pub fn running_average(trajectory: &Trajectory) -> Vec<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(trajectory.snapshots.len().saturating_sub(1));
    let Some(first) = trajectory.snapshots.first() else {
        return out;
    };
    let mut sum: Vec<Vec<f64>> = first.x.iter().map(|x| vec![0.0; x.len()]).collect();
    for (k, snap) in trajectory.snapshots.iter().enumerate().skip(1) {
        for (s, x) in sum.iter_mut().zip(&snap.x) {
            crate::linalg::axpy(1.0, x, s);
        }
        out.push(sum.iter().map(|s| s.iter().map(|v| v / k as f64).collect()).collect());
    }
    out
}

/// `sum_i ||a_i - b_i||^2` over stacked per-agent vectors.
pub fn stacked_distance_sq(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    squared_distance(a, b)
}

/// `max_i ||a_i - b_i||`.
pub fn max_agent_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| norm(&sub(x, y))).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Snapshot;
    use crate::topology::{Topology, TopologyKind};
    use approx::assert_abs_diff_eq;

    fn spectra(kind: TopologyKind, n: usize) -> SpectralData {
        Topology::generate(&kind, n, 1).unwrap().spectral().unwrap()
    }

    #[test]
    fn kappa1_on_two_agents() {
        let s = spectra(TopologyKind::Complete, 2);
        let cfg = BoundsConfig {
            kappa2: 2.0,
            ..BoundsConfig::default()
        };
        let r = strong_constants(&s, 1.0, 1.0, &cfg).unwrap();
        assert_abs_diff_eq!(r.kappa1, 3.0, epsilon = 1e-12);
        assert!(r.zeta > 0.0 && r.kappa1 > 1.0);
    }

    #[test]
    fn rejects_non_strongly_convex() {
        let s = spectra(TopologyKind::Complete, 2);
        assert!(strong_constants(&s, 0.0, 1.0, &BoundsConfig::default()).is_err());
        let bad = BoundsConfig {
            b: 1.0,
            ..BoundsConfig::default()
        };
        assert!(strong_constants(&s, 0.5, 1.0, &bad).is_err());
    }

    #[test]
    fn feasible_reports_satisfy_constraints() {
        let s = spectra(TopologyKind::Complete, 2);
        let g = grid_search(&s, 0.5, 1.0, 2.0).unwrap();
        let r = g.best.expect("two agents admit feasible constants");
        assert!(r.w > 0.0 && r.w < 1.0);
        assert!(r.theta < r.h1 && r.theta < r.h2);
        assert!((1.0 - r.b) * (1.0 + r.zeta) * 4.0 > 4.0);
        assert!(g.certificate.is_none());
    }

    #[test]
    fn complete_five_is_certified_infeasible() {
        let s = spectra(TopologyKind::Complete, 5);
        let g = grid_search(&s, 0.5, 1.0, 2.0).unwrap();
        assert!(g.best.is_none());
        assert!(g.certificate.is_some());
    }

    #[test]
    fn zero_noise_trajectory_is_geometric() {
        let s = spectra(TopologyKind::Complete, 2);
        let r = grid_search(&s, 0.5, 1.0, 2.0).unwrap().best.unwrap();
        let x0 = vec![vec![1.0], vec![0.0]];
        let xs = vec![vec![0.5], vec![0.5]];
        let zero = vec![vec![0.0], vec![0.0]];
        let t = strong_bound_trajectory(&r, &x0, &xs, &zero, &zero, None, 50).unwrap();
        assert_abs_diff_eq!(t[0], 0.5, epsilon = 1e-15);
        for w in t.windows(2) {
            assert_abs_diff_eq!(w[1] / w[0], r.w, epsilon = 1e-12);
        }
        let slow = NoiseSchedule::new(vec![1.0, 1.0], r.w, 50).unwrap();
        assert!(matches!(
            strong_bound_trajectory(&r, &x0, &xs, &zero, &zero, Some(&slow), 50),
            Err(BoundsError::InfeasibleBound(_))
        ));
    }

    #[test]
    fn convex_bound_scaling_and_null_space() {
        let s = spectra(TopologyKind::Ring, 3);
        let x = vec![vec![0.3, -1.0]; 3];
        let sched = NoiseSchedule::new(vec![0.1; 3], 0.995, 100).unwrap();
        let rep = convex_bound(&s, 0.5, &x, &x, Some(&sched), &[10, 20]).unwrap();
        assert_abs_diff_eq!(rep.points[0].q_term, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.points[0].lplus_term, 0.0, epsilon = 1e-12);
        assert!(rep.points[0].noise_term > 0.0);
        assert_abs_diff_eq!(rep.points[1].total() * 2.0, rep.points[0].total(), epsilon = 1e-12);
        assert!(convex_bound(&s, 0.5, &x, &x, Some(&NoiseSchedule::new(vec![0.1; 3], 1.0, 5).unwrap()), &[5]).is_err());
    }

    fn scalar_traj(values: &[f64]) -> Trajectory {
        let snapshots = values
            .iter()
            .enumerate()
            .map(|(k, &v)| Snapshot {
                iteration: k,
                x: vec![vec![v]],
                x_tilde: vec![vec![v]],
                alpha: vec![vec![0.0]],
                sigma2: vec![0.0],
                rho_cumulative: vec![0.0],
                local_loss: vec![0.0],
                loss_global_avg: 0.0,
                loss_avg_iterate: 0.0,
                consensus_residual: 0.0,
                inner_iterations: vec![0],
            })
            .collect();
        Trajectory { snapshots }
    }

    #[test]
    fn running_average_examples() {
        let avg = running_average(&scalar_traj(&[0.0, 1.0, 2.0, 3.0]));
        let got: Vec<f64> = avg.iter().map(|a| a[0][0]).collect();
        assert_eq!(got, vec![1.0, 1.5, 2.0]);
        let avg = running_average(&scalar_traj(&[7.0; 5]));
        assert!(avg.iter().all(|a| a[0][0] == 7.0));
    }
}
