//! Dynamic zCDP accounting for the perturbed primal broadcasts.
//!
//! Agent `i` releases `x_i^k + N(0, sigma2_i^k I)` at every iteration, with
//! `sigma2_i^{k+1} = R * sigma2_i^k`. Each release is
//! `Delta_i^2 / (2 sigma2_i^k)`-zCDP, the per-step rho grows by `1/R` per
//! iteration, the K releases compose additively, and the total converts to
//! `(epsilon, delta)`-DP. The reported epsilon is the worst agent's.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrivacyError {
    #[error("invalid privacy parameter: {0}")]
    InvalidParameter(String),
}

fn invalid(msg: impl Into<String>) -> PrivacyError {
    PrivacyError::InvalidParameter(msg.into())
}

/// Initial per-agent variances and their geometric decay.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigma2_init: Vec<f64>,
    decay: f64,
    horizon: usize,
}

impl NoiseSchedule {
    pub fn new(sigma2_init: Vec<f64>, decay: f64, horizon: usize) -> Result<Self, PrivacyError> {
        if sigma2_init.is_empty() {
            return Err(invalid("no agents in noise schedule"));
        }
        if let Some(bad) = sigma2_init.iter().find(|&&s| !(s > 0.0 && s.is_finite())) {
            return Err(invalid(format!("initial variance must be positive, got {bad}")));
        }
        Self::with_unchecked_variances(sigma2_init, decay, horizon)
    }

    /// All-zero variances: no noise is drawn. Provides no privacy; used to
    /// check that the private code path degenerates to the plain algorithm.
    pub fn zero(n_agents: usize, decay: f64, horizon: usize) -> Result<Self, PrivacyError> {
        Self::with_unchecked_variances(vec![0.0; n_agents], decay, horizon)
    }

    fn with_unchecked_variances(sigma2_init: Vec<f64>, decay: f64, horizon: usize) -> Result<Self, PrivacyError> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(invalid(format!("decay must be in (0, 1], got {decay}")));
        }
        if horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        Ok(Self {
            sigma2_init,
            decay,
            horizon,
        })
    }

    pub fn sigma2_init(&self) -> &[f64] {
        &self.sigma2_init
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_agents(&self) -> usize {
        self.sigma2_init.len()
    }

    pub fn total_initial_variance(&self) -> f64 {
        self.sigma2_init.iter().sum()
    }

    /// Variances for steps `1..=horizon` by repeated multiplication, the same
    /// recurrence the engine applies.
    pub fn variances(&self, agent: usize) -> impl Iterator<Item = f64> + '_ {
        let decay = self.decay;
        std::iter::successors(Some(self.sigma2_init[agent]), move |s| Some(s * decay)).take(self.horizon)
    }
}

/// `Delta_i = V / (eta |V_i|)`, the L2 sensitivity of one x-update.
pub fn sensitivity(grad_bound: f64, eta: f64, degree: usize) -> Result<f64, PrivacyError> {
    if !(grad_bound > 0.0) || !(eta > 0.0) || degree == 0 {
        return Err(invalid(format!(
            "sensitivity needs V > 0, eta > 0, degree >= 1 (got {grad_bound}, {eta}, {degree})"
        )));
    }
    Ok(grad_bound / (eta * degree as f64))
}

/// Gaussian mechanism: `Delta^2 / (2 sigma2)`-zCDP.
pub fn step_rho(delta_i: f64, sigma2: f64) -> Result<f64, PrivacyError> {
    if !(sigma2 > 0.0) {
        return Err(invalid(format!("variance must be positive, got {sigma2}")));
    }
    if !(delta_i >= 0.0) {
        return Err(invalid(format!("sensitivity must be nonnegative, got {delta_i}")));
    }
    Ok(delta_i * delta_i / (2.0 * sigma2))
}

/// `sum_{k=0}^{K-1} rho1 R^{-k} = rho1 (1 - R^K) / (R^{K-1} - R^K)`;
/// `K rho1` when `R = 1`.
pub fn compose_geometric(rho1: f64, decay: f64, horizon: usize) -> Result<f64, PrivacyError> {
    if !(rho1 >= 0.0) {
        return Err(invalid(format!("rho must be nonnegative, got {rho1}")));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(invalid(format!("decay must be in (0, 1], got {decay}")));
    }
    if horizon == 0 {
        return Err(invalid("horizon must be at least 1"));
    }
    if decay == 1.0 {
        return Ok(rho1 * horizon as f64);
    }
    let k = horizon as i32;
    Ok(rho1 * (1.0 - decay.powi(k)) / (decay.powi(k - 1) - decay.powi(k)))
}

/// Inverse of [`compose_geometric`] for the first-step rho.
pub fn first_step_rho(rho_total: f64, decay: f64, horizon: usize) -> Result<f64, PrivacyError> {
    let unit = compose_geometric(1.0, decay, horizon)?;
    Ok(rho_total / unit)
}

/// `epsilon = rho + 2 sqrt(rho ln(1/delta))`.
pub fn zcdp_to_dp(rho: f64, delta: f64) -> Result<f64, PrivacyError> {
    if !(rho >= 0.0) {
        return Err(invalid(format!("rho must be nonnegative, got {rho}")));
    }
    check_delta(delta)?;
    Ok(rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt())
}

/// Solve `epsilon = rho + 2 sqrt(rho L)` for rho, `L = ln(1/delta)`:
/// `sqrt(rho) = sqrt(L + epsilon) - sqrt(L)`.
pub fn rho_for_epsilon(epsilon: f64, delta: f64) -> Result<f64, PrivacyError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid(format!("target epsilon must be positive, got {epsilon}")));
    }
    check_delta(delta)?;
    let l = (1.0 / delta).ln();
    // (sqrt(L+e) - sqrt(L))^2 written as e^2 / (sqrt(L+e) + sqrt(L))^2 to
    // avoid cancellation for small epsilon.
    let denom = (l + epsilon).sqrt() + l.sqrt();
    Ok(epsilon * epsilon / (denom * denom))
}

fn check_delta(delta: f64) -> Result<(), PrivacyError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must be in (0, 1), got {delta}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivacyBudget {
    pub rho_first: Vec<f64>,
    pub rho_per_agent: Vec<f64>,
    pub rho_total_worst: f64,
    pub worst_agent: usize,
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn epsilon_for_agent(&self, agent: usize) -> f64 {
        zcdp_to_dp(self.rho_per_agent[agent], self.delta).expect("budget holds validated values")
    }
}

pub fn total_epsilon(
    schedule: &NoiseSchedule,
    sensitivities: &[f64],
    delta: f64,
) -> Result<PrivacyBudget, PrivacyError> {
    if sensitivities.len() != schedule.n_agents() {
        return Err(invalid(format!(
            "{} sensitivities for {} agents",
            sensitivities.len(),
            schedule.n_agents()
        )));
    }
    if let Some(bad) = sensitivities.iter().find(|&&d| !(d > 0.0)) {
        return Err(invalid(format!("sensitivity must be positive, got {bad}")));
    }
    let mut rho_first = Vec::with_capacity(sensitivities.len());
    let mut rho_per_agent = Vec::with_capacity(sensitivities.len());
    for (&d, &s2) in sensitivities.iter().zip(schedule.sigma2_init()) {
        let r1 = step_rho(d, s2)?;
        rho_first.push(r1);
        rho_per_agent.push(compose_geometric(r1, schedule.decay(), schedule.horizon())?);
    }
    let (worst_agent, rho_total_worst) = rho_per_agent
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, r)| if r > best.1 { (i, r) } else { best });
    Ok(PrivacyBudget {
        epsilon: zcdp_to_dp(rho_total_worst, delta)?,
        rho_first,
        rho_per_agent,
        rho_total_worst,
        worst_agent,
        delta,
    })
}

/// Noise schedule meeting `target_epsilon` with every agent at the same total
/// rho; agents with smaller sensitivity get proportionally less noise.
pub fn calibrate(
    target_epsilon: f64,
    delta: f64,
    decay: f64,
    horizon: usize,
    sensitivities: &[f64],
) -> Result<NoiseSchedule, PrivacyError> {
    let rho_total = rho_for_epsilon(target_epsilon, delta)?;
    let rho1 = first_step_rho(rho_total, decay, horizon)?;
    let sigma2 = sensitivities
        .iter()
        .map(|&d| {
            if d > 0.0 {
                Ok(d * d / (2.0 * rho1))
            } else {
                Err(invalid(format!("sensitivity must be positive, got {d}")))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    NoiseSchedule::new(sigma2, decay, horizon)
}
