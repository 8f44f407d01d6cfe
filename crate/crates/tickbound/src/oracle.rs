//! Closed-form reference families: Heaviside-step populations saturating the
//! accuracy-resolution bound, and Erlang event averaging on the classical
//! line.

use crate::stats::TickStatistics;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("gamma must be positive and finite, got {gamma}")]
    BadGamma { gamma: f64 },
    #[error("t0 must be non-negative and finite, got {t0}")]
    BadT0 { t0: f64 },
    #[error("m must be at least 1")]
    BadM,
    #[error("mu {mu} is below the floor 1/gamma = {floor}; no valid clock produces it")]
    MuBelowFloor { mu: f64, floor: f64 },
}

/// Population held at 1 until t0, then released at the maximal rate Γ.
/// Saturates N·ν² = Γ² but is not realizable as a finite-speed clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeavisideOracle {
    pub gamma: f64,
    pub t0: f64,
}

impl HeavisideOracle {
    pub fn new(gamma: f64, t0: f64) -> Result<Self, OracleError> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(OracleError::BadGamma { gamma });
        }
        if !(t0 >= 0.0 && t0.is_finite()) {
            return Err(OracleError::BadT0 { t0 });
        }
        Ok(Self { gamma, t0 })
    }
}

/// Waiting time summed over m i.i.d. exponential events of rate Γ; the
/// classical averaging line N·ν = Γ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErlangOracle {
    pub gamma: f64,
    pub m: u32,
}

impl ErlangOracle {
    pub fn new(gamma: f64, m: u32) -> Result<Self, OracleError> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(OracleError::BadGamma { gamma });
        }
        if m == 0 {
            return Err(OracleError::BadM);
        }
        Ok(Self { gamma, m })
    }
}

/// P_Θ[t≤T]: 1 before the step, exp(−Γ(t−t0)) after.
pub fn heaviside_survival(oracle: &HeavisideOracle, t: f64) -> f64 {
    if t <= oracle.t0 {
        1.0
    } else {
        (-oracle.gamma * (t - oracle.t0)).exp()
    }
}

/// μ = t0 + 1/Γ, σ² = 1/Γ², N = (1+Γt0)², ν = 1/μ; equality case of the
/// trade-off, so bound_ratio is pinned at 1.
pub fn heaviside_statistics(oracle: &HeavisideOracle) -> TickStatistics {
    let mu = oracle.t0 + 1.0 / oracle.gamma;
    let sigma2 = 1.0 / (oracle.gamma * oracle.gamma);
    TickStatistics {
        mu,
        sigma2,
        accuracy_n: mu * mu / sigma2,
        resolution_nu: 1.0 / mu,
        gamma: oracle.gamma,
        bound_ratio: 1.0,
        tail_bracket: (mu, mu),
    }
}

/// μ = m/Γ, σ² = m/Γ², N = m, ν = Γ/m; bound_ratio = 1/m on the classical
/// line.
pub fn erlang_statistics(oracle: &ErlangOracle) -> TickStatistics {
    let gamma = oracle.gamma;
    let m = f64::from(oracle.m);
    let mu = m / gamma;
    TickStatistics {
        mu,
        sigma2: m / (gamma * gamma),
        accuracy_n: m,
        resolution_nu: gamma / m,
        gamma,
        bound_ratio: 1.0 / m,
        tail_bracket: (mu, mu),
    }
}

/// The Heaviside population with the same Γ and mean tick time: t0 = μ − 1/Γ.
pub fn heaviside_match(mu: f64, gamma: f64) -> Result<HeavisideOracle, OracleError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(OracleError::BadGamma { gamma });
    }
    let floor = 1.0 / gamma;
    if !(mu >= floor) {
        return Err(OracleError::MuBelowFloor { mu, floor });
    }
    HeavisideOracle::new(gamma, mu - floor)
}
