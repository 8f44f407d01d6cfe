//! Tick-time moments, accuracy N = μ²/σ², resolution ν = 1/μ, the
//! accuracy-resolution trade-off check, multi-tick sequences, and the
//! Heaviside crossing diagnostic.

use crate::engine::{
    evolve_no_tick, ClockModel, ConditionedEvolution, EvolveError, IntegrationConfig, ModelError,
};
use crate::linalg::{hermitian_eigen, symmetrize, C64, CMatrix, DensityMatrix};
use crate::oracle::{heaviside_match, heaviside_survival, OracleError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("evolution did not converge: survival {survival:.3e} at horizon {horizon}")]
    NotConverged { horizon: f64, survival: f64 },
    #[error("moment order {k} unsupported; only 1 through 4 are computed")]
    UnsupportedMoment { k: u32 },
    #[error("variance {sigma2:.3e} is not positive; quadrature failed")]
    NonPositiveVariance { sigma2: f64 },
    #[error("n_ticks must be at least 1")]
    ZeroTicks,
    #[error("tick {index} did not converge: survival {survival:.3e} at horizon {horizon}")]
    NotConvergedAtTick { index: usize, horizon: f64, survival: f64 },
    #[error("reset state has eigenvalue {min_eigenvalue:.3e}; not a physical state")]
    NonPhysicalReset { min_eigenvalue: f64 },
    #[error("reset state has vanishing weight {trace:.3e}")]
    DegenerateReset { trace: f64 },
    #[error("no crossing beyond t0 = {t0}: survival is Heaviside-matched or flat to tolerance")]
    NoCrossing { t0: f64 },
    #[error("{count} crossings beyond t0 = {t0}; uniqueness premise violated")]
    MultipleCrossings { count: usize, t0: f64 },
    #[error(transparent)]
    Evolve(#[from] EvolveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Single-tick waiting-time summary. The tail bracket is the μ range spanned
/// by the two extreme tail assumptions: decay at the maximal rate Γ versus
/// decay at the (capped) rate observed at the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickStatistics {
    pub mu: f64,
    pub sigma2: f64,
    pub accuracy_n: f64,
    pub resolution_nu: f64,
    pub gamma: f64,
    pub bound_ratio: f64,
    pub tail_bracket: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetPolicy {
    JumpConditioned,
    FixedState,
}

#[derive(Debug, Clone)]
pub struct TickSequenceStatistics {
    pub per_tick: Vec<TickStatistics>,
    pub reset_policy: ResetPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffCheck {
    pub satisfied: bool,
    pub ratio: f64,
    pub classical_ratio: f64,
}

/// Result of the Heaviside crossing diagnostic: survival of any non-trivial
/// clock crosses its matched Heaviside curve exactly once after t0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub t_star: f64,
    pub t0: f64,
    pub early_interval_end: f64,
}

fn ensure_converged(evolution: &ConditionedEvolution) -> Result<(), StatsError> {
    if evolution.converged() {
        Ok(())
    } else {
        Err(StatsError::NotConverged {
            horizon: evolution.horizon(),
            survival: evolution.survival_at_horizon(),
        })
    }
}

/// Effective tail decay rate: the measured survival log-slope clamped into
/// [Γ·cutoff, Γ]. The upper clamp is the sandwich bound (no tail decays
/// faster than Γ); the floor keeps the tail finite against degenerate fits.
fn effective_tail_rate(evolution: &ConditionedEvolution) -> f64 {
    let gamma = evolution.gamma();
    let floor = gamma * evolution.config().survival_cutoff;
    evolution.tail_rate().clamp(floor, gamma)
}

/// ∫_τ^∞ t^p e^{−r(t−τ)} dt = Σ_i C(p,i) τ^{p−i} i!/r^{i+1}.
fn exp_tail_power_integral(tau: f64, r: f64, p: u32) -> f64 {
    let mut acc = 0.0;
    let mut binom = 1.0;
    let mut fact = 1.0;
    let mut r_pow = r;
    for i in 0..=p {
        if i > 0 {
            binom *= f64::from(p - i + 1) / f64::from(i);
            fact *= f64::from(i);
            r_pow *= r;
        }
        acc += binom * tau.powi((p - i) as i32) * fact / r_pow;
    }
    acc
}

/// k-th waiting-time moment t_k = k∫ t^{k−1} P[t≤T] dt, from the
/// accepted-step quadrature plus an exponential tail beyond the horizon.
pub fn moment(evolution: &ConditionedEvolution, k: u32) -> Result<f64, StatsError> {
    ensure_converged(evolution)?;
    if !(1..=4).contains(&k) {
        return Err(StatsError::UnsupportedMoment { k });
    }
    let kf = f64::from(k);
    let grid = evolution.quad_survival(|t| kf * t.powi(k as i32 - 1));
    let tail = kf
        * evolution.survival_at_horizon()
        * exp_tail_power_integral(evolution.horizon(), effective_tail_rate(evolution), k - 1);
    Ok(grid + tail)
}

/// Same moment through the PDF route, t_k = ∫ t^k p_tick dt; agreement with
/// `moment` to quadrature tolerance is one of the consistency checks.
pub fn moment_via_pdf(evolution: &ConditionedEvolution, k: u32) -> Result<f64, StatsError> {
    ensure_converged(evolution)?;
    if !(1..=4).contains(&k) {
        return Err(StatsError::UnsupportedMoment { k });
    }
    let grid = evolution.quad_pdf(|t| t.powi(k as i32));
    let r = effective_tail_rate(evolution);
    let tail = evolution.survival_at_horizon()
        * r
        * exp_tail_power_integral(evolution.horizon(), r, k);
    Ok(grid + tail)
}

pub fn tick_statistics(
    evolution: &ConditionedEvolution,
    model: &ClockModel,
) -> Result<TickStatistics, StatsError> {
    ensure_converged(evolution)?;
    let t1 = moment(evolution, 1)?;
    let t2 = moment(evolution, 2)?;
    let sigma2 = t2 - t1 * t1;
    if !(sigma2 > 0.0) {
        return Err(StatsError::NonPositiveVariance { sigma2 });
    }
    let gamma = model.gamma();
    let mu = t1;
    let accuracy_n = mu * mu / sigma2;
    let resolution_nu = 1.0 / mu;
    let grid_mu = evolution.quad_survival(|_| 1.0);
    let s_h = evolution.survival_at_horizon();
    let tail_bracket = (
        grid_mu + s_h / gamma,
        grid_mu + s_h / effective_tail_rate(evolution),
    );
    Ok(TickStatistics {
        mu,
        sigma2,
        accuracy_n,
        resolution_nu,
        gamma,
        bound_ratio: accuracy_n * resolution_nu * resolution_nu / (gamma * gamma),
        tail_bracket,
    })
}

/// ratio = N·ν²/Γ² must stay at or below 1; classical_ratio = N·ν/Γ equals 1
/// on the event-averaging line.
pub fn check_tradeoff(stats: &TickStatistics) -> TradeoffCheck {
    let ratio = stats.accuracy_n * stats.resolution_nu * stats.resolution_nu
        / (stats.gamma * stats.gamma);
    TradeoffCheck {
        satisfied: stats.accuracy_n
            <= stats.gamma * stats.gamma / (stats.resolution_nu * stats.resolution_nu)
                * (1.0 + 1e-6),
        ratio,
        classical_ratio: stats.accuracy_n * stats.resolution_nu / stats.gamma,
    }
}

/// Eigen-clip a near-physical matrix onto the density-matrix cone and
/// renormalize; eigenvalues below −tol are a real failure, not roundoff.
fn project_to_state(m: &CMatrix, tol: f64) -> Result<DensityMatrix, StatsError> {
    let sym = symmetrize(m);
    let (eigenvalues, vectors) = hermitian_eigen(&sym);
    let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(StatsError::NonPhysicalReset { min_eigenvalue: min });
    }
    let clipped: Vec<f64> = eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(StatsError::DegenerateReset { trace: total });
    }
    let d = sym.nrows();
    let mut out = CMatrix::zeros(d, d);
    for (i, &l) in clipped.iter().enumerate() {
        let col = vectors.column(i);
        let scale = C64::new(l / total, 0.0);
        for r in 0..d {
            for c in 0..d {
                out[(r, c)] += col[r] * col[c].conj() * scale;
            }
        }
    }
    Ok(DensityMatrix::from_matrix_unchecked(out))
}

/// Post-tick state under the jump-conditioned policy:
/// Σ_j J_j ρ̄ J_j† normalized, with ρ̄ the time-averaged no-tick state.
pub fn jump_conditioned_reset(
    evolution: &ConditionedEvolution,
    model: &ClockModel,
) -> Result<DensityMatrix, StatsError> {
    ensure_converged(evolution)?;
    let tail_weight = 1.0 / effective_tail_rate(evolution);
    let rho_bar =
        evolution.state_integral() + evolution.final_state().matrix() * C64::new(tail_weight, 0.0);
    let d = model.dim();
    let mut post = CMatrix::zeros(d, d);
    for j in model.tick_jumps() {
        post += j * &rho_bar * j.adjoint();
    }
    let trace = post.trace().re;
    if !(trace > 0.0) {
        return Err(StatsError::DegenerateReset { trace });
    }
    project_to_state(&(post / C64::new(trace, 0.0)), 1e-8)
}

/// Waiting-time statistics of ticks 1..=n_ticks, restarting after each tick
/// according to the reset policy.
pub fn multi_tick_statistics(
    model: &ClockModel,
    n_ticks: usize,
    reset_policy: ResetPolicy,
    config: &IntegrationConfig,
) -> Result<TickSequenceStatistics, StatsError> {
    if n_ticks == 0 {
        return Err(StatsError::ZeroTicks);
    }
    let mut current = model.clone();
    let mut per_tick = Vec::with_capacity(n_ticks);
    for index in 1..=n_ticks {
        let evolution = evolve_no_tick(&current, config)?;
        if !evolution.converged() {
            return Err(StatsError::NotConvergedAtTick {
                index,
                horizon: evolution.horizon(),
                survival: evolution.survival_at_horizon(),
            });
        }
        per_tick.push(tick_statistics(&evolution, &current)?);
        if index < n_ticks && reset_policy == ResetPolicy::JumpConditioned {
            let reset = jump_conditioned_reset(&evolution, &current)?;
            current = current.with_initial_state(reset)?;
        }
    }
    Ok(TickSequenceStatistics { per_tick, reset_policy })
}

/// Time tolerance of the crossing and early-interval bisections.
const CROSSING_TIME_TOL: f64 = 1e-10;
/// Survival counts as 1 while above this threshold.
const EARLY_INTERVAL_THRESHOLD: f64 = 1.0 - 1e-9;

fn bisect(
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    g: &impl Fn(f64) -> Result<f64, StatsError>,
) -> Result<f64, StatsError> {
    while b - a > CROSSING_TIME_TOL {
        let mid = 0.5 * (a + b);
        let fm = g(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// Locate the unique time t* > t0 where survival meets the matched Heaviside
/// curve, plus the end of the initial P ≡ 1 interval.
pub fn find_crossing(
    evolution: &ConditionedEvolution,
    gamma: f64,
) -> Result<Crossing, StatsError> {
    ensure_converged(evolution)?;
    let mu = moment(evolution, 1)?;
    let oracle = heaviside_match(mu, gamma)?;
    let t0 = oracle.t0;

    let times = evolution.times();
    let survival = evolution.survival();

    let early_interval_end = if survival[0] < EARLY_INTERVAL_THRESHOLD {
        0.0
    } else {
        match survival.iter().position(|&p| p < EARLY_INTERVAL_THRESHOLD) {
            None => evolution.horizon(),
            Some(i) => {
                let g = |t: f64| Ok(evolution.survival_at(t)? - EARLY_INTERVAL_THRESHOLD);
                bisect(times[i - 1], g(times[i - 1])?, times[i], &g)?
            }
        }
    };

    // Sign scan of f = P − P_Θ beyond t0, ignoring |f| below the integrator
    // noise floor so roundoff in the deep tail cannot fake extra crossings.
    let config = evolution.config();
    let noise = |p: f64| 10.0 * (config.abs_tol + config.rel_tol * p) + 1e-13;
    let f = |t: f64, p: f64| p - heaviside_survival(&oracle, t);
    let mut last: Option<(bool, f64)> = None;
    let mut brackets: Vec<(f64, f64)> = Vec::new();
    let p_t0 = evolution.survival_at(t0)?;
    let f_t0 = f(t0, p_t0);
    if f_t0.abs() > noise(p_t0) {
        last = Some((f_t0 > 0.0, t0));
    }
    for (k, &t) in times.iter().enumerate() {
        if t <= t0 {
            continue;
        }
        let fk = f(t, survival[k]);
        if fk.abs() <= noise(survival[k]) {
            continue;
        }
        let sk = fk > 0.0;
        if let Some((sl, tl)) = last {
            if sk != sl {
                brackets.push((tl, t));
            }
        }
        last = Some((sk, t));
    }

    match brackets.len() {
        0 => Err(StatsError::NoCrossing { t0 }),
        1 => {
            let (a, b) = brackets[0];
            let g = |t: f64| Ok(f(t, evolution.survival_at(t)?));
            let t_star = bisect(a, g(a)?, b, &g)?;
            Ok(Crossing { t_star, t0, early_interval_end })
        }
        count => Err(StatsError::MultipleCrossings { count, t0 }),
    }
}
