//! Randomized-ensemble invariant suite: the structural properties every
//! clock must satisfy, checked per model and driven over seeded ensembles.
//!
//! Six properties: the accuracy-resolution trade-off, the resolution bound
//! ν ≤ Γ, the variance floor σ² ≥ 1/Γ², the agreement of the two moment
//! routes, the survival sandwich on the time grid, and uniqueness of the
//! matched-Heaviside crossing. The sandwich is a pure grid property and runs
//! on any completed evolution; the other five need a converged run. The
//! driver also hosts the harness mutation switch: flipping the tick
//! anticommutator sign must make the sandwich check fail, proving the suite
//! can catch that breakage.

use crate::engine::{
    evolve_no_tick, ClockModel, ConditionedEvolution, EvolveError, IntegrationConfig,
};
use crate::model::{build_random_clock, BuildError};
use crate::stats::{
    check_tradeoff, find_crossing, moment, moment_via_pdf, tick_statistics, StatsError,
    TickStatistics,
};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Integration profile for ensemble verification: two decades tighter than
/// the general default. Slow clocks run horizons of 10⁴ mean waits, and the
/// t² weighting in the second moment amplifies per-step quadrature error
/// across that span; the default profile can leak ~1e-6 relative into t₂,
/// which is exactly the scale the property tolerances police.
pub fn suite_config() -> IntegrationConfig {
    IntegrationConfig { abs_tol: 1e-12, rel_tol: 1e-10, ..IntegrationConfig::default() }
}

/// Relative slack on N·ν²/Γ² ≤ 1.
pub const TRADEOFF_TOL: f64 = 1e-6;
/// Relative slack on ν ≤ Γ.
pub const RESOLUTION_TOL: f64 = 1e-8;
/// Relative slack on σ²·Γ² ≥ 1.
pub const VARIANCE_TOL: f64 = 1e-6;
/// Relative agreement required between the survival and PDF moment routes.
pub const MOMENT_TOL: f64 = 1e-6;
/// Absolute slack on the survival sandwich between grid points.
pub const SANDWICH_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("n_models must be at least 1")]
    ZeroModels,
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Evolve(#[from] EvolveError),
}

/// One property's outcome on one model. `value` is the measured statistic
/// and `bound` the threshold it is held against; `passed` is authoritative
/// since the pass direction differs between properties.
#[derive(Debug, Clone, Serialize)]
pub struct PropertyOutcome {
    pub property: &'static str,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

/// All properties evaluated on one model.
#[derive(Debug, Clone)]
pub struct ModelCheck {
    pub converged: bool,
    pub outcomes: Vec<PropertyOutcome>,
}

/// Per-model verdict within an ensemble run.
#[derive(Debug, Clone, Serialize)]
pub struct ModelVerdict {
    pub index: usize,
    pub label: String,
    pub converged: bool,
    pub outcomes: Vec<PropertyOutcome>,
    pub passed: bool,
}

/// A failed property, flattened for the machine-readable report.
#[derive(Debug, Clone, Serialize)]
pub struct FailureRecord {
    pub model_index: usize,
    pub label: String,
    pub property: &'static str,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

/// Ensemble result. The serialized form carries the summary and the failure
/// list; full verdicts stay in memory for callers that want them.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub n_models: usize,
    pub n_converged: usize,
    pub injected_bug: bool,
    /// No property failed and at least half the ensemble converged, so the
    /// pass is not vacuous.
    pub passed: bool,
    pub failures: Vec<FailureRecord>,
    #[serde(skip_serializing)]
    pub verdicts: Vec<ModelVerdict>,
}

fn tradeoff_outcome(stats: &TickStatistics) -> PropertyOutcome {
    let check = check_tradeoff(stats);
    PropertyOutcome {
        property: "tradeoff",
        passed: check.ratio <= 1.0 + TRADEOFF_TOL,
        value: check.ratio,
        bound: 1.0 + TRADEOFF_TOL,
        detail: format!("N*nu^2/Gamma^2 = {:.6e} (classical {:.6e})", check.ratio, check.classical_ratio),
    }
}

fn resolution_outcome(stats: &TickStatistics) -> PropertyOutcome {
    let value = stats.resolution_nu / stats.gamma;
    PropertyOutcome {
        property: "resolution_bound",
        passed: value <= 1.0 + RESOLUTION_TOL,
        value,
        bound: 1.0 + RESOLUTION_TOL,
        detail: format!("nu/Gamma = {value:.6e}"),
    }
}

fn variance_outcome(stats: &TickStatistics) -> PropertyOutcome {
    let value = stats.sigma2 * stats.gamma * stats.gamma;
    PropertyOutcome {
        property: "variance_floor",
        passed: value >= 1.0 - VARIANCE_TOL,
        value,
        bound: 1.0 - VARIANCE_TOL,
        detail: format!("sigma^2*Gamma^2 = {value:.6e}"),
    }
}

fn moment_outcome(evolution: &ConditionedEvolution) -> PropertyOutcome {
    let mut worst = 0.0f64;
    for k in 1..=2u32 {
        let (a, b) = match (moment(evolution, k), moment_via_pdf(evolution, k)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                return PropertyOutcome {
                    property: "moment_identity",
                    passed: false,
                    value: -1.0,
                    bound: MOMENT_TOL,
                    detail: format!("moment {k} failed: {e}"),
                }
            }
        };
        worst = worst.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
    }
    PropertyOutcome {
        property: "moment_identity",
        passed: worst <= MOMENT_TOL,
        value: worst,
        bound: MOMENT_TOL,
        detail: format!("max relative route disagreement {worst:.6e}"),
    }
}

/// Worst violation of P(t)e^{−Γs} ≤ P(t+s) ≤ P(t) over neighboring grid
/// points plus every point against the horizon endpoint, so both the local
/// and the accumulated long-range forms are exercised.
fn sandwich_outcome(evolution: &ConditionedEvolution) -> PropertyOutcome {
    let p = evolution.survival();
    let t = evolution.times();
    let gamma = evolution.gamma();
    let last = p.len() - 1;
    let mut worst = f64::MIN;
    for k in 0..last {
        let up = p[k + 1] - p[k];
        let low = p[k] * (-gamma * (t[k + 1] - t[k])).exp() - p[k + 1];
        let far_up = p[last] - p[k];
        let far_low = p[k] * (-gamma * (t[last] - t[k])).exp() - p[last];
        worst = worst.max(up).max(low).max(far_up).max(far_low);
    }
    PropertyOutcome {
        property: "sandwich",
        passed: worst <= SANDWICH_TOL,
        value: worst,
        bound: SANDWICH_TOL,
        detail: format!("worst sandwich violation {worst:.6e}"),
    }
}

/// Survival must meet its matched-Heaviside curve exactly once past t0; a
/// clock indistinguishable from exponential legitimately never leaves the
/// curve, so "no crossing" passes too.
fn crossing_outcome(evolution: &ConditionedEvolution, model: &ClockModel) -> PropertyOutcome {
    match find_crossing(evolution, model.gamma()) {
        Ok(c) => PropertyOutcome {
            property: "crossing_uniqueness",
            passed: true,
            value: 1.0,
            bound: 1.0,
            detail: format!("unique crossing at t* = {:.6e} (t0 = {:.6e})", c.t_star, c.t0),
        },
        Err(StatsError::NoCrossing { t0 }) => PropertyOutcome {
            property: "crossing_uniqueness",
            passed: true,
            value: 0.0,
            bound: 1.0,
            detail: format!("no departure from the matched curve (t0 = {t0:.6e})"),
        },
        Err(StatsError::MultipleCrossings { count, t0 }) => PropertyOutcome {
            property: "crossing_uniqueness",
            passed: false,
            value: count as f64,
            bound: 1.0,
            detail: format!("{count} crossings past t0 = {t0:.6e}"),
        },
        Err(e) => PropertyOutcome {
            property: "crossing_uniqueness",
            passed: false,
            value: -1.0,
            bound: 1.0,
            detail: format!("crossing search failed: {e}"),
        },
    }
}

/// Evaluate every applicable property on one model. The sandwich check runs
/// whether or not the evolution converged; the moment-based properties are
/// only meaningful on a converged run.
pub fn check_model(
    model: &ClockModel,
    config: &IntegrationConfig,
) -> Result<ModelCheck, EvolveError> {
    let evolution = evolve_no_tick(model, config)?;
    let sandwich = sandwich_outcome(&evolution);
    if !evolution.converged() {
        return Ok(ModelCheck { converged: false, outcomes: vec![sandwich] });
    }
    let mut outcomes = Vec::with_capacity(6);
    match tick_statistics(&evolution, model) {
        Ok(stats) => {
            outcomes.push(tradeoff_outcome(&stats));
            outcomes.push(resolution_outcome(&stats));
            outcomes.push(variance_outcome(&stats));
        }
        Err(e) => outcomes.push(PropertyOutcome {
            property: "statistics",
            passed: false,
            value: -1.0,
            bound: 0.0,
            detail: format!("tick statistics failed: {e}"),
        }),
    }
    outcomes.push(moment_outcome(&evolution));
    outcomes.push(sandwich);
    outcomes.push(crossing_outcome(&evolution, model));
    Ok(ModelCheck { converged: true, outcomes })
}

/// Run the suite over `n_models` seeded random clocks (dims 2 through 6,
/// model `i` built from seed `seed + i`). `injected_bug` flips the tick
/// anticommutator sign and caps each horizon at 3/Γ so the broken, growing
/// evolutions stay finite long enough for the sandwich check to convict
/// them. Models fan out in parallel; verdicts are ordered by index.
pub fn run_random_suite(
    seed: u64,
    n_models: usize,
    injected_bug: bool,
    config: &IntegrationConfig,
) -> Result<SuiteReport, VerifyError> {
    if n_models == 0 {
        return Err(VerifyError::ZeroModels);
    }
    let verdicts = (0..n_models)
        .into_par_iter()
        .map(|index| {
            let model_seed = seed.wrapping_add(index as u64);
            let model = build_random_clock(model_seed, (2, 6), 2, 2)?;
            let mut cfg = config.clone();
            if injected_bug {
                cfg.flip_tick_sign = true;
                cfg.max_horizon = Some(3.0 / model.gamma());
            }
            let check = check_model(&model, &cfg)?;
            let passed = check.outcomes.iter().all(|o| o.passed);
            Ok(ModelVerdict {
                index,
                label: format!("random-{model_seed}"),
                converged: check.converged,
                outcomes: check.outcomes,
                passed,
            })
        })
        .collect::<Result<Vec<ModelVerdict>, VerifyError>>()?;

    let n_converged = verdicts.iter().filter(|v| v.converged).count();
    let failures: Vec<FailureRecord> = verdicts
        .iter()
        .flat_map(|v| {
            v.outcomes.iter().filter(|o| !o.passed).map(|o| FailureRecord {
                model_index: v.index,
                label: v.label.clone(),
                property: o.property,
                value: o.value,
                bound: o.bound,
                detail: o.detail.clone(),
            })
        })
        .collect();
    let passed = failures.is_empty() && 2 * n_converged >= n_models;
    Ok(SuiteReport {
        seed,
        n_models,
        n_converged,
        injected_bug,
        passed,
        failures,
        verdicts,
    })
}
