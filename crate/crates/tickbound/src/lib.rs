//! Simulation toolkit for ticking quantum clocks: conditioned no-tick
//! evolution, tick-time statistics against the accuracy-resolution bound,
//! and stochastic trajectory sampling.

pub mod engine;
pub mod integrate;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod stats;
pub mod trajectory;
pub mod verify;

#[cfg(test)]
pub(crate) mod testutil;

pub use engine::{
    evolve_no_tick, normalized_state_at, top_level_population, ClockModel, ConditionedEvolution,
    EvolveError, IntegrationConfig, ModelError,
};
pub use linalg::{C64, CMatrix, DensityMatrix, HermitianOperator};
pub use model::{
    build_exponential_clock, build_ladder_clock, build_random_clock, parse_model,
    serialize_model, BuildError, LadderParams, ModelDocument, ParseError,
};
pub use oracle::{
    erlang_statistics, heaviside_match, heaviside_statistics, heaviside_survival, ErlangOracle,
    HeavisideOracle, OracleError,
};
pub use stats::{
    check_tradeoff, find_crossing, moment, multi_tick_statistics, tick_statistics, Crossing,
    ResetPolicy, StatsError, TickSequenceStatistics, TickStatistics, TradeoffCheck,
};
pub use trajectory::{
    estimate_statistics, sample_trajectories, TickEstimate, TrajectoryBatch, TrajectoryError,
};
pub use verify::{
    check_model, run_random_suite, suite_config, ModelCheck, ModelVerdict, PropertyOutcome,
    SuiteReport, VerifyError,
};
