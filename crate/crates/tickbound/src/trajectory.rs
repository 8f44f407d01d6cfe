//! Quantum-jump Monte Carlo unraveling: samples tick-time sequences whose
//! statistics independently cross-check the deterministic engine.
//!
//! Each trajectory holds a normalized state vector. Between jumps it drifts
//! under the non-Hermitian generator −iH − ½ΣA†A (A running over no-tick
//! Lindblad ops and tick jumps alike), whose squared norm is the no-jump
//! survival probability; waiting times come from the inverse transform on
//! that survival. The drift is a fixed contraction, so segments advance by
//! cached exact exponentials at dyadic chunk sizes (one matvec per chunk)
//! and the crossing is pinned inside a short bracket by a truncated series;
//! there is no step-size control to tune and no truncation left to chance.
//! At a jump the channel is drawn with weight ‖A|ψ⟩‖², the state collapses
//! to A|ψ⟩ renormalized, and only tick channels write a record. Trajectories
//! use disjoint counter-derived RNG streams, so the batch is reproducible
//! regardless of execution order.

use crate::engine::{ClockModel, EvolveError, IntegrationConfig};
use crate::linalg::{expm, hermitian_eigen, C64, CMatrix, CVector, ONE, ZERO};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

/// Fewest uncensored waiting times an estimator will accept.
pub const MIN_ESTIMATE_SAMPLES: usize = 100;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("n_traj must be at least 1")]
    ZeroTrajectories,
    #[error("max_ticks must be at least 1")]
    ZeroTicksRequested,
    #[error("all {n_traj} trajectories were censored before producing a tick")]
    AllCensored { n_traj: usize },
    #[error(
        "tick index {tick_index} has {available} uncensored samples, need {required}"
    )]
    InsufficientSamples { tick_index: usize, available: usize, required: usize },
    #[error("tick index {tick_index} outside 1..={max_ticks}")]
    BadTickIndex { tick_index: usize, max_ticks: usize },
    #[error(transparent)]
    Evolve(#[from] EvolveError),
}

/// Plug-in statistics of the waiting time at one tick index, with delta-method
/// standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickEstimate {
    pub tick_index: usize,
    pub n_samples: usize,
    pub mu_hat: f64,
    pub sigma2_hat: f64,
    #[serde(rename = "N_hat")]
    pub n_hat: f64,
    pub nu_hat: f64,
    pub se_mu: f64,
    pub se_sigma2: f64,
    #[serde(rename = "se_N")]
    pub se_n: f64,
}

/// One Monte Carlo run: absolute tick times per trajectory plus the per-index
/// estimates that had enough uncensored samples.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub seed: u64,
    pub n_traj: usize,
    pub max_ticks: usize,
    pub horizon: f64,
    /// Strictly increasing absolute tick times, one list per trajectory.
    pub tick_times: Vec<Vec<f64>>,
    /// Estimates for each tick index that reached [`MIN_ESTIMATE_SAMPLES`].
    pub estimated: Vec<TickEstimate>,
    /// Trajectories that hit the horizon before the requested tick count.
    pub censored_count: usize,
}

impl TrajectoryBatch {
    /// Raw dump: one line per trajectory, comma-separated tick times at 12
    /// significant digits. Byte-stable across identical runs.
    pub fn raw_dump(&self) -> String {
        let mut out = String::new();
        for ticks in &self.tick_times {
            let mut first = true;
            for t in ticks {
                if !first {
                    out.push(',');
                }
                out.push_str(&format!("{t:.11e}"));
                first = false;
            }
            out.push('\n');
        }
        out
    }
}

/// Drift and jump channels acting on state vectors rather than densities.
struct KetDrift {
    generator: CMatrix,
    channels: Vec<CMatrix>,
    n_notick: usize,
}

impl KetDrift {
    fn new(model: &ClockModel) -> Self {
        let half = C64::new(0.5, 0.0);
        let mut generator = model.hamiltonian() * -crate::linalg::I;
        let mut channels: Vec<CMatrix> = Vec::new();
        for op in model.notick_lindblad_ops().iter().chain(model.tick_jumps()) {
            generator -= op.adjoint() * op * half;
            channels.push(op.clone());
        }
        Self { generator, channels, n_notick: model.notick_lindblad_ops().len() }
    }
}

/// Eigen-decompose the initial density matrix into (probability, state) pairs
/// for per-trajectory sampling; a pure state yields a single pair.
fn spectral_initial(model: &ClockModel) -> Vec<(f64, CVector)> {
    let (vals, vecs) = hermitian_eigen(model.initial_state().matrix());
    let mut pairs: Vec<(f64, CVector)> = Vec::new();
    for (i, &p) in vals.iter().enumerate() {
        if p > 1e-14 {
            let col = vecs.column(i).into_owned();
            let norm = col.norm();
            pairs.push((p, col.unscale(norm)));
        }
    }
    pairs
}

fn draw_initial(pairs: &[(f64, CVector)], rng: &mut ChaCha12Rng) -> CVector {
    if pairs.len() == 1 {
        return pairs[0].1.clone();
    }
    let total: f64 = pairs.iter().map(|(p, _)| p).sum();
    let mut r = rng.gen::<f64>() * total;
    for (p, psi) in pairs {
        if r < *p {
            return psi.clone();
        }
        r -= p;
    }
    pairs.last().expect("nonempty spectral decomposition").1.clone()
}

/// Waiting-time bracket expansion order; with ‖K‖·δ ≤ 1/4 the truncation sits
/// near 1e-8, far below any statistical resolution of the batch.
const TAYLOR_ORDER: usize = 6;
/// Levels below the base chunk; the finest chunk h0/2^2 keeps ‖K‖·δ ≤ 1/4.
const FINE_LEVELS: i32 = 2;

/// ψ(τ) = Σ τ^j/j! K^j ψ by Horner over precomputed Krylov vectors.
fn taylor_into(krylov: &[CVector], tau: f64, out: &mut CVector) {
    let ord = krylov.len() - 1;
    out.copy_from(&krylov[ord]);
    for j in (0..ord).rev() {
        *out *= C64::new(tau / (j + 1) as f64, 0.0);
        *out += &krylov[j];
    }
}

/// Per-trajectory scratch so the segment loop never allocates.
struct TrajScratch {
    tmp: CVector,
    psi_at: CVector,
    krylov: Vec<CVector>,
    weights: Vec<f64>,
}

impl TrajScratch {
    fn new(dim: usize, n_channels: usize) -> Self {
        Self {
            tmp: CVector::zeros(dim),
            psi_at: CVector::zeros(dim),
            krylov: (0..=TAYLOR_ORDER).map(|_| CVector::zeros(dim)).collect(),
            weights: Vec::with_capacity(n_channels),
        }
    }
}

/// Exact no-jump propagation: e^{KΔ} cached at dyadic chunk sizes Δ. A walk
/// advances one matvec per chunk, coarsening after repeated survivals and
/// refining when a chunk overshoots the target, until the crossing sits
/// inside a finest-level bracket.
struct ExpmWalker {
    /// Chunk duration per level, halving from coarsest (index 0) to finest.
    chunks: Vec<f64>,
    /// props[i] = exp(K · chunks[i]).
    props: Vec<CMatrix>,
    /// Index of the base chunk h0 = 1/‖K‖₁, the walk's starting level.
    base: usize,
}

fn one_norm(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

impl ExpmWalker {
    fn new(generator: &CMatrix, horizon: f64) -> Self {
        let h0 = 1.0 / one_norm(generator).max(1e-12);
        // coarsest chunk must cover the horizon so quiet stretches cost
        // logarithmically many matvecs
        let coarse_levels = ((horizon / h0).max(1.0)).log2().ceil() as i32 + 1;
        let mut chunks = Vec::new();
        let mut props = Vec::new();
        for j in -coarse_levels..=FINE_LEVELS {
            let c = h0 * (2f64).powi(-j);
            chunks.push(c);
            props.push(expm(&(generator * C64::new(c, 0.0))));
        }
        Self { chunks, props, base: coarse_levels as usize }
    }

    fn finest(&self) -> usize {
        self.chunks.len() - 1
    }

    /// March ψ from `t` until ‖ψ‖² first reaches `target`, or conclude it
    /// stays above through `horizon` (None, censored). On Some(t_jump) the
    /// unnormalized crossing state is left in `s.psi_at` and ψ holds the
    /// last pre-bracket state.
    fn next_crossing(
        &self,
        generator: &CMatrix,
        psi: &mut CVector,
        target: f64,
        t: f64,
        horizon: f64,
        s: &mut TrajScratch,
    ) -> Option<f64> {
        if psi.norm_squared() <= target {
            s.psi_at.copy_from(psi);
            return Some(t); // zero waiting time (target drawn at the norm)
        }
        let mut level = self.base;
        let mut survived = 0u32;
        let mut t_cur = t;
        loop {
            let remaining = horizon - t_cur;
            if remaining <= 0.0 {
                return None;
            }
            let c = self.chunks[level];
            if c >= remaining {
                if level < self.finest() {
                    level += 1;
                    survived = 0;
                    continue;
                }
                // sliver between here and the horizon, narrower than the
                // finest chunk: the bracket decides crossing vs censoring
                return self.bracket(generator, psi, target, t_cur, remaining, false, s);
            }
            s.tmp.gemv(ONE, &self.props[level], psi, ZERO);
            if s.tmp.norm_squared() > target {
                std::mem::swap(psi, &mut s.tmp);
                t_cur += c;
                survived += 1;
                if survived >= 2 && level > 0 {
                    level -= 1; // two quiet chunks in a row: double the stride
                    survived = 0;
                }
            } else if level < self.finest() {
                level += 1;
                survived = 0;
            } else {
                return self.bracket(generator, psi, target, t_cur, c, true, s);
            }
        }
    }

    /// Resolve the crossing of ‖ψ(τ)‖² = target for τ ∈ (0, δ], expanding
    /// around ψ. `known_below`: the caller verified ‖ψ(δ)‖² ≤ target with the
    /// exact propagator, so a graze the expansion misses jumps at δ instead
    /// of censoring (the exact post-chunk state still sits in `s.tmp`).
    fn bracket(
        &self,
        generator: &CMatrix,
        psi: &CVector,
        target: f64,
        t_cur: f64,
        delta: f64,
        known_below: bool,
        s: &mut TrajScratch,
    ) -> Option<f64> {
        s.krylov[0].copy_from(psi);
        for i in 1..=TAYLOR_ORDER {
            let (lo, hi) = s.krylov.split_at_mut(i);
            hi[0].gemv(ONE, generator, &lo[i - 1], ZERO);
        }
        taylor_into(&s.krylov, delta, &mut s.psi_at);
        let mut fhi = s.psi_at.norm_squared() - target;
        if fhi > 0.0 {
            if !known_below {
                return None; // still above the target at the horizon
            }
            std::mem::swap(&mut s.psi_at, &mut s.tmp);
            return Some(t_cur + delta);
        }
        let mut flo = psi.norm_squared() - target; // > 0: walk invariant
        let mut lo = 0.0_f64;
        let mut hi = delta;
        let mut last = 0i8;
        for _ in 0..64 {
            if hi - lo <= delta * 1e-12 {
                break;
            }
            let mut mid = (flo * hi - fhi * lo) / (flo - fhi);
            if !(mid > lo && mid < hi) {
                mid = 0.5 * (lo + hi);
            }
            taylor_into(&s.krylov, mid, &mut s.psi_at);
            let fmid = s.psi_at.norm_squared() - target;
            if fmid > 0.0 {
                lo = mid;
                flo = fmid;
                if last == 1 {
                    fhi *= 0.5; // stale endpoint: damp it so the secant moves
                }
                last = 1;
            } else {
                hi = mid;
                fhi = fmid;
                if last == -1 {
                    flo *= 0.5;
                }
                last = -1;
            }
        }
        let tau = 0.5 * (lo + hi);
        taylor_into(&s.krylov, tau, &mut s.psi_at);
        Some(t_cur + tau)
    }
}

/// Draw a jump channel with weight ‖A|ψ⟩‖², reusing `scratch` and `weights`.
fn draw_channel(
    channels: &[CMatrix],
    psi: &CVector,
    scratch: &mut CVector,
    weights: &mut Vec<f64>,
    rng: &mut ChaCha12Rng,
) -> Option<usize> {
    weights.clear();
    let mut total = 0.0_f64;
    for a in channels {
        scratch.gemv(ONE, a, psi, ZERO);
        let w = scratch.norm_squared();
        weights.push(w);
        total += w;
    }
    if !(total > 0.0) {
        return None;
    }
    let mut r = rng.gen::<f64>() * total;
    for (k, w) in weights.iter().enumerate() {
        if r < *w {
            return Some(k);
        }
        r -= w;
    }
    Some(channels.len() - 1)
}

fn run_trajectory(
    drift: &KetDrift,
    walker: &ExpmWalker,
    initial: &[(f64, CVector)],
    horizon: f64,
    max_ticks: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    let dim = drift.generator.nrows();
    let mut ticks: Vec<f64> = Vec::new();
    let mut t = 0.0_f64;
    let mut psi = draw_initial(initial, rng);
    let mut s = TrajScratch::new(dim, drift.channels.len());
    while ticks.len() < max_ticks && t < horizon {
        // gen() is [0,1); flipping makes the target (0,1] so a zero draw
        // cannot demand an infinite wait
        let target = 1.0 - rng.gen::<f64>();
        let Some(t_jump) =
            walker.next_crossing(&drift.generator, &mut psi, target, t, horizon, &mut s)
        else {
            break; // horizon before the next jump: censored
        };
        // the previous post-jump state is dead; reuse psi as scratch
        let Some(k) = draw_channel(&drift.channels, &s.psi_at, &mut psi, &mut s.weights, rng)
        else {
            // crossing with zero outflux is only reachable through roundoff
            // on a dark state; censor rather than divide by 0
            break;
        };
        psi.gemv(ONE, &drift.channels[k], &s.psi_at, ZERO);
        let norm = psi.norm();
        psi.unscale_mut(norm);
        t = t_jump;
        if k >= drift.n_notick {
            ticks.push(t_jump);
        }
    }
    ticks
}

/// Sample `n_traj` independent tick sequences of up to `max_ticks` ticks each.
/// Deterministic in (seed, n_traj, max_ticks, config); trajectory `i` draws
/// from RNG stream `i` of the seed, so parallel scheduling cannot reorder
/// randomness.
pub fn sample_trajectories(
    model: &ClockModel,
    n_traj: usize,
    max_ticks: usize,
    seed: u64,
    config: &IntegrationConfig,
) -> Result<TrajectoryBatch, TrajectoryError> {
    if n_traj == 0 {
        return Err(TrajectoryError::ZeroTrajectories);
    }
    if max_ticks == 0 {
        return Err(TrajectoryError::ZeroTicksRequested);
    }
    config.validate()?;
    let horizon = config.horizon_for(model.gamma());
    let drift = KetDrift::new(model);
    let walker = ExpmWalker::new(&drift.generator, horizon);
    let initial = spectral_initial(model);

    let tick_times: Vec<Vec<f64>> = (0..n_traj)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            run_trajectory(&drift, &walker, &initial, horizon, max_ticks, &mut rng)
        })
        .collect();

    let censored_count = tick_times.iter().filter(|tt| tt.len() < max_ticks).count();
    if tick_times.iter().all(|tt| tt.is_empty()) {
        return Err(TrajectoryError::AllCensored { n_traj });
    }
    let mut batch = TrajectoryBatch {
        seed,
        n_traj,
        max_ticks,
        horizon,
        tick_times,
        estimated: Vec::new(),
        censored_count,
    };
    batch.estimated =
        (1..=max_ticks).filter_map(|k| estimate_statistics(&batch, k).ok()).collect();
    Ok(batch)
}

/// Waiting-time statistics at `tick_index` (1-based) over every trajectory
/// that reached that tick. se_N comes from the delta method on (μ̂, σ̂²)
/// including their covariance, using third and fourth central moments.
pub fn estimate_statistics(
    batch: &TrajectoryBatch,
    tick_index: usize,
) -> Result<TickEstimate, TrajectoryError> {
    if tick_index == 0 || tick_index > batch.max_ticks {
        return Err(TrajectoryError::BadTickIndex { tick_index, max_ticks: batch.max_ticks });
    }
    let waits: Vec<f64> = batch
        .tick_times
        .iter()
        .filter(|tt| tt.len() >= tick_index)
        .map(|tt| {
            if tick_index == 1 {
                tt[0]
            } else {
                tt[tick_index - 1] - tt[tick_index - 2]
            }
        })
        .collect();
    let n = waits.len();
    if n < MIN_ESTIMATE_SAMPLES {
        return Err(TrajectoryError::InsufficientSamples {
            tick_index,
            available: n,
            required: MIN_ESTIMATE_SAMPLES,
        });
    }
    let nf = n as f64;
    let mu = waits.iter().sum::<f64>() / nf;
    let (mut s2, mut s3, mut s4) = (0.0_f64, 0.0_f64, 0.0_f64);
    for w in &waits {
        let d = w - mu;
        let d2 = d * d;
        s2 += d2;
        s3 += d2 * d;
        s4 += d2 * d2;
    }
    let sigma2 = s2 / (nf - 1.0);
    let m3 = s3 / nf;
    let m4 = s4 / nf;
    let var_mu = sigma2 / nf;
    // Var(s²) = (μ₄ − σ⁴(n−3)/(n−1))/n with plug-in central moments
    let var_sigma2 = ((m4 - sigma2 * sigma2 * (nf - 3.0) / (nf - 1.0)) / nf).max(0.0);
    let cov_mu_sigma2 = m3 / nf;
    let dn_dmu = 2.0 * mu / sigma2;
    let dn_dsigma2 = -(mu * mu) / (sigma2 * sigma2);
    let var_n = (dn_dmu * dn_dmu * var_mu
        + dn_dsigma2 * dn_dsigma2 * var_sigma2
        + 2.0 * dn_dmu * dn_dsigma2 * cov_mu_sigma2)
        .max(0.0);
    Ok(TickEstimate {
        tick_index,
        n_samples: n,
        mu_hat: mu,
        sigma2_hat: sigma2,
        n_hat: mu * mu / sigma2,
        nu_hat: 1.0 / mu,
        se_mu: var_mu.sqrt(),
        se_sigma2: var_sigma2.sqrt(),
        se_n: var_n.sqrt(),
    })
}
