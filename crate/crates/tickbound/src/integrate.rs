//! Embedded adaptive Runge-Kutta 5(4) (Dormand-Prince) over complex state
//! vectors, with the classic quartic dense-output interpolant. Step control is
//! a plain I-controller with safety factor and scale limits.
//!
//! A step's seven stages are recomputed from (t, y, h) rather than cached
//! FSAL-style, so the dense interpolant over any accepted interval is a pure
//! function of the stored step endpoints and can be rebuilt on demand without
//! keeping stage vectors in memory. The right-hand side writes its derivative
//! into a caller-supplied buffer and all stage arithmetic runs in a reused
//! workspace; the hot loop does not allocate.

use crate::linalg::{C64, CVector, ONE, ZERO};
use thiserror::Error;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;

const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

// b - b_hat, the 5th-minus-4th order error weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// Dense-output weights for the fifth interpolation coefficient.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_SCALE: f64 = 0.2;
const MAX_SCALE: f64 = 10.0;
const MAX_ATTEMPTS: u32 = 60;

/// 5-point Gauss-Legendre rule on [0, 1]: (node, weight) pairs. Exact for
/// polynomials up to degree 9, beyond the quartic dense interpolant times the
/// cubic time weights used by the moment quadrature.
pub const GL5: [(f64, f64); 5] = [
    (0.046910077030668004, 0.11846344252809454),
    (0.23076534494715845, 0.23931433524968324),
    (0.5, 0.28444444444444444),
    (0.7692346550528415, 0.23931433524968324),
    (0.953089922969332, 0.11846344252809454),
];

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("step size underflow at t = {t:.6e} (h = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step rejected {attempts} times in a row at t = {t:.6e}")]
    TooManyRejections { t: f64, attempts: u32 },
}

/// Quartic interpolant over one accepted step [t0, t0 + h].
#[derive(Debug, Clone)]
pub struct DenseStep {
    t0: f64,
    h: f64,
    t1: f64,
    rcont: [CVector; 5],
}

impl DenseStep {
    pub fn t_start(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t1
    }

    /// The exact step size used, suitable for bit-identical reconstruction.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.t1
    }

    /// Evaluate the interpolant at t ∈ [t0, t1].
    pub fn eval(&self, t: f64) -> CVector {
        let theta = if self.h == 0.0 { 0.0 } else { (t - self.t0) / self.h };
        self.eval_theta(theta)
    }

    /// Evaluate at the dimensionless step fraction θ ∈ [0, 1].
    pub fn eval_theta(&self, theta: f64) -> CVector {
        let mut out = CVector::zeros(self.rcont[0].len());
        self.eval_theta_into(theta, &mut out);
        out
    }

    /// Allocation-free evaluation into a caller buffer.
    pub fn eval_theta_into(&self, theta: f64, out: &mut CVector) {
        let th = C64::new(theta, 0.0);
        let th1 = C64::new(1.0 - theta, 0.0);
        out.copy_from(&self.rcont[4]);
        *out *= th1;
        *out += &self.rcont[3];
        *out *= th;
        *out += &self.rcont[2];
        *out *= th1;
        *out += &self.rcont[1];
        *out *= th;
        *out += &self.rcont[0];
    }
}

/// Scratch buffers reused across steps so stage arithmetic never allocates.
struct Workspace {
    k: [CVector; 7],
    ytmp: CVector,
    y1: CVector,
    err: CVector,
}

impl Workspace {
    fn new(dim: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| CVector::zeros(dim)),
            ytmp: CVector::zeros(dim),
            y1: CVector::zeros(dim),
            err: CVector::zeros(dim),
        }
    }
}

/// One full Dormand-Prince stage evaluation from (t0, y0, h), leaving the
/// advanced state in `ws.y1` and the embedded error in `ws.err`.
/// Deterministic: reconstructing a recorded step reproduces the original
/// interpolant bit for bit. The dense interpolant costs extra vector work, so
/// callers that only need the endpoint skip it with `want_dense = false`; the
/// advanced state and error estimate are identical either way.
fn stages_into<F: Fn(f64, &CVector, &mut CVector)>(
    rhs: &F,
    t0: f64,
    y0: &CVector,
    h: f64,
    ws: &mut Workspace,
    want_dense: bool,
) -> Option<DenseStep> {
    let hc = |a: f64| C64::new(h * a, 0.0);
    let Workspace { k, ytmp, y1, err } = ws;
    let [k1, k2, k3, k4, k5, k6, k7] = k;

    rhs(t0, y0, k1);
    ytmp.copy_from(y0);
    ytmp.axpy(hc(A21), k1, ONE);
    rhs(t0 + C2 * h, ytmp, k2);
    ytmp.copy_from(y0);
    ytmp.axpy(hc(A31), k1, ONE);
    ytmp.axpy(hc(A32), k2, ONE);
    rhs(t0 + C3 * h, ytmp, k3);
    ytmp.copy_from(y0);
    ytmp.axpy(hc(A41), k1, ONE);
    ytmp.axpy(hc(A42), k2, ONE);
    ytmp.axpy(hc(A43), k3, ONE);
    rhs(t0 + C4 * h, ytmp, k4);
    ytmp.copy_from(y0);
    ytmp.axpy(hc(A51), k1, ONE);
    ytmp.axpy(hc(A52), k2, ONE);
    ytmp.axpy(hc(A53), k3, ONE);
    ytmp.axpy(hc(A54), k4, ONE);
    rhs(t0 + C5 * h, ytmp, k5);
    ytmp.copy_from(y0);
    ytmp.axpy(hc(A61), k1, ONE);
    ytmp.axpy(hc(A62), k2, ONE);
    ytmp.axpy(hc(A63), k3, ONE);
    ytmp.axpy(hc(A64), k4, ONE);
    ytmp.axpy(hc(A65), k5, ONE);
    rhs(t0 + h, ytmp, k6);

    y1.copy_from(y0);
    y1.axpy(hc(B1), k1, ONE);
    y1.axpy(hc(B3), k3, ONE);
    y1.axpy(hc(B4), k4, ONE);
    y1.axpy(hc(B5), k5, ONE);
    y1.axpy(hc(B6), k6, ONE);
    rhs(t0 + h, y1, k7);

    err.fill(ZERO);
    err.axpy(hc(E1), k1, ONE);
    err.axpy(hc(E3), k3, ONE);
    err.axpy(hc(E4), k4, ONE);
    err.axpy(hc(E5), k5, ONE);
    err.axpy(hc(E6), k6, ONE);
    err.axpy(hc(E7), k7, ONE);

    want_dense.then(|| {
        let ydiff = &*y1 - y0;
        let rcont0 = y0.clone();
        let mut rcont2 = k1.clone() * C64::new(h, 0.0);
        rcont2 -= &ydiff;
        let mut rcont3 = ydiff.clone();
        rcont3.axpy(C64::new(-h, 0.0), k7, ONE);
        rcont3 -= &rcont2;
        let mut rcont4 = CVector::zeros(y0.len());
        rcont4.axpy(hc(D1), k1, ONE);
        rcont4.axpy(hc(D3), k3, ONE);
        rcont4.axpy(hc(D4), k4, ONE);
        rcont4.axpy(hc(D5), k5, ONE);
        rcont4.axpy(hc(D6), k6, ONE);
        rcont4.axpy(hc(D7), k7, ONE);
        DenseStep { t0, h, t1: t0 + h, rcont: [rcont0, ydiff, rcont2, rcont3, rcont4] }
    })
}

/// Rebuild the dense interpolant of an accepted step from its stored start
/// state and step size.
pub fn reconstruct_dense<F: Fn(f64, &CVector, &mut CVector)>(
    rhs: &F,
    t0: f64,
    y0: &CVector,
    h: f64,
) -> DenseStep {
    let mut ws = Workspace::new(y0.len());
    stages_into(rhs, t0, y0, h, &mut ws, true).expect("dense requested")
}

/// Weighted RMS error norm against atol + rtol·max(|y0|, |y1|), per complex
/// component modulus; acceptance threshold is 1.
fn error_norm(err: &CVector, y0: &CVector, y1: &CVector, abs_tol: f64, rel_tol: f64) -> f64 {
    let n = err.len().max(1) as f64;
    let sum: f64 = err
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let sc = abs_tol + rel_tol * y0[i].norm().max(y1[i].norm());
            let r = e.norm() / sc;
            r * r
        })
        .sum();
    (sum / n).sqrt()
}

/// Standard two-trial initial step guess (first-derivative scale, then a
/// second-derivative correction).
pub fn initial_step_size<F: Fn(f64, &CVector, &mut CVector)>(
    rhs: &F,
    t0: f64,
    y0: &CVector,
    t_end: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> f64 {
    let span = (t_end - t0).abs();
    let mut f0 = CVector::zeros(y0.len());
    rhs(t0, y0, &mut f0);
    let wnorm = |v: &CVector| -> f64 {
        let n = v.len().max(1) as f64;
        (v.iter()
            .enumerate()
            .map(|(i, z)| {
                let sc = abs_tol + rel_tol * y0[i].norm();
                let r = z.norm() / sc;
                r * r
            })
            .sum::<f64>()
            / n)
            .sqrt()
    };
    let d0 = wnorm(y0);
    let d1 = wnorm(&f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1 = y0 + &f0 * C64::new(h0, 0.0);
    let mut f1 = CVector::zeros(y0.len());
    rhs(t0 + h0, &y1, &mut f1);
    f1 -= &f0;
    let d2 = wnorm(&f1) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / dm).powf(0.2) };
    (100.0 * h0).min(h1).min(span)
}

/// Adaptive stepper; the caller drives it step by accepted step and may
/// inspect or adjust the state in between.
pub struct Dopri5<F: Fn(f64, &CVector, &mut CVector)> {
    pub rhs: F,
    t: f64,
    y: CVector,
    h: f64,
    t_end: f64,
    abs_tol: f64,
    rel_tol: f64,
    last_rejected: bool,
    ws: Workspace,
}

impl<F: Fn(f64, &CVector, &mut CVector)> Dopri5<F> {
    pub fn new(rhs: F, t0: f64, y0: CVector, t_end: f64, abs_tol: f64, rel_tol: f64) -> Self {
        let h = initial_step_size(&rhs, t0, &y0, t_end, abs_tol, rel_tol);
        Self::with_initial_step(rhs, t0, y0, t_end, abs_tol, rel_tol, h)
    }

    /// Start from a known-good step size (e.g. carried over from an adjacent
    /// integration of the same system), skipping the startup estimate.
    pub fn with_initial_step(
        rhs: F,
        t0: f64,
        y0: CVector,
        t_end: f64,
        abs_tol: f64,
        rel_tol: f64,
        h: f64,
    ) -> Self {
        let ws = Workspace::new(y0.len());
        let h = if h > 0.0 { h } else { 1e-6 };
        Self { rhs, t: t0, y: y0, h, t_end, abs_tol, rel_tol, last_rejected: false, ws }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &CVector {
        &self.y
    }

    /// Current step-size proposal for the next attempt.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn set_t_end(&mut self, t_end: f64) {
        self.t_end = t_end;
    }

    pub fn finished(&self) -> bool {
        self.t >= self.t_end
    }

    /// Adjust the live state (e.g. re-symmetrization drift control). The next
    /// step starts from the adjusted state.
    pub fn modify_state(&mut self, f: impl FnOnce(&mut CVector)) {
        f(&mut self.y);
    }

    /// Restart at a new initial condition, reusing the solver's buffers. The
    /// step-size proposal carries over unless `h` overrides it; `t_end` stays.
    pub fn reset_from(&mut self, t0: f64, y0: &CVector, h: Option<f64>) {
        self.t = t0;
        self.y.copy_from(y0);
        if let Some(h) = h {
            self.h = if h > 0.0 { h } else { 1e-6 };
        }
        self.last_rejected = false;
    }

    /// Rebuild a dense interpolant using this solver's scratch buffers. The
    /// next step attempt rewrites them, so reconstruct before stepping on.
    pub fn reconstruct(&mut self, t0: f64, y0: &CVector, h: f64) -> DenseStep {
        stages_into(&self.rhs, t0, y0, h, &mut self.ws, true).expect("dense requested")
    }

    /// Advance one accepted step (retrying rejected attempts internally) and
    /// return its dense interpolant. The final step is clamped to land exactly
    /// on `t_end`.
    pub fn step(&mut self) -> Result<DenseStep, IntegrateError> {
        let (_, _, dense) = self.advance(true)?;
        Ok(dense.expect("dense requested"))
    }

    /// Advance one accepted step without building the dense interpolant,
    /// returning (t_start, h). The accepted state is bit-identical to what
    /// `step` would have produced; `reconstruct_dense` recovers the
    /// interpolant from the pre-step state when it turns out to be needed.
    pub fn step_sparse(&mut self) -> Result<(f64, f64), IntegrateError> {
        let (t0, h, _) = self.advance(false)?;
        Ok((t0, h))
    }

    fn advance(
        &mut self,
        want_dense: bool,
    ) -> Result<(f64, f64, Option<DenseStep>), IntegrateError> {
        for attempt in 0..MAX_ATTEMPTS {
            let clamped = self.h >= self.t_end - self.t;
            let h = if clamped { self.t_end - self.t } else { self.h };
            if h <= 16.0 * f64::EPSILON * self.t.abs().max(1.0) {
                return Err(IntegrateError::StepSizeUnderflow { t: self.t, h });
            }
            let t0 = self.t;
            let dense = stages_into(&self.rhs, t0, &self.y, h, &mut self.ws, want_dense);
            let err = error_norm(&self.ws.err, &self.y, &self.ws.y1, self.abs_tol, self.rel_tol);
            if err <= 1.0 {
                let mut scale = if err == 0.0 {
                    MAX_SCALE
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_SCALE, MAX_SCALE)
                };
                if self.last_rejected {
                    scale = scale.min(1.0);
                }
                if !clamped {
                    self.h = h * scale;
                } else {
                    // keep the pre-clamp step for any continuation past t_end
                    self.h = (self.h * scale).max(h);
                }
                self.t = t0 + h;
                std::mem::swap(&mut self.y, &mut self.ws.y1);
                self.last_rejected = false;
                return Ok((t0, h, dense));
            }
            self.h = h * (SAFETY * err.powf(-0.2)).clamp(MIN_SCALE, 1.0);
            self.last_rejected = true;
            if attempt + 1 == MAX_ATTEMPTS {
                return Err(IntegrateError::TooManyRejections { t: self.t, attempts: MAX_ATTEMPTS });
            }
        }
        unreachable!("attempt loop returns");
    }
}
