//! Shared fixtures for in-crate unit tests.

use crate::engine::ClockModel;
use crate::linalg::{symmetrize, C64, CMatrix, DensityMatrix, ONE, ZERO};
use rand::Rng;

pub fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn random_matrix(rng: &mut impl Rng, d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |_, _| C64::new(gauss(rng), gauss(rng)))
}

pub fn random_hermitian(rng: &mut impl Rng, d: usize) -> CMatrix {
    symmetrize(&random_matrix(rng, d))
}

pub fn ket_bra(d: usize, i: usize, j: usize) -> CMatrix {
    let mut m = CMatrix::zeros(d, d);
    m[(i, j)] = ONE;
    m
}

/// Two-level clock that ticks at rate `gamma` from its excited state; the
/// waiting time is exactly exponential.
pub fn exponential_model(gamma: f64) -> ClockModel {
    let j = ket_bra(2, 0, 1) * C64::new(gamma.sqrt(), 0.0);
    ClockModel::new(
        CMatrix::zeros(2, 2),
        vec![],
        vec![j],
        DensityMatrix::new(ket_bra(2, 1, 1)).unwrap(),
    )
    .unwrap()
}

/// Three-level cascade 2 → 1 → 0 at unit rates; only the last hop ticks, so
/// the waiting time is Erlang with m = 2.
pub fn cascade_model() -> ClockModel {
    ClockModel::new(
        CMatrix::zeros(3, 3),
        vec![ket_bra(3, 1, 2)],
        vec![ket_bra(3, 0, 1)],
        DensityMatrix::new(ket_bra(3, 2, 2)).unwrap(),
    )
    .unwrap()
}

/// Driven two-level clock: H = (Ω/2)σ_x, tick jump √Γ|0⟩⟨1|, started in |0⟩.
pub fn rabi_model(omega: f64, gamma: f64) -> ClockModel {
    let h = CMatrix::from_row_slice(
        2,
        2,
        &[ZERO, C64::new(omega / 2.0, 0.0), C64::new(omega / 2.0, 0.0), ZERO],
    );
    let j = ket_bra(2, 0, 1) * C64::new(gamma.sqrt(), 0.0);
    ClockModel::new(h, vec![], vec![j], DensityMatrix::new(ket_bra(2, 0, 0)).unwrap()).unwrap()
}
