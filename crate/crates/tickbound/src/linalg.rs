//! Dense complex linear algebra plus the state and operator types shared by
//! every other module. Target dimensions are small (≤ ~64), so everything is
//! dense and allocation cost is irrelevant next to correctness.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use thiserror::Error;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Absolute tolerance on Hermiticity deviations and eigenvalue negativity.
pub const TOL_HERM: f64 = 1e-10;

pub const ONE: C64 = Complex::new(1.0, 0.0);
pub const ZERO: C64 = Complex::new(0.0, 0.0);
pub const I: C64 = Complex::new(0.0, 1.0);

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix has zero dimension")]
    EmptyMatrix,
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("operator deviates from Hermitian by {deviation:.3e} (tolerance {tol:.1e})")]
    NonHermitian { deviation: f64, tol: f64 },
    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("state has eigenvalue {value:.3e} below -{tol:.1e}")]
    NotPositive { value: f64, tol: f64 },
    #[error("state trace {trace} outside [0, 1 + {tol:.1e}]")]
    BadTrace { trace: f64, tol: f64 },
    #[error("at least one tick jump operator is required")]
    NoJumps,
}

pub fn check_finite(m: &CMatrix) -> Result<(), LinalgError> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            if !z.re.is_finite() || !z.im.is_finite() {
                return Err(LinalgError::NonFinite { row: i, col: j });
            }
        }
    }
    Ok(())
}

fn check_square(m: &CMatrix) -> Result<usize, LinalgError> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    if m.nrows() == 0 {
        return Err(LinalgError::EmptyMatrix);
    }
    Ok(m.nrows())
}

/// Max entrywise |A - A†|.
pub fn hermiticity_deviation(m: &CMatrix) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            dev = dev.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    dev
}

/// Max entrywise |A - B|.
pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.trace()
}

/// Discard the imaginary part of the trace; callers use this where the trace
/// is real by construction (Hermitian arguments).
pub fn trace_re(m: &CMatrix) -> f64 {
    m.trace().re
}

/// (A + A†)/2, removing roundoff-scale Hermiticity drift.
pub fn symmetrize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Eigenvalues (ascending) and matching eigenvector columns of a Hermitian
/// matrix. The input is symmetrized first so roundoff-level deviations cannot
/// leak imaginary parts into the spectrum.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let d = m.nrows();
    let eig = nalgebra::linalg::SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    hermitian_eigen(m).0
}

/// Square matrix with Hermiticity enforced at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    mat: CMatrix,
}

impl HermitianOperator {
    pub fn new(mat: CMatrix) -> Result<Self, LinalgError> {
        check_square(&mat)?;
        check_finite(&mat)?;
        let dev = hermiticity_deviation(&mat);
        if dev > TOL_HERM {
            return Err(LinalgError::NonHermitian { deviation: dev, tol: TOL_HERM });
        }
        Ok(Self { mat: symmetrize(&mat) })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }
}

/// Largest eigenvalue; for the positive tick operator V this is the fastest
/// elementary rate of the tick channel.
pub fn hermitian_max_eigenvalue(op: &HermitianOperator) -> f64 {
    *hermitian_eigenvalues(op.matrix()).last().expect("nonempty by construction")
}

/// V = Σ_j J_j† J_j, positive semidefinite by construction.
pub fn build_tick_operator(jumps: &[CMatrix]) -> Result<HermitianOperator, LinalgError> {
    if jumps.is_empty() {
        return Err(LinalgError::NoJumps);
    }
    let d = check_square(&jumps[0])?;
    let mut v = CMatrix::zeros(d, d);
    for j in jumps {
        let dj = check_square(j)?;
        if dj != d {
            return Err(LinalgError::DimensionMismatch { left: d, right: dj });
        }
        check_finite(j)?;
        v += j.adjoint() * j;
    }
    Ok(HermitianOperator { mat: symmetrize(&v) })
}

/// Density matrix; unnormalized states (trace < 1) are allowed because the
/// no-tick conditioned state loses trace.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: CMatrix,
}

impl DensityMatrix {
    /// Validating constructor: Hermitian within `TOL_HERM`, eigenvalues above
    /// -`TOL_HERM`, trace in [0, 1 + `TOL_HERM`].
    pub fn new(mat: CMatrix) -> Result<Self, LinalgError> {
        check_square(&mat)?;
        check_finite(&mat)?;
        let dev = hermiticity_deviation(&mat);
        if dev > TOL_HERM {
            return Err(LinalgError::NonHermitian { deviation: dev, tol: TOL_HERM });
        }
        let evals = hermitian_eigenvalues(&mat);
        if evals[0] < -TOL_HERM {
            return Err(LinalgError::NotPositive { value: evals[0], tol: TOL_HERM });
        }
        let tr = mat.trace().re;
        if !(-TOL_HERM..=1.0 + TOL_HERM).contains(&tr) {
            return Err(LinalgError::BadTrace { trace: tr, tol: TOL_HERM });
        }
        Ok(Self { mat: symmetrize(&mat) })
    }

    /// Skips validation; used on integrator output that is re-symmetrized each
    /// accepted step and validated statistically by the invariant suite.
    pub fn from_matrix_unchecked(mat: CMatrix) -> Self {
        Self { mat }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.mat)[0]
    }
}

/// Column-stack a matrix: columns concatenated top to bottom.
pub fn vec_col_stack(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_col_stack`] for a d×d matrix.
pub fn unvec(v: &CVector, d: usize) -> CMatrix {
    CMatrix::from_column_slice(d, d, v.as_slice())
}

/// Direct right-hand side of the no-tick master equation:
/// -i[H,ρ] + Σ_k (L_k ρ L_k† - ½{L_k†L_k, ρ}) - ½{V, ρ}.
pub fn apply_generator(
    hamiltonian: &CMatrix,
    dissipator_ops: &[CMatrix],
    anticommutator_op: &HermitianOperator,
    rho: &CMatrix,
) -> CMatrix {
    let mut out = (hamiltonian * rho - rho * hamiltonian) * (-I);
    for l in dissipator_ops {
        let ldl = l.adjoint() * l;
        out += l * rho * l.adjoint();
        out -= (&ldl * rho + rho * &ldl) * C64::new(0.5, 0.0);
    }
    let v = anticommutator_op.matrix();
    out -= (v * rho + rho * v) * C64::new(0.5, 0.0);
    out
}

/// Matrix representation of [`apply_generator`] on column-stacked states,
/// using vec(AρB) = (Bᵀ ⊗ A) vec(ρ).
pub fn vectorize_superoperator(
    hamiltonian: &CMatrix,
    dissipator_ops: &[CMatrix],
    anticommutator_op: &HermitianOperator,
) -> Result<CMatrix, LinalgError> {
    let d = check_square(hamiltonian)?;
    if anticommutator_op.dim() != d {
        return Err(LinalgError::DimensionMismatch { left: d, right: anticommutator_op.dim() });
    }
    let id = CMatrix::identity(d, d);
    let mut m = (id.kronecker(hamiltonian) - hamiltonian.transpose().kronecker(&id)) * (-I);
    let half = C64::new(0.5, 0.0);
    for l in dissipator_ops {
        let dl = check_square(l)?;
        if dl != d {
            return Err(LinalgError::DimensionMismatch { left: d, right: dl });
        }
        let ldl = l.adjoint() * l;
        m += l.map(|z| z.conj()).kronecker(l);
        m -= (id.kronecker(&ldl) + ldl.transpose().kronecker(&id)) * half;
    }
    let v = anticommutator_op.matrix();
    m -= (id.kronecker(v) + v.transpose().kronecker(&id)) * half;
    Ok(m)
}

/// exp(A) by scaling and squaring with a Taylor kernel; the scaled norm is
/// pushed low enough that the series converges to machine precision. Serves
/// as the reference propagator the adaptive integrator is checked against.
pub fn expm(a: &CMatrix) -> CMatrix {
    let d = a.nrows();
    assert_eq!(d, a.ncols(), "expm requires a square matrix");
    let norm1 = (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > 0.25 { (norm1 / 0.25).log2().ceil() as u32 } else { 0 };
    let scale = C64::new((0.5f64).powi(squarings as i32), 0.0);
    let b = a * scale;
    let mut term = CMatrix::identity(d, d);
    let mut sum = CMatrix::identity(d, d);
    for k in 1..=40u32 {
        term = &term * &b * C64::new(1.0 / f64::from(k), 0.0);
        sum += &term;
        let tnorm = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if tnorm < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    use crate::testutil::{random_hermitian, random_matrix};

    fn ket_bra(d: usize, i: usize, j: usize) -> CMatrix {
        let mut m = CMatrix::zeros(d, d);
        m[(i, j)] = ONE;
        m
    }

    #[test]
    fn max_eigenvalue_diagonal() {
        let v = HermitianOperator::new(CMatrix::from_diagonal(&CVector::from_vec(vec![
            ZERO,
            C64::new(2.0, 0.0),
        ])))
        .unwrap();
        assert!((hermitian_max_eigenvalue(&v) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn max_eigenvalue_zero_operator() {
        let v = HermitianOperator::new(CMatrix::zeros(2, 2)).unwrap();
        assert!(hermitian_max_eigenvalue(&v).abs() < 1e-14);
    }

    #[test]
    fn max_eigenvalue_two_jump_projector_sum() {
        let v = build_tick_operator(&[ket_bra(3, 0, 1), ket_bra(3, 0, 2)]).unwrap();
        let expect = CMatrix::from_diagonal(&CVector::from_vec(vec![ZERO, ONE, ONE]));
        assert!(max_abs_diff(v.matrix(), &expect) < 1e-14);
        assert!((hermitian_max_eigenvalue(&v) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn max_eigenvalue_dense_hermitian() {
        // [[2, i], [-i, 2]] has eigenvalues 1 and 3
        let m = CMatrix::from_row_slice(2, 2, &[C64::new(2.0, 0.0), I, -I, C64::new(2.0, 0.0)]);
        let (vals, vecs) = hermitian_eigen(&m);
        assert!((vals[0] - 1.0).abs() < 1e-12);
        assert!((vals[1] - 3.0).abs() < 1e-12);
        // eigenvector residual A v = λ v
        for k in 0..2 {
            let v = vecs.column(k).clone_owned();
            let res = &m * &v - &v * C64::new(vals[k], 0.0);
            assert!(res.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
        }
    }

    #[test]
    fn eigen_residual_random() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for d in 2..=8 {
            let m = random_hermitian(&mut rng, d);
            let (vals, vecs) = hermitian_eigen(&m);
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            for k in 0..d {
                let v = vecs.column(k).clone_owned();
                let res = &m * &v - &v * C64::new(vals[k], 0.0);
                assert!(
                    res.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-10,
                    "eigen residual too large at dim {d}"
                );
            }
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ONE]);
        assert!(matches!(HermitianOperator::new(m), Err(LinalgError::NonHermitian { .. })));
    }

    #[test]
    fn tick_operator_single_scaled_jump() {
        let j = ket_bra(2, 0, 1) * C64::new(2.0f64.sqrt(), 0.0);
        let v = build_tick_operator(&[j]).unwrap();
        let expect = CMatrix::from_diagonal(&CVector::from_vec(vec![ZERO, C64::new(2.0, 0.0)]));
        assert!(max_abs_diff(v.matrix(), &expect) < 1e-14);
    }

    #[test]
    fn tick_operator_ladder_top_level() {
        let j = ket_bra(4, 0, 3) * C64::new(0.01f64.sqrt(), 0.0);
        let v = build_tick_operator(&[j]).unwrap();
        let expect = ket_bra(4, 3, 3) * C64::new(0.01, 0.0);
        assert!(max_abs_diff(v.matrix(), &expect) < 1e-14);
    }

    #[test]
    fn tick_operator_rejects_empty_and_mismatched() {
        assert!(matches!(build_tick_operator(&[]), Err(LinalgError::NoJumps)));
        let r = build_tick_operator(&[ket_bra(2, 0, 1), ket_bra(3, 0, 1)]);
        assert!(matches!(r, Err(LinalgError::DimensionMismatch { .. })));
    }

    #[test]
    fn tick_operator_psd_random() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let d = rng.gen_range(2..=6);
            let jumps: Vec<CMatrix> =
                (0..rng.gen_range(1..=2)).map(|_| random_matrix(&mut rng, d)).collect();
            let v = build_tick_operator(&jumps).unwrap();
            assert!(hermitian_eigenvalues(v.matrix())[0] >= -1e-12);
        }
    }

    #[test]
    fn vectorize_trivial_zero() {
        let h = CMatrix::zeros(2, 2);
        let v = HermitianOperator::new(CMatrix::zeros(2, 2)).unwrap();
        let m = vectorize_superoperator(&h, &[], &v).unwrap();
        assert!(m.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-15);
    }

    #[test]
    fn vectorize_pure_anticommutator_decay() {
        let gamma = 0.7;
        let h = CMatrix::zeros(2, 2);
        let v =
            HermitianOperator::new(ket_bra(2, 1, 1) * C64::new(gamma, 0.0)).unwrap();
        let m = vectorize_superoperator(&h, &[], &v).unwrap();
        let rho = ket_bra(2, 1, 1);
        let out = unvec(&(&m * vec_col_stack(&rho)), 2);
        let expect = ket_bra(2, 1, 1) * C64::new(-gamma, 0.0);
        assert!(max_abs_diff(&out, &expect) < 1e-14);
    }

    #[test]
    fn vectorize_matches_direct_formula() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let d = 3;
        let h = random_hermitian(&mut rng, d);
        let ops: Vec<CMatrix> = (0..2).map(|_| random_matrix(&mut rng, d)).collect();
        let jumps: Vec<CMatrix> = (0..2).map(|_| random_matrix(&mut rng, d)).collect();
        let v = build_tick_operator(&jumps).unwrap();
        let m = vectorize_superoperator(&h, &ops, &v).unwrap();
        for _ in 0..20 {
            let rho = random_matrix(&mut rng, d);
            let via_vec = unvec(&(&m * vec_col_stack(&rho)), d);
            let direct = apply_generator(&h, &ops, &v, &rho);
            assert!(max_abs_diff(&via_vec, &direct) < 1e-12);
        }
    }

    #[test]
    fn vectorize_matches_direct_all_dims() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for d in 2..=6 {
            let h = random_hermitian(&mut rng, d);
            let n_ops = rng.gen_range(0..=2);
            let ops: Vec<CMatrix> = (0..n_ops).map(|_| random_matrix(&mut rng, d)).collect();
            let jumps: Vec<CMatrix> =
                (0..rng.gen_range(1..=2)).map(|_| random_matrix(&mut rng, d)).collect();
            let v = build_tick_operator(&jumps).unwrap();
            let m = vectorize_superoperator(&h, &ops, &v).unwrap();
            for _ in 0..5 {
                let rho = random_matrix(&mut rng, d);
                let via_vec = unvec(&(&m * vec_col_stack(&rho)), d);
                let direct = apply_generator(&h, &ops, &v, &rho);
                let scale = direct.iter().map(|z| z.norm()).fold(1.0, f64::max);
                assert!(max_abs_diff(&via_vec, &direct) / scale < 1e-10);
            }
        }
    }

    #[test]
    fn generator_preserves_hermiticity() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..20 {
            let d = rng.gen_range(2..=6);
            let h = random_hermitian(&mut rng, d);
            let ops: Vec<CMatrix> =
                (0..rng.gen_range(0..=2)).map(|_| random_matrix(&mut rng, d)).collect();
            let jumps = vec![random_matrix(&mut rng, d)];
            let v = build_tick_operator(&jumps).unwrap();
            let rho = random_hermitian(&mut rng, d);
            let out = apply_generator(&h, &ops, &v, &rho);
            assert!(hermiticity_deviation(&out) < 1e-12);
        }
    }

    #[test]
    fn generator_trace_is_minus_tick_expectation() {
        // tr(L[ρ]) = -tr(Vρ) for any Hermitian ρ: the only trace loss is the
        // tick anticommutator.
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..20 {
            let d = rng.gen_range(2..=6);
            let h = random_hermitian(&mut rng, d);
            let ops: Vec<CMatrix> =
                (0..rng.gen_range(0..=2)).map(|_| random_matrix(&mut rng, d)).collect();
            let jumps: Vec<CMatrix> =
                (0..rng.gen_range(1..=2)).map(|_| random_matrix(&mut rng, d)).collect();
            let v = build_tick_operator(&jumps).unwrap();
            let rho = random_hermitian(&mut rng, d);
            let lhs = trace(&apply_generator(&h, &ops, &v, &rho));
            let rhs = -trace(&(v.matrix() * &rho));
            assert!((lhs - rhs).norm() < 1e-12 * (1.0 + rhs.norm()));
        }
    }

    #[test]
    fn density_matrix_validation() {
        let ok = DensityMatrix::new(ket_bra(2, 1, 1)).unwrap();
        assert!((ok.trace() - 1.0).abs() < 1e-15);
        let bad_herm = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ZERO]);
        assert!(DensityMatrix::new(bad_herm).is_err());
        let bad_trace = ket_bra(2, 1, 1) * C64::new(1.2, 0.0);
        assert!(matches!(DensityMatrix::new(bad_trace), Err(LinalgError::BadTrace { .. })));
        let not_psd = CMatrix::from_row_slice(
            2,
            2,
            &[C64::new(0.5, 0.0), C64::new(0.6, 0.0), C64::new(0.6, 0.0), C64::new(0.5, 0.0)],
        );
        assert!(matches!(DensityMatrix::new(not_psd), Err(LinalgError::NotPositive { .. })));
    }

    #[test]
    fn expm_nilpotent_and_diagonal() {
        let n = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        let e = expm(&n);
        let expect = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ONE]);
        assert!(max_abs_diff(&e, &expect) < 1e-15);

        let d = CMatrix::from_diagonal(&CVector::from_vec(vec![
            C64::new(-1.0, 0.0),
            C64::new(0.5, 2.0),
        ]));
        let e = expm(&d);
        assert!((e[(0, 0)] - C64::new((-1.0f64).exp(), 0.0)).norm() < 1e-14);
        assert!((e[(1, 1)] - C64::new(0.5, 2.0).exp()).norm() < 1e-12);
    }

    #[test]
    fn expm_pauli_rotation() {
        // exp(-iθσ_x) = cos(θ) I - i sin(θ) σ_x
        let theta = 1.3;
        let sx = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]);
        let e = expm(&(&sx * (-I * C64::new(theta, 0.0))));
        let expect = CMatrix::identity(2, 2) * C64::new(theta.cos(), 0.0)
            + &sx * (-I * C64::new(theta.sin(), 0.0));
        assert!(max_abs_diff(&e, &expect) < 1e-14);
    }

    #[test]
    fn expm_group_property_random() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let a = random_matrix(&mut rng, 4);
        let whole = expm(&a);
        let half = expm(&(&a * C64::new(0.5, 0.0)));
        assert!(max_abs_diff(&whole, &(&half * &half)) < 1e-12 * whole.norm());
    }

    #[test]
    fn vec_unvec_roundtrip_and_convention() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let d = 3;
        let rho = random_matrix(&mut rng, d);
        assert!(max_abs_diff(&unvec(&vec_col_stack(&rho), d), &rho) < 1e-16);
        // vec(AρB) = (Bᵀ ⊗ A) vec(ρ)
        let a = random_matrix(&mut rng, d);
        let b = random_matrix(&mut rng, d);
        let lhs = vec_col_stack(&(&a * &rho * &b));
        let rhs = b.transpose().kronecker(&a) * vec_col_stack(&rho);
        assert!((lhs - rhs).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-12);
    }
}
