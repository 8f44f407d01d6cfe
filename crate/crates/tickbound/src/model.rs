//! Clock builders: exponential decay, the thermal-machine ladder family, a
//! seeded random ensemble, and JSON model documents.

use crate::engine::{ClockModel, ModelError};
use crate::linalg::{
    hermitian_eigenvalues, symmetrize, C64, CMatrix, CVector, DensityMatrix, ONE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_SCHEMA_VERSION: &str = "tickbound-model/1";

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("{name} must be a non-negative inverse temperature, got {value}")]
    BadBeta { name: &'static str, value: f64 },
    #[error("{name} diverges at infinite temperature (beta = 0)")]
    InfiniteOccupation { name: &'static str },
    #[error("hot bath must be hotter: beta_h {beta_h} is not below beta_c {beta_c}")]
    BathOrder { beta_c: f64, beta_h: f64 },
    #[error("ladder needs at least 2 levels, got {d}")]
    LadderTooShort { d: usize },
    #[error("dim range {lo}..={hi} is empty or below 2")]
    BadDimRange { lo: usize, hi: usize },
    #[error("max_jumps must be at least 1")]
    NoJumpBudget,
    #[error("no tick-reachable initial state found after {tries} resamples")]
    EnsembleRejection { tries: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Two-level decay clock: single jump √Γ|0⟩⟨1| from the excited state.
pub fn build_exponential_clock(gamma: f64) -> Result<ClockModel, BuildError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(BuildError::NonPositiveParam { name: "gamma", value: gamma });
    }
    let mut jump = CMatrix::zeros(2, 2);
    jump[(0, 1)] = C64::new(gamma.sqrt(), 0.0);
    let mut initial = CMatrix::zeros(2, 2);
    initial[(1, 1)] = ONE;
    Ok(ClockModel::new(
        CMatrix::zeros(2, 2),
        vec![],
        vec![jump],
        DensityMatrix::new(initial).map_err(ModelError::from)?,
    )?)
}

/// Parameters of the two-qubit thermal machine driving a d-level ladder.
/// Defaults are resonant (ω_h = ω_c + ω_l) with couplings strong enough to
/// keep simulations short while the dimension trend stays clearly visible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LadderParams {
    pub d: usize,
    pub omega_c: f64,
    pub omega_h: f64,
    pub omega_l: f64,
    pub g: f64,
    pub gamma_c: f64,
    pub gamma_h: f64,
    pub beta_c: f64,
    pub beta_h: f64,
    pub gamma_tick: f64,
}

impl Default for LadderParams {
    fn default() -> Self {
        Self {
            d: 2,
            omega_c: 1.0,
            omega_h: 2.0,
            omega_l: 1.0,
            g: 0.5,
            gamma_c: 1.0,
            gamma_h: 1.0,
            beta_c: 10.0,
            beta_h: 0.1,
            gamma_tick: 1.0,
        }
    }
}

impl LadderParams {
    /// |ω_C + ω_L − ω_H|; the machine only pumps efficiently on resonance.
    pub fn resonance_mismatch(&self) -> f64 {
        (self.omega_c + self.omega_l - self.omega_h).abs()
    }

    fn validate(&self) -> Result<(), BuildError> {
        if self.d < 2 {
            return Err(BuildError::LadderTooShort { d: self.d });
        }
        for (name, value) in [
            ("omega_c", self.omega_c),
            ("omega_h", self.omega_h),
            ("omega_l", self.omega_l),
            ("g", self.g),
            ("gamma_c", self.gamma_c),
            ("gamma_h", self.gamma_h),
            ("gamma_tick", self.gamma_tick),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(BuildError::NonPositiveParam { name, value });
            }
        }
        for (name, value) in [("beta_c", self.beta_c), ("beta_h", self.beta_h)] {
            if value.is_nan() || value < 0.0 {
                return Err(BuildError::BadBeta { name, value });
            }
        }
        if !(self.beta_h < self.beta_c) {
            return Err(BuildError::BathOrder { beta_c: self.beta_c, beta_h: self.beta_h });
        }
        Ok(())
    }
}

/// Bose-Einstein occupation 1/(e^{βω}−1); β = ∞ short-circuits to 0.
pub fn thermal_occupation(beta: f64, omega: f64) -> Result<f64, BuildError> {
    if beta.is_infinite() {
        return Ok(0.0);
    }
    let x = beta * omega;
    if x <= 0.0 {
        return Err(BuildError::InfiniteOccupation { name: "thermal occupation" });
    }
    Ok(1.0 / x.exp_m1())
}

fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

/// Thermal qubit state for splitting ω at inverse temperature β, expressed
/// through the occupation n: p₁/p₀ = n/(1+n) = e^{−βω}.
fn thermal_qubit(n: f64) -> CMatrix {
    let p1 = n / (1.0 + 2.0 * n);
    CMatrix::from_diagonal(&CVector::from_vec(vec![
        C64::new(1.0 - p1, 0.0),
        C64::new(p1, 0.0),
    ]))
}

/// Cold qubit ⊗ hot qubit ⊗ d-level ladder. The machine swaps a hot
/// excitation into a cold one while raising the ladder a rung; the tick
/// drains the top rung back to the bottom.
pub fn build_ladder_clock(params: &LadderParams) -> Result<ClockModel, BuildError> {
    params.validate()?;
    let d = params.d;
    let n_c = thermal_occupation(params.beta_c, params.omega_c)
        .map_err(|_| BuildError::InfiniteOccupation { name: "n_c" })?;
    let n_h = thermal_occupation(params.beta_h, params.omega_h)
        .map_err(|_| BuildError::InfiniteOccupation { name: "n_h" })?;

    let qubit_number = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(0.0, 0.0), ONE]));
    let ladder_number = CMatrix::from_diagonal(&CVector::from_fn(d, |n, _| C64::new(n as f64, 0.0)));
    let i2 = identity(2);
    let i_l = identity(d);

    let mut h = qubit_number.kronecker(&i2).kronecker(&i_l) * C64::new(params.omega_c, 0.0);
    h += i2.kronecker(&qubit_number).kronecker(&i_l) * C64::new(params.omega_h, 0.0);
    h += i2.kronecker(&i2).kronecker(&ladder_number) * C64::new(params.omega_l, 0.0);

    // g Σ_{n≤d−2} |1 0, n+1⟩⟨0 1, n| + h.c.; the printed upper limit would
    // index past the top rung, so the sum stops at d−2.
    let dim = 4 * d;
    let idx = |c: usize, qh: usize, n: usize| (c * 2 + qh) * d + n;
    let mut h_int = CMatrix::zeros(dim, dim);
    for n in 0..=d - 2 {
        h_int[(idx(1, 0, n + 1), idx(0, 1, n))] = C64::new(params.g, 0.0);
    }
    let h_int = &h_int + h_int.adjoint();
    h += &h_int;

    let raise = {
        let mut m = CMatrix::zeros(2, 2);
        m[(1, 0)] = ONE;
        m
    };
    let lower = raise.adjoint();

    let mut notick = Vec::new();
    let mut push_qubit_op = |op2: &CMatrix, cold: bool, rate: f64| {
        if rate > 0.0 {
            let full = if cold {
                op2.kronecker(&i2).kronecker(&i_l)
            } else {
                i2.kronecker(op2).kronecker(&i_l)
            };
            notick.push(full * C64::new(rate.sqrt(), 0.0));
        }
    };
    push_qubit_op(&raise, true, n_c * params.gamma_c);
    push_qubit_op(&lower, true, (1.0 + n_c) * params.gamma_c);
    push_qubit_op(&raise, false, n_h * params.gamma_h);
    push_qubit_op(&lower, false, (1.0 + n_h) * params.gamma_h);

    let mut drop_top = CMatrix::zeros(d, d);
    drop_top[(0, d - 1)] = ONE;
    let tick = i2.kronecker(&i2).kronecker(&drop_top) * C64::new(params.gamma_tick.sqrt(), 0.0);

    let mut ladder_ground = CMatrix::zeros(d, d);
    ladder_ground[(0, 0)] = ONE;
    let initial = thermal_qubit(n_c).kronecker(&thermal_qubit(n_h)).kronecker(&ladder_ground);

    Ok(ClockModel::new(
        h,
        notick,
        vec![tick],
        DensityMatrix::new(initial).map_err(ModelError::from)?,
    )?)
}

fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_complex_matrix(rng: &mut impl Rng, d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |_, _| C64::new(gauss(rng), gauss(rng)))
}

fn spectral_norm_hermitian(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).iter().fold(0.0f64, |acc, &l| acc.max(l.abs()))
}

/// Scale `op` so the largest eigenvalue of op†op equals `rate`.
fn scale_to_rate(op: &CMatrix, rate: f64) -> CMatrix {
    let current = spectral_norm_hermitian(&(op.adjoint() * op));
    op * C64::new((rate / current).sqrt(), 0.0)
}

/// Taylor-coefficient reachability: some derivative of tr(Vρ(t)) at t = 0
/// must be nonzero, otherwise the initial state can never tick.
fn can_ever_tick(model: &ClockModel) -> bool {
    let v = model.tick_operator().matrix();
    let mut k = model.initial_state().matrix().clone();
    let orders = 2 * model.dim() * model.dim();
    for _ in 0..=orders {
        if (v * &k).trace().norm() > 1e-8 {
            return true;
        }
        k = crate::linalg::apply_generator(
            model.hamiltonian(),
            model.notick_lindblad_ops(),
            model.tick_operator(),
            &k,
        );
        let norm = k.norm();
        if norm == 0.0 {
            return false;
        }
        k /= C64::new(norm, 0.0);
    }
    false
}

/// Seeded random clock: Gaussian Hermitian H with spectral norm in
/// [0.05, 10]·Γ, Gaussian ops with rates log-uniform in [0.01, 10], random
/// pure initial state resampled until a tick is reachable.
pub fn build_random_clock(
    seed: u64,
    dim_range: (usize, usize),
    max_notick_ops: usize,
    max_jumps: usize,
) -> Result<ClockModel, BuildError> {
    let (lo, hi) = dim_range;
    if lo < 2 || hi < lo {
        return Err(BuildError::BadDimRange { lo, hi });
    }
    if max_jumps == 0 {
        return Err(BuildError::NoJumpBudget);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d = rng.gen_range(lo..=hi);
    let n_notick = rng.gen_range(0..=max_notick_ops);
    let n_jumps = rng.gen_range(1..=max_jumps);

    let log_rate = |rng: &mut ChaCha12Rng| 10.0f64.powf(rng.gen_range(-2.0..1.0));
    let notick: Vec<CMatrix> = (0..n_notick)
        .map(|_| {
            let rate = log_rate(&mut rng);
            scale_to_rate(&random_complex_matrix(&mut rng, d), rate)
        })
        .collect();
    let jumps: Vec<CMatrix> = (0..n_jumps)
        .map(|_| {
            let rate = log_rate(&mut rng);
            scale_to_rate(&random_complex_matrix(&mut rng, d), rate)
        })
        .collect();

    let v = crate::linalg::build_tick_operator(&jumps).map_err(ModelError::from)?;
    let gamma = crate::linalg::hermitian_max_eigenvalue(&v);
    let h_norm = gamma * 10.0f64.powf(rng.gen_range(-1.3..1.0));
    let h_raw = symmetrize(&random_complex_matrix(&mut rng, d));
    let h = &h_raw * C64::new(h_norm / spectral_norm_hermitian(&h_raw), 0.0);

    const MAX_TRIES: usize = 100;
    for _ in 0..MAX_TRIES {
        let psi = CVector::from_fn(d, |_, _| C64::new(gauss(&mut rng), gauss(&mut rng)));
        let norm = psi.norm();
        if norm == 0.0 {
            continue;
        }
        let psi = psi / C64::new(norm, 0.0);
        let rho = CMatrix::from_fn(d, d, |i, j| psi[i] * psi[j].conj());
        let initial = DensityMatrix::new(symmetrize(&rho)).map_err(ModelError::from)?;
        let model = ClockModel::new(h.clone(), notick.clone(), jumps.clone(), initial)?;
        if can_ever_tick(&model) {
            return Ok(model);
        }
    }
    Err(BuildError::EnsembleRejection { tries: MAX_TRIES })
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("unsupported schema version {found:?}, expected {MODEL_SCHEMA_VERSION:?}")]
    SchemaVersionUnsupported { found: String },
    #[error("{name} is {got_rows}x{got_cols}, expected {dim}x{dim}")]
    BadShape { name: String, got_rows: usize, got_cols: usize, dim: usize },
    #[error("{name} entry ({row},{col}) is not finite")]
    NonFiniteEntry { name: String, row: usize, col: usize },
    #[error(
        "hamiltonian entries ({row},{col}) and ({col},{row}) are not conjugate partners \
         (deviation {deviation:.3e})"
    )]
    NonHermitianEntry { row: usize, col: usize, deviation: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

type ComplexEntry = [f64; 2];
type MatrixRows = Vec<Vec<ComplexEntry>>;

/// On-disk clock description: row-major matrices of [re, im] pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub schema_version: String,
    pub dim: usize,
    pub hamiltonian: MatrixRows,
    pub notick_lindblad_ops: Vec<MatrixRows>,
    pub tick_jumps: Vec<MatrixRows>,
    pub initial_state: MatrixRows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<ModelMetadata>,
}

fn matrix_to_rows(m: &CMatrix) -> MatrixRows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn rows_to_matrix(name: &str, rows: &MatrixRows, dim: usize) -> Result<CMatrix, ParseError> {
    let bad_shape = |r: usize, c: usize| ParseError::BadShape {
        name: name.to_string(),
        got_rows: r,
        got_cols: c,
        dim,
    };
    if rows.len() != dim {
        return Err(bad_shape(rows.len(), rows.first().map_or(0, Vec::len)));
    }
    let mut m = CMatrix::zeros(dim, dim);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(bad_shape(rows.len(), row.len()));
        }
        for (j, &[re, im]) in row.iter().enumerate() {
            if !(re.is_finite() && im.is_finite()) {
                return Err(ParseError::NonFiniteEntry {
                    name: name.to_string(),
                    row: i,
                    col: j,
                });
            }
            m[(i, j)] = C64::new(re, im);
        }
    }
    Ok(m)
}

pub fn serialize_model(model: &ClockModel) -> ModelDocument {
    ModelDocument {
        schema_version: MODEL_SCHEMA_VERSION.to_string(),
        dim: model.dim(),
        hamiltonian: matrix_to_rows(model.hamiltonian()),
        notick_lindblad_ops: model.notick_lindblad_ops().iter().map(matrix_to_rows).collect(),
        tick_jumps: model.tick_jumps().iter().map(matrix_to_rows).collect(),
        initial_state: matrix_to_rows(model.initial_state().matrix()),
        metadata: None,
    }
}

pub fn parse_model(doc: &ModelDocument) -> Result<ClockModel, ParseError> {
    if doc.schema_version != MODEL_SCHEMA_VERSION {
        return Err(ParseError::SchemaVersionUnsupported { found: doc.schema_version.clone() });
    }
    let dim = doc.dim;
    let h = rows_to_matrix("hamiltonian", &doc.hamiltonian, dim)?;
    // report the worst conjugate-pair mismatch by position, not just by size
    let mut worst = (0usize, 0usize, 0.0f64);
    for i in 0..dim {
        for j in i..dim {
            let dev = (h[(i, j)] - h[(j, i)].conj()).norm();
            if dev > worst.2 {
                worst = (i, j, dev);
            }
        }
    }
    if worst.2 > crate::linalg::TOL_HERM {
        return Err(ParseError::NonHermitianEntry {
            row: worst.0,
            col: worst.1,
            deviation: worst.2,
        });
    }
    let notick = doc
        .notick_lindblad_ops
        .iter()
        .enumerate()
        .map(|(k, rows)| rows_to_matrix(&format!("notick_lindblad_ops[{k}]"), rows, dim))
        .collect::<Result<Vec<_>, _>>()?;
    let jumps = doc
        .tick_jumps
        .iter()
        .enumerate()
        .map(|(k, rows)| rows_to_matrix(&format!("tick_jumps[{k}]"), rows, dim))
        .collect::<Result<Vec<_>, _>>()?;
    let initial = rows_to_matrix("initial_state", &doc.initial_state, dim)?;
    let initial = DensityMatrix::new(initial).map_err(ModelError::from)?;
    Ok(ClockModel::new(h, notick, jumps, initial)?)
}
