//! Exact linear-algebra kernel for systems of coupled spin-1/2 nuclei.
//!
//! Conventions (used consistently everywhere):
//!
//! - States evolve under `exp(−i·H·t)`; a rotation by angle θ about a
//!   Hermitian axis operator A is `exp(−i·θ·A)`. With this sign a π/2 pulse
//!   about x maps +z magnetization onto −y.
//! - Spin operators have eigenvalues ±1/2 (ħ = 1).
//! - Hamiltonians are built in angular units (rad/s).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Largest supported number of simulated spins (dense dim 2^12 = 4096).
pub const MAX_SPINS: usize = 12;

/// Allowed deviation of a state vector from unit norm.
pub const NORM_TOL: f64 = 1e-10;

/// Allowed relative Frobenius-norm deviation of a Hamiltonian from Hermiticity.
pub const HERMITICITY_TOL: f64 = 1e-12;

pub type Operator = DMatrix<Complex64>;

#[derive(Debug, Error)]
pub enum SpinError {
    #[error("spin count {0} outside supported range 1..={MAX_SPINS}")]
    SpinCount(usize),
    #[error("spin index {index} out of range for {n_spins} spins")]
    IndexRange { index: usize, n_spins: usize },
    #[error("dimension mismatch: state dim {state}, operator dim {op}")]
    DimMismatch { state: usize, op: usize },
    #[error("state norm deviates from 1 by {0:.3e}")]
    NotNormalized(f64),
    #[error("operator is not Hermitian (relative deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("step size must be positive, got {0}")]
    InvalidStep(f64),
}

/// Role tag carried per simulated spin, linking it back to the molecule
/// description it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinRole {
    /// Member of a target (detected) chemical-shift group.
    Target { group: usize },
    /// Passive coupling partner simulated explicitly.
    Passive { id: usize },
}

/// A register of spin-1/2 particles with role labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpinSystem {
    roles: Vec<SpinRole>,
}

impl SpinSystem {
    pub fn new(roles: Vec<SpinRole>) -> Result<Self, SpinError> {
        if roles.is_empty() || roles.len() > MAX_SPINS {
            return Err(SpinError::SpinCount(roles.len()));
        }
        Ok(Self { roles })
    }

    /// System of `n` target spins all tagged with group 0.
    pub fn targets(n: usize) -> Result<Self, SpinError> {
        Self::new(vec![SpinRole::Target { group: 0 }; n])
    }

    pub fn n_spins(&self) -> usize {
        self.roles.len()
    }

    pub fn dim(&self) -> usize {
        1 << self.roles.len()
    }

    pub fn roles(&self) -> &[SpinRole] {
        &self.roles
    }
}

/// Cartesian spin-operator axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

fn single_spin_half(axis: Axis) -> Operator {
    let z = Complex64::ZERO;
    let h = Complex64::new(0.5, 0.0);
    let ih = Complex64::new(0.0, 0.5);
    match axis {
        Axis::X => Operator::from_row_slice(2, 2, &[z, h, h, z]),
        Axis::Y => Operator::from_row_slice(2, 2, &[z, -ih, ih, z]),
        Axis::Z => Operator::from_row_slice(2, 2, &[h, z, z, -h]),
    }
}

/// Single-spin in-plane operator `I_φ = cos φ·I_x − sin φ·I_y`
/// (matrix `(1/2)[[0, e^{iφ}], [e^{−iφ}, 0]]`).
fn single_spin_phase(phi: f64) -> Operator {
    let z = Complex64::ZERO;
    let upper = Complex64::from_polar(0.5, phi);
    Operator::from_row_slice(2, 2, &[z, upper, upper.conj(), z])
}

fn embed_single(system: &SpinSystem, index: usize, local: &Operator) -> Result<Operator, SpinError> {
    let n = system.n_spins();
    if index >= n {
        return Err(SpinError::IndexRange { index, n_spins: n });
    }
    // Spin 0 occupies the most significant qubit: basis index b has the state
    // of spin s in bit (n-1-s), so the embedding is 1_{2^index} ⊗ local ⊗ 1_rest.
    let left = Operator::identity(1 << index, 1 << index);
    let right_dim = 1 << (n - index - 1);
    let right = Operator::identity(right_dim, right_dim);
    Ok(left.kronecker(local).kronecker(&right))
}

/// Spin operator `I_axis` of one spin embedded in the full product space.
pub fn spin_operator(system: &SpinSystem, index: usize, axis: Axis) -> Result<Operator, SpinError> {
    embed_single(system, index, &single_spin_half(axis))
}

/// In-plane spin operator `I_φ = cos φ·I_x − sin φ·I_y` of one spin embedded
/// in the full product space. φ = 0 is x; φ = π/2 is −y.
pub fn phase_operator(system: &SpinSystem, index: usize, phi: f64) -> Result<Operator, SpinError> {
    embed_single(system, index, &single_spin_phase(phi))
}

/// Sum of `I_axis` over every spin in the system.
pub fn collective_operator(system: &SpinSystem, axis: Axis) -> Result<Operator, SpinError> {
    let mut total = Operator::zeros(system.dim(), system.dim());
    for i in 0..system.n_spins() {
        total += spin_operator(system, i, axis)?;
    }
    Ok(total)
}

/// Sum of `I_φ` over every spin in the system.
pub fn collective_phase_operator(system: &SpinSystem, phi: f64) -> Result<Operator, SpinError> {
    let mut total = Operator::zeros(system.dim(), system.dim());
    for i in 0..system.n_spins() {
        total += phase_operator(system, i, phi)?;
    }
    Ok(total)
}

fn hermiticity_deviation(op: &Operator) -> f64 {
    let norm = op.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (op - op.adjoint()).norm() / norm
}

fn check_hermitian(op: &Operator) -> Result<(), SpinError> {
    let dev = hermiticity_deviation(op);
    if dev > HERMITICITY_TOL {
        return Err(SpinError::NotHermitian(dev));
    }
    Ok(())
}

/// Normalized pure state of a spin register.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amps: DVector<Complex64>,
}

impl PureState {
    pub fn new(amps: DVector<Complex64>) -> Result<Self, SpinError> {
        let norm = amps.norm();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(SpinError::NotNormalized((norm - 1.0).abs()));
        }
        Ok(Self { amps })
    }

    /// Fully polarized state |↑…↑⟩ (every spin in the +1/2 eigenstate of I_z).
    pub fn polarized(system: &SpinSystem) -> Self {
        let mut amps = DVector::zeros(system.dim());
        amps[0] = Complex64::ONE;
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }
}

/// Expectation value ⟨ψ|op|ψ⟩ of a Hermitian operator (real part; the
/// imaginary part is a roundoff residue and is discarded).
pub fn expectation(state: &PureState, op: &Operator) -> Result<f64, SpinError> {
    if op.nrows() != state.dim() {
        return Err(SpinError::DimMismatch {
            state: state.dim(),
            op: op.nrows(),
        });
    }
    check_hermitian(op)?;
    let v = op * state.amplitudes();
    Ok(state.amplitudes().dotc(&v).re)
}

/// Unitary propagator `exp(−i·H·t)` of a Hermitian generator, computed by
/// eigendecomposition (exact for constant H).
pub fn propagator(h: &Operator, t: f64) -> Operator {
    let dim = h.nrows();
    let eig = h.clone().symmetric_eigen();
    let mut u = Operator::zeros(dim, dim);
    // U = V·diag(e^{−iλt})·V†, accumulated column-by-column to avoid forming
    // the diagonal matrix.
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, -lambda * t);
        let col = eig.eigenvectors.column(k);
        for i in 0..dim {
            let ci = col[i] * phase;
            for j in 0..dim {
                u[(i, j)] += ci * col[j].conj();
            }
        }
    }
    u
}

/// Rotation `exp(−i·angle·axis_operator)|ψ⟩`.
pub fn rotate(state: &PureState, axis_operator: &Operator, angle: f64) -> Result<PureState, SpinError> {
    if axis_operator.nrows() != state.dim() {
        return Err(SpinError::DimMismatch {
            state: state.dim(),
            op: axis_operator.nrows(),
        });
    }
    check_hermitian(axis_operator)?;
    let u = propagator(axis_operator, angle);
    let amps = &u * state.amplitudes();
    PureState::new(amps)
}

/// Piecewise-constant unitary evolution from `t0` to `t1` with step `dt`.
///
/// Within each step the Hamiltonian is sampled at the step midpoint and
/// treated as constant; the final partial step is shortened to land exactly
/// on `t1`. Each step applies the exact propagator of the sampled generator,
/// so the only discretization error is the midpoint sampling itself.
pub fn evolve_piecewise<F>(
    state: &PureState,
    mut hamiltonian_at: F,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<PureState, SpinError>
where
    F: FnMut(f64) -> Operator,
{
    if dt <= 0.0 {
        return Err(SpinError::InvalidStep(dt));
    }
    let mut amps = state.amplitudes().clone();
    let mut t = t0;
    // Guard against a sliver step produced by accumulated roundoff.
    let eps = dt * 1e-12;
    while t < t1 - eps {
        let h = (t1 - t).min(dt);
        let ham = hamiltonian_at(t + 0.5 * h);
        if ham.nrows() != amps.len() {
            return Err(SpinError::DimMismatch {
                state: amps.len(),
                op: ham.nrows(),
            });
        }
        check_hermitian(&ham)?;
        let u = propagator(&ham, h);
        amps = &u * amps;
        t += h;
    }
    PureState::new(amps)
}
