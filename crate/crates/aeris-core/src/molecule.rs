//! Molecule descriptions and the rotating-frame Hamiltonian, plus every
//! closed-form frequency formula of the dressed (weakly driven) frame.
//!
//! A molecule is a set of chemically degenerate spin groups (population n_k,
//! shift δ_k in ppm), a symmetric group-to-group homonuclear J matrix, and
//! optional spin-1/2 passive partners coupled through secular heteronuclear
//! J terms.

use crate::spin::{self, Axis, Operator, SpinError, SpinRole, SpinSystem, MAX_SPINS};
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MoleculeError {
    #[error("molecule must contain at least one spin group")]
    NoGroups,
    #[error("group {0} has population 0")]
    EmptyGroup(usize),
    #[error("homonuclear J matrix must be {expected}×{expected}, got {rows}×{cols}")]
    JMatrixShape { expected: usize, rows: usize, cols: usize },
    #[error("homonuclear J matrix asymmetric at ({i},{j}): {a} vs {b} Hz")]
    JMatrixAsymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("passive spin {0}: only spin-1/2 passives are supported, got s = {1}")]
    UnsupportedPassiveSpin(usize, f64),
    #[error("passive spin {index}: expected {expected} per-group couplings, got {got}")]
    PassiveCouplingShape { index: usize, expected: usize, got: usize },
    #[error("field strength must be positive, got {0} T")]
    InvalidField(f64),
    #[error(
        "molecule needs {required} simulated spins, exceeding the budget of {MAX_SPINS}"
    )]
    SpinBudget { required: usize },
    #[error("passive state assignment has {got} entries for {expected} passives")]
    PassiveStateShape { expected: usize, got: usize },
    #[error(transparent)]
    Spin(#[from] SpinError),
}

/// A group of `count` chemically equivalent target spins at shift `delta_ppm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinGroup {
    pub count: usize,
    pub delta_ppm: f64,
}

/// A spin-1/2 passive nucleus with secular heteronuclear couplings
/// `j_het_hz[k]` to each target group k.
#[derive(Debug, Clone, PartialEq)]
pub struct PassiveSpin {
    pub spin: f64,
    pub j_het_hz: Vec<f64>,
}

impl PassiveSpin {
    pub fn spin_half(j_het_hz: Vec<f64>) -> Self {
        Self { spin: 0.5, j_het_hz }
    }
}

/// Static field and gyromagnetic reference fixing the ppm ↔ Hz conversion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    pub b0_tesla: f64,
    pub gamma_h_hz_per_tesla: f64,
}

/// Proton gyromagnetic ratio γ_H/2π.
pub const GAMMA_H_HZ_PER_TESLA: f64 = 42.577e6;

impl FieldConfig {
    pub fn new(b0_tesla: f64) -> Result<Self, MoleculeError> {
        if b0_tesla <= 0.0 {
            return Err(MoleculeError::InvalidField(b0_tesla));
        }
        Ok(Self {
            b0_tesla,
            gamma_h_hz_per_tesla: GAMMA_H_HZ_PER_TESLA,
        })
    }

    /// Hz per ppm at this field: γ_H/2π · B₀ · 1e-6.
    pub fn hz_per_ppm(&self) -> f64 {
        self.gamma_h_hz_per_tesla * self.b0_tesla * 1e-6
    }
}

/// Chemical shift in Hz: δ[ppm] · 1e-6 · γ_H/2π · B₀.
pub fn shift_hz(delta_ppm: f64, field: &FieldConfig) -> f64 {
    delta_ppm * field.hz_per_ppm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub name: String,
    pub groups: Vec<SpinGroup>,
    /// Symmetric group-to-group homonuclear couplings (Hz); the diagonal is
    /// ignored (intra-group couplings are unobservable for magnetically
    /// equivalent nuclei) and stored as zero.
    pub j_hom_hz: Vec<Vec<f64>>,
    pub passives: Vec<PassiveSpin>,
}

impl Molecule {
    pub fn new(
        name: impl Into<String>,
        groups: Vec<SpinGroup>,
        j_hom_hz: Vec<Vec<f64>>,
        passives: Vec<PassiveSpin>,
    ) -> Result<Self, MoleculeError> {
        if groups.is_empty() {
            return Err(MoleculeError::NoGroups);
        }
        for (k, g) in groups.iter().enumerate() {
            if g.count == 0 {
                return Err(MoleculeError::EmptyGroup(k));
            }
        }
        let g = groups.len();
        let rows = j_hom_hz.len();
        let square = j_hom_hz.iter().all(|r| r.len() == g);
        if rows != g || !square {
            let cols = j_hom_hz.first().map_or(0, |r| r.len());
            return Err(MoleculeError::JMatrixShape { expected: g, rows, cols });
        }
        let mut j = j_hom_hz;
        for i in 0..g {
            j[i][i] = 0.0;
            for k in (i + 1)..g {
                if (j[i][k] - j[k][i]).abs() > 1e-12 {
                    return Err(MoleculeError::JMatrixAsymmetric {
                        i,
                        j: k,
                        a: j[i][k],
                        b: j[k][i],
                    });
                }
            }
        }
        for (idx, p) in passives.iter().enumerate() {
            if (p.spin - 0.5).abs() > 1e-12 {
                return Err(MoleculeError::UnsupportedPassiveSpin(idx, p.spin));
            }
            if p.j_het_hz.len() != g {
                return Err(MoleculeError::PassiveCouplingShape {
                    index: idx,
                    expected: g,
                    got: p.j_het_hz.len(),
                });
            }
        }
        let mol = Self {
            name: name.into(),
            groups,
            j_hom_hz: j,
            passives,
        };
        let required = mol.simulated_spin_count();
        if required > MAX_SPINS {
            return Err(MoleculeError::SpinBudget { required });
        }
        Ok(mol)
    }

    /// Two well-separated methyl groups, no resolvable J couplings.
    pub fn methyl_acetate() -> Self {
        Self::new(
            "methyl_acetate",
            vec![
                SpinGroup { count: 3, delta_ppm: 2.05 },
                SpinGroup { count: 3, delta_ppm: 3.662 },
            ],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![],
        )
        .expect("preset is valid")
    }

    /// Nine equivalent methyl protons coupled to one spin-1/2 phosphorus.
    pub fn trimethyl_phosphate() -> Self {
        Self::new(
            "trimethyl_phosphate",
            vec![SpinGroup { count: 9, delta_ppm: 3.799 }],
            vec![vec![0.0]],
            vec![PassiveSpin::spin_half(vec![11.0])],
        )
        .expect("preset is valid")
    }

    /// Ethyl system: CH₃ and CH₂ groups with an inter-group J coupling.
    pub fn chloroethane() -> Self {
        Self::new(
            "chloroethane",
            vec![
                SpinGroup { count: 3, delta_ppm: 1.488 },
                SpinGroup { count: 2, delta_ppm: 3.505 },
            ],
            vec![vec![0.0, 7.232], vec![7.232, 0.0]],
            vec![],
        )
        .expect("preset is valid")
    }

    /// Look up a built-in molecule by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "methyl_acetate" => Some(Self::methyl_acetate()),
            "trimethyl_phosphate" => Some(Self::trimethyl_phosphate()),
            "chloroethane" => Some(Self::chloroethane()),
            _ => None,
        }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// True when any inter-group homonuclear coupling is nonzero, forcing the
    /// full product-space simulation.
    pub fn requires_product_space(&self) -> bool {
        let g = self.n_groups();
        (0..g).any(|i| ((i + 1)..g).any(|j| self.j_hom_hz[i][j] != 0.0))
    }

    /// Number of spins the simulation register holds: one per group when all
    /// groups are mutually uncoupled (each weighted by its population at
    /// readout), one per physical nucleus otherwise.
    pub fn simulated_spin_count(&self) -> usize {
        if self.requires_product_space() {
            self.groups.iter().map(|g| g.count).sum()
        } else {
            self.n_groups()
        }
    }

    /// The spin register this molecule simulates on. Passive spins are not
    /// part of the register; they enter as classical branch assignments.
    pub fn spin_system(&self) -> Result<SpinSystem, MoleculeError> {
        let mut roles = Vec::new();
        if self.requires_product_space() {
            for (k, g) in self.groups.iter().enumerate() {
                roles.extend(std::iter::repeat(SpinRole::Target { group: k }).take(g.count));
            }
        } else {
            for k in 0..self.n_groups() {
                roles.push(SpinRole::Target { group: k });
            }
        }
        Ok(SpinSystem::new(roles)?)
    }

    /// Readout weight of each register spin: the group population for the
    /// reduced (one-spin-per-group) register, 1 for product-space registers
    /// (where populations are explicit).
    pub fn spin_weights(&self) -> Vec<f64> {
        if self.requires_product_space() {
            self.groups.iter().flat_map(|g| vec![1.0; g.count]).collect()
        } else {
            self.groups.iter().map(|g| g.count as f64).collect()
        }
    }

    /// All classical passive-spin branches: each branch assigns m_s = ±1/2 to
    /// every passive and carries thermal weight 1/2^P.
    pub fn passive_branches(&self) -> Vec<PassiveBranch> {
        let p = self.passives.len();
        let n = 1usize << p;
        let weight = 1.0 / n as f64;
        (0..n)
            .map(|bits| PassiveBranch {
                weight,
                m_s: (0..p)
                    .map(|i| if bits >> i & 1 == 0 { 0.5 } else { -0.5 })
                    .collect(),
            })
            .collect()
    }

    /// Effective shift (Hz) of group `k` in a passive branch:
    /// δ_k + Σ_p m_s(p)·J_het(p,k).
    pub fn effective_shift_hz(
        &self,
        k: usize,
        field: &FieldConfig,
        branch: &PassiveBranch,
    ) -> f64 {
        let mut delta = shift_hz(self.groups[k].delta_ppm, field);
        for (p, ms) in branch.m_s.iter().enumerate() {
            delta += ms * self.passives[p].j_het_hz[k];
        }
        delta
    }
}

/// One classical assignment of every passive spin's m_s value.
#[derive(Debug, Clone, PartialEq)]
pub struct PassiveBranch {
    pub weight: f64,
    pub m_s: Vec<f64>,
}

impl PassiveBranch {
    /// Branch with no passives (weight 1) — valid for passive-free molecules.
    pub fn empty() -> Self {
        Self { weight: 1.0, m_s: Vec::new() }
    }
}

/// RF drive term of the rotating-frame Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Drive {
    Off,
    /// `omega1` in rad/s; the drive axis is I_φ = cos φ·I_x − sin φ·I_y and
    /// `eps` is the instantaneous relative amplitude error (Ω₁·(1+ε)).
    On { omega1: f64, phase: f64, eps: f64 },
}

/// Rotating-frame Hamiltonian (rad/s) over the molecule's spin register:
///
/// H = Σ_n [(2πδ_n^eff + ξ)·I_z⁽ⁿ⁾ + Ω₁(1+ε)·I_φ⁽ⁿ⁾]
///     + Σ_{n<m} 2π·J_nm·(I⃗⁽ⁿ⁾·I⃗⁽ᵐ⁾)
///
/// where δ_n^eff folds the classical passive branch into each group shift and
/// J_nm is the inter-group homonuclear coupling (zero within a group).
pub fn build_hamiltonian(
    mol: &Molecule,
    field: &FieldConfig,
    xi: f64,
    drive: Drive,
    branch: &PassiveBranch,
) -> Result<Operator, MoleculeError> {
    if branch.m_s.len() != mol.passives.len() {
        return Err(MoleculeError::PassiveStateShape {
            expected: mol.passives.len(),
            got: branch.m_s.len(),
        });
    }
    let system = mol.spin_system()?;
    let dim = system.dim();
    let mut h = Operator::zeros(dim, dim);

    for (idx, role) in system.roles().iter().enumerate() {
        let SpinRole::Target { group } = *role else {
            continue;
        };
        let omega_z = TAU * mol.effective_shift_hz(group, field, branch) + xi;
        h += spin::spin_operator(&system, idx, Axis::Z)? * num_complex::Complex64::from(omega_z);
        if let Drive::On { omega1, phase, eps } = drive {
            let amp = omega1 * (1.0 + eps);
            h += spin::phase_operator(&system, idx, phase)? * num_complex::Complex64::from(amp);
        }
    }

    if let Some(hj) = j_hamiltonian(mol)? {
        h += hj;
    }

    Ok(h)
}

/// Inter-group homonuclear coupling Hamiltonian Σ_{n<m} 2π·J_nm·(I⃗⁽ⁿ⁾·I⃗⁽ᵐ⁾)
/// over the molecule's register, or `None` when every group pair is uncoupled
/// (the register is then reduced and carries no coupling term at all).
///
/// The isotropic form commutes with every global rotation and with the
/// collective I_z dephasing term, which is what makes operator splitting
/// against the single-spin terms essentially exact.
pub fn j_hamiltonian(mol: &Molecule) -> Result<Option<Operator>, MoleculeError> {
    if !mol.requires_product_space() {
        return Ok(None);
    }
    let system = mol.spin_system()?;
    let dim = system.dim();
    let mut h = Operator::zeros(dim, dim);
    let roles = system.roles();
    for n in 0..roles.len() {
        for m in (n + 1)..roles.len() {
            let (SpinRole::Target { group: gn }, SpinRole::Target { group: gm }) =
                (roles[n], roles[m])
            else {
                continue;
            };
            if gn == gm {
                continue;
            }
            let j = mol.j_hom_hz[gn][gm];
            if j == 0.0 {
                continue;
            }
            let coupling = num_complex::Complex64::from(TAU * j);
            for axis in [Axis::X, Axis::Y, Axis::Z] {
                let a = spin::spin_operator(&system, n, axis)?;
                let b = spin::spin_operator(&system, m, axis)?;
                h += a * b * coupling;
            }
        }
    }
    Ok(Some(h))
}

/// Generalized (dressed) Rabi frequency Ω̄ = √(Ω₁² + δ²) in Hz.
pub fn generalized_rabi(delta_hz: f64, omega1_hz: f64) -> f64 {
    delta_hz.hypot(omega1_hz)
}

/// Exact reduced chemical shift δ̃ = Ω̄ − Ω₁ (Hz); |δ| in the Ω₁ → 0 limit.
///
/// Computed as δ²/(Ω̄ + Ω₁) to stay accurate when δ ≪ Ω₁.
pub fn reduced_shift(delta_hz: f64, omega1_hz: f64) -> f64 {
    delta_hz * delta_hz / (generalized_rabi(delta_hz, omega1_hz) + omega1_hz)
}

/// Leading-order reduced shift δ²/(2Ω₁) (Hz) — the first non-vanishing term
/// of the average-Hamiltonian expansion; also the rate of the second-order
/// effective rotation about the drive axis.
pub fn magnus_h2_coefficient(delta_hz: f64, omega1_hz: f64) -> f64 {
    delta_hz * delta_hz / (2.0 * omega1_hz)
}

/// Dressed Rabi frequency of a target group coupled to a passive spin in
/// state m_s: √(Ω₁² + (δ + m_s·J_het)²) in Hz.
pub fn het_effective_rabi(delta_hz: f64, j_het_hz: f64, m_s: f64, omega1_hz: f64) -> f64 {
    (delta_hz + m_s * j_het_hz).hypot(omega1_hz)
}

/// Residual z-axis precession rate δ³/(2Ω₁²) (Hz) under reverse-nutation
/// (robust) encoding, where the drive-axis rotation is echoed away and the
/// shift reappears as a third-order effect.
pub fn third_order_shift(delta_hz: f64, omega1_hz: f64) -> f64 {
    delta_hz * delta_hz * delta_hz / (2.0 * omega1_hz * omega1_hz)
}

/// Equivalent static field B̃₀ = (δ/2Ω₁)·B₀ (T) under which free evolution
/// would reproduce the driven spectrum — diagnostic for homonuclear spectra.
pub fn rescaled_field(delta_hz: f64, omega1_hz: f64, b0_tesla: f64) -> f64 {
    delta_hz / (2.0 * omega1_hz) * b0_tesla
}
