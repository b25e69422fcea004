//! Trajectory stepping engine.
//!
//! A register of uncoupled spins (possibly several classical passive
//! branches of it) is propagated by exact single-spin rotations; a J-coupled
//! register is propagated as a state vector with symmetric operator
//! splitting between the (exactly solvable) single-spin terms and the
//! isotropic coupling term. In both cases each step applies the exact
//! propagator of the Hamiltonian frozen at the step's noise values, so the
//! step size is limited by the noise correlation time, not by any drive or
//! shift period.

use super::ProtocolError;
use crate::ensemble::mix_seed;
use crate::molecule::{self, FieldConfig, Molecule, PassiveBranch};
use crate::noise::{DrivingNoiseParams, OuChain, OuParams};
use crate::spin::{self, Operator};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::f64::consts::TAU;

/// Sub-stream tags mixed into the trajectory seed so the dephasing and the
/// drive-amplitude noise chains are decorrelated but individually
/// reproducible.
const SEED_CHANNEL_XI: u64 = 0x517E_55CE_0D07_11AA;
const SEED_CHANNEL_EPS: u64 = 0x3F84_D5B5_B547_0917;

/// Drive settings for one stage. `omega1` is the bare amplitude in rad/s
/// (0 = free evolution); amplitude noise multiplies it by (1+ε) when enabled.
#[derive(Debug, Clone, Copy)]
pub(super) struct DriveSpec {
    pub omega1: f64,
    pub phase: f64,
    pub with_amplitude_noise: bool,
}

impl DriveSpec {
    pub fn free() -> Self {
        Self {
            omega1: 0.0,
            phase: 0.0,
            with_amplitude_noise: false,
        }
    }

    pub fn driven(omega1: f64, phase: f64, with_amplitude_noise: bool) -> Self {
        Self {
            omega1,
            phase,
            with_amplitude_noise,
        }
    }
}

/// When the per-step sampler fires.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum SampleTiming {
    /// After the step completes (state and wall clock at the step boundary).
    End,
    /// Halfway through the step, with the step's noise values held; used to
    /// sample the field seen by a demodulating readout.
    Midpoint,
}

struct RegisterSpin {
    group: usize,
    weight: f64,
}

enum BranchState {
    /// One magnetization vector (length 1/2) per register spin.
    Bloch(Vec<[f64; 3]>),
    /// Product-space amplitudes over the full register.
    Amps(Vec<Complex64>),
}

struct ProductSpace {
    h_j: Operator,
    /// Coupling propagators keyed by the step length's bit pattern.
    props: HashMap<u64, Operator>,
}

pub(super) struct Engine {
    register: Vec<RegisterSpin>,
    n_groups: usize,
    group_counts: Vec<f64>,
    branches: Vec<PassiveBranch>,
    /// Deterministic z-frequency (rad/s) of each register spin per branch.
    omega_z: Vec<Vec<f64>>,
    states: Vec<BranchState>,
    product: Option<ProductSpace>,
    xi: OuChain<ChaCha8Rng>,
    eps: Option<OuChain<ChaCha8Rng>>,
    /// Wall-clock time (s) advanced by every step.
    pub t: f64,
}

impl Engine {
    pub fn new(
        mol: &Molecule,
        field: &FieldConfig,
        noise: OuParams,
        drive_noise: Option<DrivingNoiseParams>,
        seed: u64,
    ) -> Result<Self, ProtocolError> {
        let system = mol.spin_system()?;
        let weights = mol.spin_weights();
        let register: Vec<RegisterSpin> = system
            .roles()
            .iter()
            .zip(&weights)
            .map(|(role, &weight)| {
                let spin::SpinRole::Target { group } = *role else {
                    unreachable!("molecule registers contain only target spins");
                };
                RegisterSpin { group, weight }
            })
            .collect();
        let n_groups = mol.n_groups();
        let group_counts = mol.groups.iter().map(|g| g.count as f64).collect();
        let branches = mol.passive_branches();
        let omega_z = branches
            .iter()
            .map(|br| {
                register
                    .iter()
                    .map(|s| TAU * mol.effective_shift_hz(s.group, field, br))
                    .collect()
            })
            .collect();

        let product = molecule::j_hamiltonian(mol)?.map(|h_j| ProductSpace {
            h_j,
            props: HashMap::new(),
        });
        let states = branches
            .iter()
            .map(|_| {
                if product.is_some() {
                    let mut amps = vec![Complex64::ZERO; system.dim()];
                    amps[0] = Complex64::ONE;
                    BranchState::Amps(amps)
                } else {
                    BranchState::Bloch(vec![[0.0, 0.0, 0.5]; register.len()])
                }
            })
            .collect();

        let xi = OuChain::stationary(
            noise,
            ChaCha8Rng::seed_from_u64(mix_seed(seed, SEED_CHANNEL_XI)),
        );
        let eps = drive_noise
            .map(|p| -> Result<_, ProtocolError> {
                Ok(OuChain::stationary(
                    OuParams::new(p.sigma_rel, p.tau_c)?,
                    ChaCha8Rng::seed_from_u64(mix_seed(seed, SEED_CHANNEL_EPS)),
                ))
            })
            .transpose()?;

        Ok(Self {
            register,
            n_groups,
            group_counts,
            branches,
            omega_z,
            states,
            product,
            xi,
            eps,
            t: 0.0,
        })
    }

    /// π/2 rotation of every register spin about the in-plane axis
    /// I_φ = cos φ·I_x − sin φ·I_y.
    pub fn trigger(&mut self, phase: f64) {
        let axis = [phase.cos(), -phase.sin(), 0.0];
        let u = su2(axis, std::f64::consts::FRAC_PI_2);
        let n_spins = self.register.len();
        for state in &mut self.states {
            match state {
                BranchState::Bloch(ms) => {
                    for m in ms {
                        rotate_bloch(m, axis, std::f64::consts::FRAC_PI_2);
                    }
                }
                BranchState::Amps(amps) => {
                    for s in 0..n_spins {
                        apply_single_qubit(amps, n_spins, s, u);
                    }
                }
            }
        }
    }

    /// Evolve for `duration` in `n_steps` equal steps under `drive`.
    ///
    /// Noise values are frozen over each step and the chains advance once per
    /// step, so each step applies the exact propagator of a constant
    /// Hamiltonian. With a J coupling the single-spin and coupling factors
    /// are interleaved symmetrically; the coupling commutes with global
    /// rotations and with collective dephasing, leaving only the (tiny)
    /// J × differential-shift commutator as splitting error.
    pub fn run_stage(
        &mut self,
        duration: f64,
        n_steps: usize,
        drive: DriveSpec,
        timing: SampleTiming,
        mut sample: Option<&mut dyn FnMut(f64, &Engine)>,
    ) -> Result<(), ProtocolError> {
        if duration <= 0.0 || !duration.is_finite() {
            return Err(ProtocolError::InvalidDuration(duration));
        }
        if n_steps == 0 {
            return Err(ProtocolError::InvalidStep(0.0));
        }
        let h = duration / n_steps as f64;

        let has_j = self.product.is_some();
        let merged = has_j && sample.is_none();
        let u_half = if has_j {
            Some(self.j_propagator(0.5 * h))
        } else {
            None
        };
        let u_full = if merged {
            Some(self.j_propagator(h))
        } else {
            None
        };

        if merged {
            // Leading coupling half-step; the trailing one closes the stage.
            self.apply_matrix_all(u_half.as_ref().unwrap());
        }
        for step in 0..n_steps {
            if merged {
                self.apply_rotations(h, &drive);
                let u = if step + 1 == n_steps {
                    u_half.as_ref()
                } else {
                    u_full.as_ref()
                };
                self.apply_matrix_all(u.unwrap());
                self.advance_clocks(h);
                continue;
            }

            match timing {
                SampleTiming::End => {
                    if let Some(u) = &u_half {
                        self.apply_matrix_all(u);
                    }
                    self.apply_rotations(h, &drive);
                    if let Some(u) = &u_half {
                        self.apply_matrix_all(u);
                    }
                    self.advance_clocks(h);
                    if let Some(cb) = sample.as_deref_mut() {
                        cb(self.t, self);
                    }
                }
                SampleTiming::Midpoint => {
                    if let Some(u) = &u_half {
                        self.apply_matrix_all(u);
                    }
                    self.apply_rotations(0.5 * h, &drive);
                    if let Some(cb) = sample.as_deref_mut() {
                        cb(self.t + 0.5 * h, self);
                    }
                    self.apply_rotations(0.5 * h, &drive);
                    if let Some(u) = &u_half {
                        self.apply_matrix_all(u);
                    }
                    self.advance_clocks(h);
                }
            }
        }
        Ok(())
    }

    /// Per-branch, per-group magnetization averaged per spin:
    /// `[branch][group] -> [⟨I_x⟩, ⟨I_y⟩, ⟨I_z⟩]` of one representative spin.
    pub fn branch_group_mags(&self) -> Vec<Vec<[f64; 3]>> {
        self.states
            .iter()
            .map(|state| {
                let mut mags = vec![[0.0; 3]; self.n_groups];
                match state {
                    BranchState::Bloch(ms) => {
                        for (spin, m) in self.register.iter().zip(ms) {
                            for a in 0..3 {
                                mags[spin.group][a] += spin.weight * m[a];
                            }
                        }
                    }
                    BranchState::Amps(amps) => {
                        let n_spins = self.register.len();
                        for (s, spin) in self.register.iter().enumerate() {
                            let m = single_spin_expectations(amps, n_spins, s);
                            for a in 0..3 {
                                mags[spin.group][a] += spin.weight * m[a];
                            }
                        }
                    }
                }
                for (g, mag) in mags.iter_mut().enumerate() {
                    for a in mag.iter_mut() {
                        *a /= self.group_counts[g];
                    }
                }
                mags
            })
            .collect()
    }

    /// Branch-weighted per-group magnetization (per-spin average).
    pub fn group_mags(&self) -> Vec<[f64; 3]> {
        let mut out = vec![[0.0; 3]; self.n_groups];
        for (branch, mags) in self.branches.iter().zip(self.branch_group_mags()) {
            for (g, m) in mags.iter().enumerate() {
                for a in 0..3 {
                    out[g][a] += branch.weight * m[a];
                }
            }
        }
        out
    }

    fn j_propagator(&mut self, dt: f64) -> Operator {
        let p = self.product.as_mut().expect("J propagator without coupling");
        p.props
            .entry(dt.to_bits())
            .or_insert_with(|| spin::propagator(&p.h_j, dt))
            .clone()
    }

    fn apply_matrix_all(&mut self, u: &Operator) {
        for state in &mut self.states {
            if let BranchState::Amps(amps) = state {
                apply_matrix(amps, u);
            }
        }
    }

    fn apply_rotations(&mut self, h: f64, drive: &DriveSpec) {
        let eps_val = if drive.with_amplitude_noise {
            self.eps.as_ref().map_or(0.0, |c| c.value())
        } else {
            0.0
        };
        let xi_val = self.xi.value();
        let amp = drive.omega1 * (1.0 + eps_val);
        let vx = amp * drive.phase.cos();
        let vy = -amp * drive.phase.sin();
        let n_spins = self.register.len();
        for (b, state) in self.states.iter_mut().enumerate() {
            match state {
                BranchState::Bloch(ms) => {
                    for (s, m) in ms.iter_mut().enumerate() {
                        let v = [vx, vy, self.omega_z[b][s] + xi_val];
                        let omega = vec_norm(v);
                        if omega == 0.0 {
                            continue;
                        }
                        let axis = [v[0] / omega, v[1] / omega, v[2] / omega];
                        rotate_bloch(m, axis, omega * h);
                    }
                }
                BranchState::Amps(amps) => {
                    for s in 0..n_spins {
                        let v = [vx, vy, self.omega_z[b][s] + xi_val];
                        let omega = vec_norm(v);
                        if omega == 0.0 {
                            continue;
                        }
                        let axis = [v[0] / omega, v[1] / omega, v[2] / omega];
                        apply_single_qubit(amps, n_spins, s, su2(axis, omega * h));
                    }
                }
            }
        }
    }

    fn advance_clocks(&mut self, h: f64) {
        self.xi.advance(h);
        if let Some(eps) = &mut self.eps {
            eps.advance(h);
        }
        self.t += h;
    }
}

fn vec_norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Right-handed rotation of `m` by `theta` about the unit axis `n`.
fn rotate_bloch(m: &mut [f64; 3], n: [f64; 3], theta: f64) {
    let c = theta.cos();
    let s = theta.sin();
    let dot = n[0] * m[0] + n[1] * m[1] + n[2] * m[2];
    let cross = [
        n[1] * m[2] - n[2] * m[1],
        n[2] * m[0] - n[0] * m[2],
        n[0] * m[1] - n[1] * m[0],
    ];
    for a in 0..3 {
        m[a] = m[a] * c + cross[a] * s + n[a] * dot * (1.0 - c);
    }
}

/// SU(2) rotation exp(−i·θ·(n̂·σ⃗)/2) as a row-major 2×2.
fn su2(n: [f64; 3], theta: f64) -> [Complex64; 4] {
    let c = (0.5 * theta).cos();
    let s = (0.5 * theta).sin();
    [
        Complex64::new(c, -s * n[2]),
        Complex64::new(-s * n[1], -s * n[0]),
        Complex64::new(s * n[1], -s * n[0]),
        Complex64::new(c, s * n[2]),
    ]
}

/// Apply a single-spin unitary to spin `s` of an `n_spins` register state
/// (spin 0 occupies the most significant bit).
fn apply_single_qubit(amps: &mut [Complex64], n_spins: usize, s: usize, u: [Complex64; 4]) {
    let mask = 1usize << (n_spins - 1 - s);
    for idx in 0..amps.len() {
        if idx & mask == 0 {
            let j = idx | mask;
            let a0 = amps[idx];
            let a1 = amps[j];
            amps[idx] = u[0] * a0 + u[1] * a1;
            amps[j] = u[2] * a0 + u[3] * a1;
        }
    }
}

fn apply_matrix(amps: &mut Vec<Complex64>, u: &Operator) {
    let dim = amps.len();
    let mut out = vec![Complex64::ZERO; dim];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = Complex64::ZERO;
        for (j, a) in amps.iter().enumerate() {
            acc += u[(i, j)] * a;
        }
        *o = acc;
    }
    *amps = out;
}

/// (⟨I_x⟩, ⟨I_y⟩, ⟨I_z⟩) of register spin `s` in a product state.
fn single_spin_expectations(amps: &[Complex64], n_spins: usize, s: usize) -> [f64; 3] {
    let mask = 1usize << (n_spins - 1 - s);
    let mut mx = 0.0;
    let mut my = 0.0;
    let mut mz = 0.0;
    for idx in 0..amps.len() {
        if idx & mask == 0 {
            let up = amps[idx];
            let down = amps[idx | mask];
            let z = up.conj() * down;
            mx += z.re;
            my += z.im;
            mz += 0.5 * (up.norm_sqr() - down.norm_sqr());
        }
    }
    [mx, my, mz]
}
