//! Simulation and analysis kernel for NV-ensemble NMR sensing protocols.
//!
//! The crate is organized bottom-up:
//!
//! - [`spin`] — exact dense linear algebra for coupled spin-1/2 systems
//!   (operators, pulses, piecewise-constant unitary evolution).
//! - [`noise`] — Ornstein–Uhlenbeck dephasing noise with exact discretization
//!   and the closed-form relations tying (σ, τ_c) to diffusion and coherence
//!   times.
//! - [`molecule`] — molecule descriptions (chemical-shift groups, J
//!   couplings, passive spins), rotating-frame Hamiltonian assembly and the
//!   dressed-frame frequency formulas.
//! - [`protocol`] — executable pulse sequences: FID, continuous spin locking
//!   and the amplitude-encoding protocol family (free / continuous / robust
//!   encoding) with the NV readout models.
//! - [`ensemble`] — deterministic parallel Monte Carlo averaging.
//! - [`analysis`] — FFT spectra, dressed-axis mapping, Lorentzian and
//!   exponential fits, and the closed-form sensitivity calculus.
//!
//! All frequencies are stored internally in angular units (rad/s); every
//! external interface speaks ordinary frequency (Hz) with the ×2π conversion
//! applied at the boundary.

pub mod analysis;
pub mod ensemble;
pub mod molecule;
pub mod noise;
pub mod protocol;
pub mod spin;
