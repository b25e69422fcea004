//! Sensing protocols: free-induction decay, continuous spin locking, and the
//! repeated encode–measure sequences with weak nuclear driving.
//!
//! All public frequencies are in Hz; phases in radians. The encoding drive
//! axis is I_φ = cos φ·I_x − sin φ·I_y with φ₁ = π/2 by default, and the
//! measurement drive must be orthogonal to it in the rotating frame.

mod engine;

use crate::molecule::{FieldConfig, Molecule, MoleculeError};
use crate::noise::{DrivingNoiseParams, NoiseError, OuParams};
use crate::spin::SpinError;
use engine::{DriveSpec, Engine, SampleTiming};
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use thiserror::Error;

/// Electron gyromagnetic ratio γ_e = 2π · 28.024 GHz/T (rad s⁻¹ T⁻¹).
pub const GAMMA_E_RAD_PER_S_PER_T: f64 = TAU * 28.024e9;
/// Magnetic field amplitude one polarized nuclear spin contributes at the
/// sensor, per spin in the group.
pub const B_SINGLE_SPIN_TESLA: f64 = 150e-12;
/// Default encoding drive phase (drive along −ŷ).
pub const DEFAULT_PHASE: f64 = FRAC_PI_2;
/// Default measurement window.
pub const DEFAULT_TAU2_S: f64 = 50e-6;
/// Default longitudinal relaxation time for locked protocols.
pub const DEFAULT_T1_S: f64 = 1.5;
/// |cos Δφ| above this fails measurement-axis validation.
pub const ORTHOGONALITY_TOL: f64 = 1e-9;
/// Measurement drives slower than this multiple of the encoding drive only
/// warn (the readout separation degrades gracefully).
pub const MEAS_DRIVE_MIN_RATIO: f64 = 10.0;
/// Sub-steps per measurement-drive period when simulating the demodulating
/// readout. A power of two keeps the square-wave flips exactly between
/// midpoint samples.
pub const FILTER_STEPS_PER_PERIOD: usize = 64;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Molecule(#[from] MoleculeError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("duration must be positive and finite, got {0}")]
    InvalidDuration(f64),
    #[error("protocol needs at least one repetition")]
    ZeroRepetitions,
    #[error("free encoding requires an explicit duration (tau1_s)")]
    FreeEncodingNeedsDuration,
    #[error("free encoding must not carry a drive amplitude, got {0} Hz")]
    FreeEncodingWithDrive(f64),
    #[error("{kind} encoding requires a positive drive amplitude, got {omega1_hz} Hz")]
    EncodingNeedsDrive { kind: &'static str, omega1_hz: f64 },
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error(
        "measurement drive axis must be orthogonal to the encoding axis: \
         |cos(φ₂−φ₁)| = {0:.2e}"
    )]
    MeasurementNotOrthogonal(f64),
}

/// Non-fatal configuration findings, surfaced by `AerisConfig::validate`.
#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolWarning {
    /// Ω₂ < 10·Ω₁: the measurement drive does not cleanly outrun the encoding
    /// dynamics.
    WeakMeasurementDrive { omega2_hz: f64, omega1_hz: f64 },
    /// An explicit tau1_s that is not a whole number of drive periods; the
    /// stroboscopic readout then samples off the drive cycle.
    EncodingDurationOverride { given_s: f64, natural_s: f64 },
}

impl std::fmt::Display for ProtocolWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::WeakMeasurementDrive {
                omega2_hz,
                omega1_hz,
            } => write!(
                f,
                "measurement drive {omega2_hz} Hz is below {MEAS_DRIVE_MIN_RATIO}× \
                 the encoding drive {omega1_hz} Hz"
            ),
            Self::EncodingDurationOverride { given_s, natural_s } => write!(
                f,
                "encoding duration {given_s} s overrides the natural whole-period \
                 duration {natural_s} s"
            ),
        }
    }
}

/// How the encoding stage drives the nuclei.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingKind {
    /// No drive: plain free precession between measurements.
    Free,
    /// Constant weak drive for a whole number of periods.
    Continuous,
    /// Two equal drive blocks with the second phase-inverted, echoing the
    /// first-order drive-axis rotation away.
    Robust,
}

#[derive(Debug, Clone, Copy)]
pub struct EncodingStage {
    pub kind: EncodingKind,
    pub omega1_hz: f64,
    pub phase: f64,
    /// Drive periods per encoding block (driven kinds).
    pub n1: u32,
    /// Explicit duration override; required for `Free`.
    pub tau1_s: Option<f64>,
}

impl EncodingStage {
    pub fn free(tau1_s: f64) -> Self {
        Self {
            kind: EncodingKind::Free,
            omega1_hz: 0.0,
            phase: DEFAULT_PHASE,
            n1: 1,
            tau1_s: Some(tau1_s),
        }
    }

    pub fn continuous(omega1_hz: f64, n1: u32) -> Self {
        Self {
            kind: EncodingKind::Continuous,
            omega1_hz,
            phase: DEFAULT_PHASE,
            n1,
            tau1_s: None,
        }
    }

    pub fn robust(omega1_hz: f64, n1: u32) -> Self {
        Self {
            kind: EncodingKind::Robust,
            omega1_hz,
            phase: DEFAULT_PHASE,
            n1,
            tau1_s: None,
        }
    }

    /// Duration the stage would have with no override: n₁ whole drive periods
    /// per block (free stages have no natural duration).
    pub fn natural_duration_s(&self) -> Option<f64> {
        match self.kind {
            EncodingKind::Free => None,
            EncodingKind::Continuous => Some(self.n1 as f64 / self.omega1_hz),
            EncodingKind::Robust => Some(2.0 * self.n1 as f64 / self.omega1_hz),
        }
    }

    pub fn duration_s(&self) -> Result<f64, ProtocolError> {
        let tau = match (self.tau1_s, self.natural_duration_s()) {
            (Some(t), _) => t,
            (None, Some(t)) => t,
            (None, None) => return Err(ProtocolError::FreeEncodingNeedsDuration),
        };
        if tau <= 0.0 || !tau.is_finite() {
            return Err(ProtocolError::InvalidDuration(tau));
        }
        Ok(tau)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MeasurementStage {
    pub omega2_hz: f64,
    pub phase: f64,
    /// Drive periods per measurement window when no explicit duration is set.
    pub n2: u32,
    pub tau2_s: Option<f64>,
}

impl MeasurementStage {
    /// Measurement window of `tau2_s` at drive `omega2_hz`, axis orthogonal
    /// to the default encoding axis.
    pub fn new(omega2_hz: f64, tau2_s: f64) -> Self {
        Self {
            omega2_hz,
            phase: DEFAULT_PHASE + FRAC_PI_2,
            n2: 1,
            tau2_s: Some(tau2_s),
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.tau2_s
            .unwrap_or(self.n2 as f64 / self.omega2_hz)
    }
}

/// Which readout model converts nuclear magnetization into the recorded
/// per-repetition value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutModel {
    /// Project the end-of-encoding magnetization onto the quadrature the
    /// measurement stage transfers to the sensor (exact closed form).
    Analytic,
    /// Simulate the field at the sensor during the measurement window and
    /// demodulate it against the square-wave filter.
    Filter,
}

/// Square-wave demodulation quadrature, for a measurement axis at
/// φ₂ = φ₁ + π/2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterQuadrature {
    /// sq(t) = −sign(cos Ω₂t): locks onto the z-magnetization the driven
    /// encoding leaves behind.
    CosAligned,
    /// sq(t) = +sign(sin Ω₂t): locks onto the in-plane component free
    /// evolution leaves behind.
    SinAligned,
}

#[derive(Debug, Clone)]
pub struct AerisConfig {
    pub encoding: EncodingStage,
    pub measurement: MeasurementStage,
    pub repetitions: usize,
    /// Apply the initial π/2 trigger about the encoding axis.
    pub trigger: bool,
    /// Longitudinal relaxation; `None` disables it.
    pub t1_s: Option<f64>,
    pub readout: ReadoutModel,
    /// Diagnostic: read with the projection of the *other* encoding geometry
    /// (free ↔ driven swapped), which suppresses the signal by δ/Ω̄.
    pub readout_mismatch: bool,
    /// Relative amplitude noise on the encoding drive.
    pub drive_noise: Option<DrivingNoiseParams>,
}

impl AerisConfig {
    pub fn new(
        encoding: EncodingStage,
        measurement: MeasurementStage,
        repetitions: usize,
    ) -> Self {
        Self {
            encoding,
            measurement,
            repetitions,
            trigger: true,
            t1_s: None,
            readout: ReadoutModel::Analytic,
            readout_mismatch: false,
            drive_noise: None,
        }
    }

    /// Check internal consistency. Errors are unrunnable configurations;
    /// the returned warnings are runnable but suspicious ones.
    pub fn validate(&self) -> Result<Vec<ProtocolWarning>, ProtocolError> {
        let mut warnings = Vec::new();
        if self.repetitions == 0 {
            return Err(ProtocolError::ZeroRepetitions);
        }
        match self.encoding.kind {
            EncodingKind::Free => {
                if self.encoding.omega1_hz != 0.0 {
                    return Err(ProtocolError::FreeEncodingWithDrive(
                        self.encoding.omega1_hz,
                    ));
                }
                if self.encoding.tau1_s.is_none() {
                    return Err(ProtocolError::FreeEncodingNeedsDuration);
                }
            }
            EncodingKind::Continuous | EncodingKind::Robust => {
                if self.encoding.omega1_hz <= 0.0 {
                    return Err(ProtocolError::EncodingNeedsDrive {
                        kind: match self.encoding.kind {
                            EncodingKind::Continuous => "continuous",
                            _ => "robust",
                        },
                        omega1_hz: self.encoding.omega1_hz,
                    });
                }
                if self.encoding.n1 == 0 {
                    return Err(ProtocolError::NonPositive {
                        name: "n1",
                        value: 0.0,
                    });
                }
                if let (Some(given), Some(natural)) =
                    (self.encoding.tau1_s, self.encoding.natural_duration_s())
                {
                    if (given - natural).abs() > 1e-9 * natural {
                        warnings.push(ProtocolWarning::EncodingDurationOverride {
                            given_s: given,
                            natural_s: natural,
                        });
                    }
                }
            }
        }
        let tau1 = self.encoding.duration_s()?;
        if self.measurement.omega2_hz <= 0.0 {
            return Err(ProtocolError::NonPositive {
                name: "omega2_hz",
                value: self.measurement.omega2_hz,
            });
        }
        if self.measurement.n2 == 0 && self.measurement.tau2_s.is_none() {
            return Err(ProtocolError::NonPositive {
                name: "n2",
                value: 0.0,
            });
        }
        let tau2 = self.measurement.duration_s();
        if tau2 <= 0.0 || !tau2.is_finite() {
            return Err(ProtocolError::InvalidDuration(tau2));
        }
        let _ = tau1;
        let mis = (self.measurement.phase - self.encoding.phase).cos().abs();
        if mis > ORTHOGONALITY_TOL {
            return Err(ProtocolError::MeasurementNotOrthogonal(mis));
        }
        if let Some(t1) = self.t1_s {
            if t1 <= 0.0 {
                return Err(ProtocolError::NonPositive {
                    name: "t1_s",
                    value: t1,
                });
            }
        }
        if self.encoding.omega1_hz > 0.0
            && self.measurement.omega2_hz < MEAS_DRIVE_MIN_RATIO * self.encoding.omega1_hz
        {
            warnings.push(ProtocolWarning::WeakMeasurementDrive {
                omega2_hz: self.measurement.omega2_hz,
                omega1_hz: self.encoding.omega1_hz,
            });
        }
        Ok(warnings)
    }
}

/// One simulated trajectory of a sampled observable.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
}

/// Per-repetition sensor readout. `times` are wall-clock ends of each
/// encode–measure cycle; the spectral axis of the protocol lives on the
/// accumulated encoding (phase) time j·τ₁ instead.
#[derive(Debug, Clone)]
pub struct NVReadout {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Number of values that exceeded the physical range and were clamped.
    pub clamped: usize,
}

/// Step budget for a stage: never coarser than `dt`, always at least one.
fn steps_for(duration: f64, dt: f64) -> usize {
    ((duration / dt - 1e-9).ceil().max(1.0)) as usize
}

/// Default integration step: a tenth of the noise correlation time, refined
/// to resolve the fastest coherent frequency when one is faster.
pub fn default_dt(noise: &OuParams, max_frequency_hz: f64) -> f64 {
    let noise_limit = noise.tau_c / 10.0;
    if max_frequency_hz > 0.0 {
        noise_limit.min(1.0 / (50.0 * max_frequency_hz))
    } else {
        noise_limit
    }
}

/// Free-induction decay: π/2 trigger about I_x, then free precession with the
/// transverse magnetization Σ_k n_k(⟨I_x⟩ − i⟨I_y⟩)_k sampled every `dt`.
pub fn run_fid(
    mol: &Molecule,
    field: &FieldConfig,
    noise: OuParams,
    duration_s: f64,
    dt_s: f64,
    seed: u64,
) -> Result<Trajectory, ProtocolError> {
    if dt_s <= 0.0 || !dt_s.is_finite() {
        return Err(ProtocolError::InvalidStep(dt_s));
    }
    if duration_s <= 0.0 || !duration_s.is_finite() {
        return Err(ProtocolError::InvalidDuration(duration_s));
    }
    let mut eng = Engine::new(mol, field, noise, None, seed)?;
    eng.trigger(0.0);
    let n = steps_for(duration_s, dt_s);
    let h = duration_s / n as f64;
    let counts: Vec<f64> = mol.groups.iter().map(|g| g.count as f64).collect();
    let eval = |eng: &Engine| -> Complex64 {
        eng.group_mags()
            .iter()
            .zip(&counts)
            .map(|(m, &c)| Complex64::new(c * m[0], -c * m[1]))
            .sum()
    };
    let mut values = Vec::with_capacity(n + 1);
    values.push(eval(&eng));
    {
        let mut cb = |_t: f64, e: &Engine| values.push(eval(e));
        eng.run_stage(
            duration_s,
            n,
            DriveSpec::free(),
            SampleTiming::End,
            Some(&mut cb),
        )?;
    }
    let times = (0..=n).map(|i| i as f64 * h).collect();
    Ok(Trajectory { times, values })
}

/// Continuous weak lock: a π/2 trigger about I_{φ₁−π/2} aligns the
/// magnetization with the drive axis (−ŷ at the default phase), then the
/// drive runs uninterrupted. The normalized locked component
/// −2·Σ n_k⟨I_y⟩_k / Σ n_k is sampled every `dt`; sampling at whole drive
/// periods gives the stroboscopic relaxation curve.
pub fn run_spin_lock(
    mol: &Molecule,
    field: &FieldConfig,
    noise: OuParams,
    omega1_hz: f64,
    duration_s: f64,
    dt_s: f64,
    seed: u64,
) -> Result<Trajectory, ProtocolError> {
    if dt_s <= 0.0 || !dt_s.is_finite() {
        return Err(ProtocolError::InvalidStep(dt_s));
    }
    if duration_s <= 0.0 || !duration_s.is_finite() {
        return Err(ProtocolError::InvalidDuration(duration_s));
    }
    if omega1_hz <= 0.0 {
        return Err(ProtocolError::EncodingNeedsDrive {
            kind: "spin-lock",
            omega1_hz,
        });
    }
    let mut eng = Engine::new(mol, field, noise, None, seed)?;
    eng.trigger(DEFAULT_PHASE - FRAC_PI_2);
    let n = steps_for(duration_s, dt_s);
    let h = duration_s / n as f64;
    let total: f64 = mol.groups.iter().map(|g| g.count as f64).sum();
    let counts: Vec<f64> = mol.groups.iter().map(|g| g.count as f64).collect();
    let eval = |eng: &Engine| -> Complex64 {
        let locked: f64 = eng
            .group_mags()
            .iter()
            .zip(&counts)
            .map(|(m, &c)| -2.0 * c * m[1])
            .sum();
        Complex64::from(locked / total)
    };
    let mut values = Vec::with_capacity(n + 1);
    values.push(eval(&eng));
    {
        let mut cb = |_t: f64, e: &Engine| values.push(eval(e));
        eng.run_stage(
            duration_s,
            n,
            DriveSpec::driven(TAU * omega1_hz, DEFAULT_PHASE, false),
            SampleTiming::End,
            Some(&mut cb),
        )?;
    }
    let times = (0..=n).map(|i| i as f64 * h).collect();
    Ok(Trajectory { times, values })
}

/// Idealized per-repetition readout: (2γ_e τ₂/π)·Σ_k b_k·sin(2π f̄_k j τ₁),
/// the value a perfectly phase-matched demodulation of group fields `b_k`
/// precessing at dressed frequencies `f̄_k` produces at repetition `j`.
pub fn nv_readout_analytic(
    b_fields_tesla: &[f64],
    dressed_freqs_hz: &[f64],
    j: usize,
    tau1_s: f64,
    tau2_s: f64,
    gamma_e: f64,
) -> f64 {
    let pref = 2.0 * gamma_e * tau2_s / PI;
    pref * b_fields_tesla
        .iter()
        .zip(dressed_freqs_hz)
        .map(|(&b, &f)| b * (TAU * f * j as f64 * tau1_s).sin())
        .sum::<f64>()
}

/// Accumulated sensor phase from square-wave demodulation of the field
/// `b(t)` over one measurement window: φ = γ_e ∫ b(t)·sq(t) dt.
///
/// `b_midpoints[i]` samples the field at t = (i+½)·dt from the window start;
/// the quadrature fixes sq(t) for a measurement axis at φ₂ = φ₁ + π/2. A
/// resonant field A·sin(2π·Ω₂·t) demodulated `SinAligned` over a whole number
/// of periods yields φ = γ_e·A·(2/π)·τ₂; off-resonant components (e.g. at
/// 2Ω₂) average away over whole periods.
pub fn nv_readout_filter(
    b_midpoints: &[f64],
    dt_s: f64,
    omega2_hz: f64,
    quadrature: FilterQuadrature,
    gamma_e: f64,
) -> f64 {
    let w = TAU * omega2_hz;
    let mut phi = 0.0;
    for (i, &b) in b_midpoints.iter().enumerate() {
        let t = (i as f64 + 0.5) * dt_s;
        let sq = match quadrature {
            FilterQuadrature::CosAligned => -(w * t).cos().signum(),
            FilterQuadrature::SinAligned => (w * t).sin().signum(),
        };
        phi += b * sq * dt_s;
    }
    gamma_e * phi
}

/// Multiply a sampled series by the longitudinal relaxation envelope
/// e^{−t/T₁}. Non-finite `t1_s` leaves the series untouched.
pub fn apply_t1_envelope(times: &[f64], values: &mut [Complex64], t1_s: f64) {
    if !t1_s.is_finite() {
        return;
    }
    for (t, v) in times.iter().zip(values.iter_mut()) {
        *v *= (-t / t1_s).exp();
    }
}

/// Run a full repeated encode–measure protocol for one noise trajectory.
///
/// Each repetition evolves the molecule through the encoding stage, records
/// one readout value, then evolves through the measurement stage (whose
/// integer number of drive periods returns the nuclear state up to noise).
/// The recorded value carries the e^{−t/T₁} envelope of the wall-clock time
/// and is clamped to the physical range [−1, 1].
pub fn run_aeris(
    mol: &Molecule,
    field: &FieldConfig,
    noise: OuParams,
    config: &AerisConfig,
    dt_s: f64,
    seed: u64,
) -> Result<NVReadout, ProtocolError> {
    config.validate()?;
    if dt_s <= 0.0 || !dt_s.is_finite() {
        return Err(ProtocolError::InvalidStep(dt_s));
    }
    let tau1 = config.encoding.duration_s()?;
    let tau2 = config.measurement.duration_s();
    let phi1 = config.encoding.phase;
    let phi2 = config.measurement.phase;
    let omega1 = TAU * config.encoding.omega1_hz;
    let omega2 = TAU * config.measurement.omega2_hz;

    let mut eng = Engine::new(mol, field, noise, config.drive_noise, seed)?;
    if config.trigger {
        eng.trigger(phi1);
    }

    // Readout projection per (branch, group): y- and z-coefficients of the
    // quadrature the measurement transfers. Driven-geometry readout projects
    // onto (δ/Ω̄, Ω₁/Ω̄); free-geometry onto (1, 0). The mismatch diagnostic
    // swaps the two.
    let branches = mol.passive_branches();
    let driven_geometry =
        matches!(config.encoding.kind, EncodingKind::Continuous) != config.readout_mismatch;
    let coeffs: Vec<Vec<(f64, f64)>> = branches
        .iter()
        .map(|br| {
            (0..mol.n_groups())
                .map(|k| {
                    let wz = TAU * mol.effective_shift_hz(k, field, br);
                    if driven_geometry && omega1 > 0.0 {
                        let obar = wz.hypot(omega1);
                        (wz / obar, omega1 / obar)
                    } else {
                        (1.0, 0.0)
                    }
                })
                .collect()
        })
        .collect();
    let b_fields: Vec<f64> = mol
        .groups
        .iter()
        .map(|g| g.count as f64 * B_SINGLE_SPIN_TESLA)
        .collect();
    let pref = 2.0 * GAMMA_E_RAD_PER_S_PER_T * tau2 / PI;
    let t1 = config.t1_s.unwrap_or(f64::INFINITY);

    let quadrature = if driven_geometry && omega1 > 0.0 {
        FilterQuadrature::CosAligned
    } else {
        FilterQuadrature::SinAligned
    };
    // A measurement axis at φ₁ − π/2 instead of φ₁ + π/2 reverses the sense
    // of the readout rotation and with it the sin-quadrature sign.
    let orientation = (phi2 - phi1).sin().signum();

    let (n_enc, enc_block) = match config.encoding.kind {
        EncodingKind::Robust => (steps_for(0.5 * tau1, dt_s), 0.5 * tau1),
        _ => (steps_for(tau1, dt_s), tau1),
    };
    let n_meas = match config.readout {
        ReadoutModel::Analytic => steps_for(tau2, dt_s),
        ReadoutModel::Filter => steps_for(
            tau2,
            dt_s.min(1.0 / (config.measurement.omega2_hz * FILTER_STEPS_PER_PERIOD as f64)),
        ),
    };

    let mut times = Vec::with_capacity(config.repetitions);
    let mut values = Vec::with_capacity(config.repetitions);
    let mut clamped = 0usize;

    for j in 1..=config.repetitions {
        match config.encoding.kind {
            EncodingKind::Free => {
                eng.run_stage(enc_block, n_enc, DriveSpec::free(), SampleTiming::End, None)?;
            }
            EncodingKind::Continuous => {
                eng.run_stage(
                    enc_block,
                    n_enc,
                    DriveSpec::driven(omega1, phi1, true),
                    SampleTiming::End,
                    None,
                )?;
            }
            EncodingKind::Robust => {
                eng.run_stage(
                    enc_block,
                    n_enc,
                    DriveSpec::driven(omega1, phi1, true),
                    SampleTiming::End,
                    None,
                )?;
                eng.run_stage(
                    enc_block,
                    n_enc,
                    DriveSpec::driven(omega1, phi1 + PI, true),
                    SampleTiming::End,
                    None,
                )?;
            }
        }

        let t_j = j as f64 * (tau1 + tau2);
        let envelope = if t1.is_finite() { (-t_j / t1).exp() } else { 1.0 };

        let value = match config.readout {
            ReadoutModel::Analytic => {
                let mags = eng.branch_group_mags();
                let mut lin = 0.0;
                for (b, br) in branches.iter().enumerate() {
                    for k in 0..mol.n_groups() {
                        let (a, c) = coeffs[b][k];
                        lin += br.weight
                            * b_fields[k]
                            * -2.0
                            * (a * mags[b][k][1] + c * mags[b][k][2]);
                    }
                }
                eng.run_stage(
                    tau2,
                    n_meas,
                    DriveSpec::driven(omega2, phi2, false),
                    SampleTiming::End,
                    None,
                )?;
                let v = pref * lin * envelope;
                if v.abs() > 1.0 {
                    clamped += 1;
                }
                v.clamp(-1.0, 1.0)
            }
            ReadoutModel::Filter => {
                let mut b_samples = Vec::with_capacity(n_meas);
                {
                    let mut cb = |t: f64, e: &Engine| {
                        let mags = e.group_mags();
                        let mut b_field = 0.0;
                        for (k, m) in mags.iter().enumerate() {
                            b_field += b_fields[k] * 2.0 * m[2];
                        }
                        let env = if t1.is_finite() { (-t / t1).exp() } else { 1.0 };
                        b_samples.push(b_field * env);
                    };
                    eng.run_stage(
                        tau2,
                        n_meas,
                        DriveSpec::driven(omega2, phi2, false),
                        SampleTiming::Midpoint,
                        Some(&mut cb),
                    )?;
                }
                let h_m = tau2 / n_meas as f64;
                let mut phi = nv_readout_filter(
                    &b_samples,
                    h_m,
                    config.measurement.omega2_hz,
                    quadrature,
                    GAMMA_E_RAD_PER_S_PER_T,
                );
                if quadrature == FilterQuadrature::SinAligned {
                    phi *= orientation;
                }
                phi.sin()
            }
        };
        times.push(t_j);
        values.push(value);
    }

    Ok(NVReadout {
        times,
        values,
        clamped,
    })
}
