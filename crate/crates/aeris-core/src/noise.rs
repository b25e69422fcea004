//! Ornstein–Uhlenbeck dephasing noise with exact discretization, and the
//! closed-form relations between noise parameters, diffusion and coherence
//! times.
//!
//! The detuning noise ξ(t) is a zero-mean Gaussian process with
//! autocorrelation `σ²·e^{−|τ|/τ_c}`. The update used everywhere is the
//! distributionally exact one-step recursion (valid for any dt, unlike
//! Euler–Maruyama), with ξ(0) drawn from the stationary distribution 𝒩(0, σ²).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("step size must be positive, got {0}")]
    InvalidStep(f64),
    #[error("duration must be positive, got {0}")]
    InvalidDuration(f64),
    #[error("parameter {name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

/// Detuning-noise parameters: strength σ (rad/s) and correlation time τ_c (s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuParams {
    pub sigma: f64,
    pub tau_c: f64,
}

impl OuParams {
    pub fn new(sigma: f64, tau_c: f64) -> Result<Self, NoiseError> {
        if sigma < 0.0 {
            return Err(NoiseError::NonPositive {
                name: "sigma",
                value: sigma,
            });
        }
        if tau_c <= 0.0 {
            return Err(NoiseError::NonPositive {
                name: "tau_c",
                value: tau_c,
            });
        }
        Ok(Self { sigma, tau_c })
    }

    /// Convenience constructor taking σ/2π in Hz.
    pub fn from_sigma_hz(sigma_hz: f64, tau_c: f64) -> Result<Self, NoiseError> {
        Self::new(sigma_hz * std::f64::consts::TAU, tau_c)
    }
}

/// Relative drive-amplitude error parameters: the drive is Ω₁·(1 + ε(t)) with
/// ε an OU process of relative strength `sigma_rel` and correlation `tau_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrivingNoiseParams {
    pub sigma_rel: f64,
    pub tau_c: f64,
}

impl DrivingNoiseParams {
    pub fn new(sigma_rel: f64, tau_c: f64) -> Result<Self, NoiseError> {
        if sigma_rel < 0.0 {
            return Err(NoiseError::NonPositive {
                name: "sigma_rel",
                value: sigma_rel,
            });
        }
        if tau_c <= 0.0 {
            return Err(NoiseError::NonPositive {
                name: "tau_c",
                value: tau_c,
            });
        }
        Ok(Self { sigma_rel, tau_c })
    }
}

/// A sampled noise path on a uniform grid: `samples[j] = ξ(j·dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OuTrajectory {
    pub dt: f64,
    pub samples: Vec<f64>,
}

/// Advance an OU value by `dt` using the exact one-step update
/// `ξ' = ξ·e^{−dt/τ_c} + σ·𝒩·√(1 − e^{−2dt/τ_c})`.
pub fn ou_step(xi: f64, params: OuParams, dt: f64, gaussian_draw: f64) -> Result<f64, NoiseError> {
    if dt <= 0.0 {
        return Err(NoiseError::InvalidStep(dt));
    }
    let decay = (-dt / params.tau_c).exp();
    Ok(xi * decay + params.sigma * gaussian_draw * (1.0 - decay * decay).sqrt())
}

/// Sample a full trajectory of `⌈duration/dt⌉ + 1` points (t = 0 included),
/// deterministically from the seed, with stationary initialization.
pub fn ou_trajectory(
    params: OuParams,
    duration: f64,
    dt: f64,
    seed: u64,
) -> Result<OuTrajectory, NoiseError> {
    if duration <= 0.0 {
        return Err(NoiseError::InvalidDuration(duration));
    }
    if dt <= 0.0 {
        return Err(NoiseError::InvalidStep(dt));
    }
    let n_steps = (duration / dt).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_steps + 1);
    let mut xi = params.sigma * rng.sample::<f64, _>(StandardNormal);
    samples.push(xi);
    for _ in 0..n_steps {
        xi = ou_step(xi, params, dt, rng.sample(StandardNormal))?;
        samples.push(xi);
    }
    Ok(OuTrajectory { dt, samples })
}

/// Stateful OU chain used by the protocol engine: advances one sample at a
/// time with the exact update, supporting variable step sizes across protocol
/// stages. The current value is held constant within each step.
#[derive(Debug, Clone)]
pub struct OuChain<R: Rng> {
    params: OuParams,
    xi: f64,
    rng: R,
}

impl<R: Rng> OuChain<R> {
    /// Start a chain with stationary initialization ξ(0) ~ 𝒩(0, σ²).
    pub fn stationary(params: OuParams, mut rng: R) -> Self {
        let xi = params.sigma * rng.sample::<f64, _>(StandardNormal);
        Self { params, xi, rng }
    }

    /// Current value ξ(t).
    pub fn value(&self) -> f64 {
        self.xi
    }

    /// Advance time by `dt` and return the new value.
    pub fn advance(&mut self, dt: f64) -> f64 {
        let decay = (-dt / self.params.tau_c).exp();
        let draw: f64 = self.rng.sample(StandardNormal);
        self.xi = self.xi * decay + self.params.sigma * draw * (1.0 - decay * decay).sqrt();
        self.xi
    }
}

/// Correlation time of the diffusion-limited detuning noise across a sensing
/// volume of radius d_NV: `τ_c = (2·d_NV)²/(6·D)`.
pub fn derive_tau_c(d_nv: f64, diffusion: f64) -> Result<f64, NoiseError> {
    if d_nv <= 0.0 {
        return Err(NoiseError::NonPositive {
            name: "d_nv",
            value: d_nv,
        });
    }
    if diffusion <= 0.0 {
        return Err(NoiseError::NonPositive {
            name: "diffusion",
            value: diffusion,
        });
    }
    let l = 2.0 * d_nv;
    Ok(l * l / (6.0 * diffusion))
}

/// Noise strength (rad/s) that produces a given free-decay time via the
/// motional-narrowing relation `T₂* = 1/(σ²·τ_c)`.
pub fn derive_sigma(t2_star: f64, tau_c: f64) -> Result<f64, NoiseError> {
    if t2_star <= 0.0 {
        return Err(NoiseError::NonPositive {
            name: "t2_star",
            value: t2_star,
        });
    }
    if tau_c <= 0.0 {
        return Err(NoiseError::NonPositive {
            name: "tau_c",
            value: tau_c,
        });
    }
    Ok((1.0 / (t2_star * tau_c)).sqrt())
}

/// Free-decay time implied by (σ, τ_c): `T₂* = 1/(σ²·τ_c)`.
pub fn t2_star(params: OuParams) -> f64 {
    1.0 / (params.sigma * params.sigma * params.tau_c)
}

/// Exact free-induction-decay envelope of OU dephasing:
/// `E(t) = exp[−σ²τ_c·t + σ²τ_c²·(1 − e^{−t/τ_c})]`.
///
/// Gaussian at short times (t ≪ τ_c), exponential with rate σ²τ_c = 1/T₂* at
/// long times.
pub fn fid_envelope(params: OuParams, t: f64) -> f64 {
    let s2tc = params.sigma * params.sigma * params.tau_c;
    (-s2tc * t + s2tc * params.tau_c * (1.0 - (-t / params.tau_c).exp())).exp()
}
