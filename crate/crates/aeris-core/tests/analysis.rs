use aeris_core::analysis::{
    amplitude_vs_scan, effective_t1rho, fft_spectrum, fit_exp_decay, fit_lorentzian,
    map_dressed_axis, peak_near, sensitivity_ratio, t_eff, unalias_axis, AmplitudeMode,
    AnalysisError, DecayFitMode, SensitivityInputs, Spectrum, Window,
};
use aeris_core::ensemble::TimeSeries;
use aeris_core::molecule::generalized_rabi;
use approx::{assert_abs_diff_eq, assert_relative_eq};
use num_complex::Complex64;
use std::f64::consts::TAU;

/// Complex series sampled on a uniform grid.
fn series(n: usize, dt: f64, f: impl Fn(f64) -> Complex64) -> TimeSeries {
    let times: Vec<f64> = (0..n).map(|j| j as f64 * dt).collect();
    let values = times.iter().map(|&t| f(t)).collect();
    TimeSeries::single(times, values)
}

/// A precessing signal at +f0 Hz in the convention used throughout: the
/// complex trace rotates as e^{−i2πf₀t} and the transform kernel undoes it.
fn tone(f0: f64) -> impl Fn(f64) -> Complex64 {
    move |t| Complex64::from_polar(1.0, -TAU * f0 * t)
}

#[test]
fn exact_bin_tone_integrates_to_record_length() {
    let n = 64;
    let dt = 0.01;
    let record = n as f64 * dt;
    let df = 1.0 / record;
    let f0 = 5.0 * df;
    let ts = series(n, dt, tone(f0));
    let spec = fft_spectrum(&ts, 1, Window::None, AmplitudeMode::Modulus).unwrap();
    assert_eq!(spec.freqs_hz.len(), n / 2 + 1);
    assert_abs_diff_eq!(spec.bin_hz(), df, epsilon = 1e-12);
    let k0 = 5;
    assert_relative_eq!(spec.amplitudes[k0], record, max_relative = 1e-10);
    // No leakage anywhere else for an exact-bin tone.
    for (k, &a) in spec.amplitudes.iter().enumerate() {
        if k != k0 {
            assert!(a < 1e-10, "leakage {a} at bin {k}");
        }
    }
}

#[test]
fn real_mode_peak_of_a_decaying_line_is_the_lifetime() {
    // Continuous transform of e^{−t/T}e^{−i2πf₀t} at f = f₀ is exactly T.
    let t_decay = 0.25;
    let dt = 0.005;
    let n = 1500; // 7.5 s = 30 lifetimes: truncation negligible.
    let f0 = 20.0;
    let ts = series(n, dt, |t| tone(f0)(t) * (-t / t_decay).exp());
    let spec = fft_spectrum(&ts, 4, Window::None, AmplitudeMode::Real).unwrap();
    let (f_peak, amp) = peak_near(&spec, f0, 2.0).unwrap();
    assert_abs_diff_eq!(f_peak, f0, epsilon = spec.bin_hz());
    assert_relative_eq!(amp, t_decay, max_relative = 0.02);
}

#[test]
fn power_mode_width_is_the_lorentzian_fwhm() {
    // |FT|² of an exponential decay is a Lorentzian of FWHM 1/(πT) Hz.
    let t_decay = 0.2;
    let dt = 0.002;
    let n = 1500;
    let f0 = 25.0;
    let ts = series(n, dt, |t| tone(f0)(t) * (-t / t_decay).exp());
    let spec = fft_spectrum(&ts, 4, Window::None, AmplitudeMode::Power).unwrap();
    let fit = fit_lorentzian(&spec, f0, 6.0).unwrap();
    assert_abs_diff_eq!(fit.center_hz, f0, epsilon = 0.02);
    let expect_fwhm = 1.0 / (std::f64::consts::PI * t_decay);
    assert_relative_eq!(fit.fwhm_hz, expect_fwhm, max_relative = 0.02);
}

#[test]
fn hann_window_trades_leakage_for_width() {
    // An off-bin tone leaks; the window suppresses the far sidelobes.
    let n = 256;
    let dt = 0.01;
    let df = 1.0 / (n as f64 * dt);
    let f0 = (31.37) * df;
    let ts = series(n, dt, tone(f0));
    let plain = fft_spectrum(&ts, 2, Window::None, AmplitudeMode::Modulus).unwrap();
    let windowed = fft_spectrum(&ts, 2, Window::Hann, AmplitudeMode::Modulus).unwrap();
    let far = f0 + 8.0 * df;
    let (_, leak_plain) = peak_near(&plain, far, 2.0 * df).unwrap();
    let (_, leak_hann) = peak_near(&windowed, far, 2.0 * df).unwrap();
    assert!(
        leak_hann < 0.2 * leak_plain,
        "hann {leak_hann} vs plain {leak_plain}"
    );
    // Both locate the tone to within the padded grid.
    let (fp, _) = peak_near(&windowed, f0, 3.0 * df).unwrap();
    assert_abs_diff_eq!(fp, f0, epsilon = plain.bin_hz());
}

#[test]
fn zero_padding_refines_the_frequency_grid() {
    let n = 128;
    let dt = 0.01;
    let ts = series(n, dt, tone(11.7));
    let spec = fft_spectrum(&ts, 8, Window::None, AmplitudeMode::Modulus).unwrap();
    assert_abs_diff_eq!(spec.bin_hz(), 1.0 / (8.0 * 1.28), epsilon = 1e-12);
    let (f_peak, _) = peak_near(&spec, 11.7, 1.5).unwrap();
    assert_abs_diff_eq!(f_peak, 11.7, epsilon = spec.bin_hz());
}

#[test]
fn malformed_series_are_rejected() {
    let ts = TimeSeries::single(
        vec![0.0, 0.1, 0.25],
        vec![Complex64::ZERO; 3],
    );
    assert!(matches!(
        fft_spectrum(&ts, 1, Window::None, AmplitudeMode::Modulus),
        Err(AnalysisError::NonUniformGrid(..))
    ));
    let ok = series(16, 0.1, tone(1.0));
    assert!(matches!(
        fft_spectrum(&ok, 0, Window::None, AmplitudeMode::Modulus),
        Err(AnalysisError::InvalidParam { .. })
    ));
    let short = series(1, 0.1, tone(1.0));
    assert!(matches!(
        fft_spectrum(&short, 1, Window::None, AmplitudeMode::Modulus),
        Err(AnalysisError::TooShort { .. })
    ));
    let spec = fft_spectrum(&ok, 1, Window::None, AmplitudeMode::Modulus).unwrap();
    assert!(matches!(
        peak_near(&spec, 100.0, 0.1),
        Err(AnalysisError::EmptyWindow)
    ));
}

fn synthetic_spectrum(freqs_hz: Vec<f64>, amplitudes: Vec<f64>) -> Spectrum {
    Spectrum {
        freqs_hz,
        amplitudes,
        window: Window::None,
        zero_pad: 1,
        mode: AmplitudeMode::Modulus,
    }
}

#[test]
fn unaliasing_restores_frequencies_above_the_sampling_rate() {
    let spec = synthetic_spectrum(vec![0.0, 47.49, 400.0, 999.9], vec![1.0, 2.0, 3.0, 4.0]);
    let out = unalias_axis(&spec, 1000.0, 1000.0);
    assert_abs_diff_eq!(out.freqs_hz[0], 1000.0, epsilon = 1e-9);
    assert_abs_diff_eq!(out.freqs_hz[1], 1047.49, epsilon = 1e-9);
    assert_abs_diff_eq!(out.freqs_hz[2], 1400.0, epsilon = 1e-9);
    assert_abs_diff_eq!(out.freqs_hz[3], 1999.9, epsilon = 1e-9);
    assert_eq!(out.amplitudes, spec.amplitudes);
    // Frequencies already above the floor are untouched.
    let spec = synthetic_spectrum(vec![1000.5], vec![1.0]);
    let out = unalias_axis(&spec, 1000.0, 1000.0);
    assert_abs_diff_eq!(out.freqs_hz[0], 1000.5, epsilon = 1e-9);
}

#[test]
fn dressed_axis_mapping_inverts_the_generalized_rabi() {
    let omega1 = 1000.0;
    let dressed = generalized_rabi(311.83, omega1);
    let spec = synthetic_spectrum(vec![500.0, dressed], vec![9.0, 1.0]);
    let out = map_dressed_axis(&spec, omega1);
    // The sub-drive bin is dropped; the dressed line maps back to the shift.
    assert_eq!(out.freqs_hz.len(), 1);
    assert_relative_eq!(out.freqs_hz[0], 311.83, max_relative = 1e-9);
    assert_eq!(out.amplitudes, vec![1.0]);
    // With no drive the mapping is the identity.
    let id = map_dressed_axis(&spec, 0.0);
    assert_eq!(id.freqs_hz, spec.freqs_hz);
}

#[test]
fn stroboscopic_pipeline_recovers_the_bare_shift() {
    // One sample per drive period aliases the dressed precession down to the
    // reduced shift; unaliasing then undoing the dressing recovers δ.
    let omega1 = 1000.0;
    let delta = 311.83;
    let reduced = generalized_rabi(delta, omega1) - omega1;
    let spec = synthetic_spectrum(vec![reduced], vec![1.0]);
    let out = map_dressed_axis(&unalias_axis(&spec, omega1, omega1), omega1);
    assert_relative_eq!(out.freqs_hz[0], delta, max_relative = 1e-9);
}

#[test]
fn lorentzian_fit_recovers_exact_parameters() {
    let (a, f0, fwhm, c) = (2.5, 17.3, 1.9, 0.3);
    let u = fwhm / 2.0;
    let freqs: Vec<f64> = (0..400).map(|k| k as f64 * 0.1).collect();
    let amps: Vec<f64> = freqs
        .iter()
        .map(|&f| a * u * u / ((f - f0).powi(2) + u * u) + c)
        .collect();
    let spec = synthetic_spectrum(freqs, amps);
    let fit = fit_lorentzian(&spec, 16.0, 8.0).unwrap();
    assert_relative_eq!(fit.center_hz, f0, max_relative = 1e-6);
    assert_relative_eq!(fit.fwhm_hz, fwhm, max_relative = 1e-6);
    assert_relative_eq!(fit.amplitude, a, max_relative = 1e-6);
    assert_abs_diff_eq!(fit.baseline, c, epsilon = 1e-6);
    assert!(fit.residual_rms < 1e-9);
}

#[test]
fn lorentzian_fit_needs_enough_points() {
    let spec = synthetic_spectrum(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 1.0]);
    assert!(matches!(
        fit_lorentzian(&spec, 2.0, 1.5),
        Err(AnalysisError::TooShort { .. }) | Err(AnalysisError::TooFewEvents { .. })
    ));
}

#[test]
fn stroboscopic_decay_fit_is_exact_on_clean_data() {
    let t_decay = 0.45;
    let ts = series(200, 0.01, |t| Complex64::from(0.8 * (-t / t_decay).exp()));
    let fit = fit_exp_decay(&ts, DecayFitMode::Stroboscopic, 0.0).unwrap();
    assert_relative_eq!(fit.t_decay_s, t_decay, max_relative = 1e-9);
    assert_relative_eq!(fit.amplitude, 0.8, max_relative = 1e-9);
    assert!(fit.residual_rms < 1e-10);
    assert_eq!(fit.n_points, 200);

    // skip_before_s drops the early samples but not the answer.
    let fit = fit_exp_decay(&ts, DecayFitMode::Stroboscopic, 0.5).unwrap();
    assert_relative_eq!(fit.t_decay_s, t_decay, max_relative = 1e-9);
    assert_eq!(fit.n_points, 150);
}

#[test]
fn envelope_fit_ignores_a_drifting_baseline() {
    // Oscillation × decay on top of a slow linear drift: consecutive-extrema
    // half-differences cancel the drift.
    let t_decay = 0.5;
    let ts = series(1200, 1.25e-3, |t| {
        Complex64::from(0.9 * (-t / t_decay).exp() * (TAU * 40.0 * t).cos() + 0.3 + 0.2 * t)
    });
    let fit = fit_exp_decay(&ts, DecayFitMode::Envelope, 0.0).unwrap();
    assert_relative_eq!(fit.t_decay_s, t_decay, max_relative = 0.10);
    assert_relative_eq!(fit.amplitude, 0.9, max_relative = 0.15);
}

#[test]
fn envelope_fit_tracks_a_two_tone_beat() {
    // Complex two-tone signal: the modulus beats between 0.5× and 1.5× the
    // envelope; per-bucket maxima ride the antinodes.
    let t_decay = 0.6;
    let ts = series(1441, 1.25e-3, |t| {
        let env = (-t / t_decay).exp();
        (Complex64::from_polar(1.0, -TAU * 15.0 * t)
            + Complex64::from_polar(0.5, -TAU * 47.0 * t))
            * env
    });
    let fit = fit_exp_decay(&ts, DecayFitMode::Envelope, 0.0).unwrap();
    assert_relative_eq!(fit.t_decay_s, t_decay, max_relative = 0.10);
}

#[test]
fn non_decaying_series_is_an_error() {
    let flat = series(50, 0.01, |_| Complex64::from(1.0));
    assert!(matches!(
        fit_exp_decay(&flat, DecayFitMode::Stroboscopic, 0.0),
        Err(AnalysisError::NotDecaying)
    ));
    let growing = series(50, 0.01, |t| Complex64::from((t / 0.3).exp()));
    assert!(matches!(
        fit_exp_decay(&growing, DecayFitMode::Stroboscopic, 0.0),
        Err(AnalysisError::NotDecaying)
    ));
    let short = series(3, 0.01, |_| Complex64::from(1.0));
    assert!(matches!(
        fit_exp_decay(&short, DecayFitMode::Stroboscopic, 0.0),
        Err(AnalysisError::TooShort { .. })
    ));
}

#[test]
fn cycle_time_bookkeeping() {
    assert_relative_eq!(effective_t1rho(1.5, 0.6), 0.428571, max_relative = 1e-5);
    assert_relative_eq!(
        effective_t1rho(f64::INFINITY, 0.6),
        0.6,
        max_relative = 1e-12
    );
    assert_relative_eq!(t_eff(1.5, 0.6, 1e-3, 50e-6), 0.588235, max_relative = 1e-5);
    // No relaxation during measurement: the encoding decay is all there is.
    assert_relative_eq!(
        t_eff(f64::INFINITY, 0.6, 1e-3, 50e-6),
        0.6,
        max_relative = 1e-12
    );
    assert_relative_eq!(
        amplitude_vs_scan(t_eff(1.5, 0.6, 1e-3, 50e-6), 1e-3, 1000),
        0.48077,
        max_relative = 1e-4
    );
    // Non-decaying scan integrates linearly.
    assert_relative_eq!(
        amplitude_vs_scan(f64::INFINITY, 1e-3, 1000),
        1.0,
        max_relative = 1e-12
    );
}

#[test]
fn sensitivity_gain_at_the_reference_working_point() {
    let inp = SensitivityInputs::with_derived_tau1_star(
        1.5,    // relaxation
        0.6,    // locked-frame encoding decay
        0.06,   // free-evolution dephasing
        1e-3,   // driven encoding period
        50e-6,  // measurement period
        1000,   // repetitions
        311.83, // shift under comparison
        1000.0, // drive
        0.0,    // overhead
    );
    // Matched spectral range shortens the reference encoding by δ̃/δ.
    assert_relative_eq!(inp.tau1_star_s, 1.523e-4, max_relative = 1e-3);
    let ratio = sensitivity_ratio(&inp);
    assert_relative_eq!(ratio, 3.858, max_relative = 2e-3);
    assert!((3.0..5.0).contains(&ratio));

    // Without a drive the protocols coincide by construction.
    let free = SensitivityInputs::with_derived_tau1_star(
        1.5, 0.6, 0.06, 1e-3, 50e-6, 1000, 311.83, 0.0, 0.0,
    );
    assert_eq!(sensitivity_ratio(&free), 1.0);

    // Shared overhead dilutes the reference's shorter-cycle advantage, so
    // the driven gain can only grow with it.
    let mut with_overhead = inp;
    with_overhead.t_overhead_s = 1.0;
    assert!(sensitivity_ratio(&with_overhead) > ratio);
}
