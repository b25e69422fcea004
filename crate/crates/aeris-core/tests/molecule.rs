use aeris_core::molecule::{
    build_hamiltonian, generalized_rabi, het_effective_rabi, j_hamiltonian, magnus_h2_coefficient,
    rescaled_field, reduced_shift, shift_hz, third_order_shift, Drive, FieldConfig, Molecule,
    MoleculeError, PassiveBranch, PassiveSpin, SpinGroup,
};
use aeris_core::spin::{collective_operator, Axis};
use approx::{assert_abs_diff_eq, assert_relative_eq};
use std::f64::consts::{FRAC_PI_2, TAU};

fn field_2t() -> FieldConfig {
    FieldConfig::new(2.0).unwrap()
}

#[test]
fn ppm_to_hz_at_two_tesla() {
    let field = field_2t();
    assert_relative_eq!(field.hz_per_ppm(), 85.154, max_relative = 1e-6);
    assert_relative_eq!(shift_hz(2.05, &field), 174.57, max_relative = 1e-4);
    assert_relative_eq!(shift_hz(3.662, &field), 311.83, max_relative = 1e-4);
    assert_relative_eq!(shift_hz(3.799, &field), 323.50, max_relative = 1e-4);
}

#[test]
fn dressed_frequency_formulas() {
    assert_relative_eq!(generalized_rabi(311.83, 1000.0), 1047.49, max_relative = 1e-5);
    // Reduced shift is exactly Ω̄ − Ω₁ and the guarded form loses nothing.
    let exact = generalized_rabi(311.83, 1000.0) - 1000.0;
    assert_relative_eq!(reduced_shift(311.83, 1000.0), exact, max_relative = 1e-12);
    assert_relative_eq!(reduced_shift(311.83, 1000.0), 47.49, max_relative = 1e-3);
    assert_relative_eq!(reduced_shift(300.0, 1000.0), 44.03, max_relative = 1e-3);
    assert_relative_eq!(reduced_shift(174.57, 1000.0), 15.12, max_relative = 1e-3);
    // Leading-order form overestimates slightly for δ/Ω₁ ~ 0.3.
    assert_relative_eq!(magnus_h2_coefficient(311.83, 1000.0), 48.62, max_relative = 1e-3);
    assert!(magnus_h2_coefficient(311.83, 1000.0) > reduced_shift(311.83, 1000.0));
    // Ω₁ → 0 limit: the reduced shift is the bare shift.
    assert_relative_eq!(reduced_shift(250.0, 0.0), 250.0, max_relative = 1e-12);
}

#[test]
fn heteronuclear_splitting_of_the_dressed_line() {
    let delta = shift_hz(3.799, &field_2t());
    let up = het_effective_rabi(delta, 11.0, 0.5, 1000.0);
    let down = het_effective_rabi(delta, 11.0, -0.5, 1000.0);
    assert_relative_eq!(up, 1052.73, max_relative = 1e-5);
    assert_relative_eq!(down, 1049.34, max_relative = 1e-5);
    assert_abs_diff_eq!(up - down, 3.39, epsilon = 5e-3);
}

#[test]
fn third_order_positions_for_robust_encoding() {
    assert_relative_eq!(third_order_shift(375.0, 1000.0), 26.37, max_relative = 1e-3);
    assert_relative_eq!(third_order_shift(400.0, 1000.0), 32.00, max_relative = 1e-3);
    assert_relative_eq!(third_order_shift(425.0, 1000.0), 38.38, max_relative = 1e-3);
}

#[test]
fn rescaled_field_diagnostic() {
    // The driven spectrum maps onto free evolution at B̃ = (δ/2Ω₁)·B₀: the
    // reduced shift of a line at δ equals the bare shift at the rescaled field.
    let field = field_2t();
    let delta = shift_hz(3.662, &field);
    let b_eff = rescaled_field(delta, 1000.0, field.b0_tesla);
    let rescaled = FieldConfig::new(b_eff).unwrap();
    assert_relative_eq!(
        shift_hz(3.662, &rescaled),
        magnus_h2_coefficient(delta, 1000.0),
        max_relative = 1e-12
    );
}

#[test]
fn preset_molecules_have_expected_structure() {
    let ma = Molecule::methyl_acetate();
    assert_eq!(ma.n_groups(), 2);
    assert_eq!(ma.groups[0], SpinGroup { count: 3, delta_ppm: 2.05 });
    assert_eq!(ma.groups[1], SpinGroup { count: 3, delta_ppm: 3.662 });
    assert!(!ma.requires_product_space());
    assert_eq!(ma.simulated_spin_count(), 2);
    assert_eq!(ma.spin_weights(), vec![3.0, 3.0]);
    assert_eq!(ma.passive_branches(), vec![PassiveBranch::empty()]);

    let tmp = Molecule::trimethyl_phosphate();
    assert_eq!(tmp.n_groups(), 1);
    assert_eq!(tmp.groups[0].count, 9);
    assert_eq!(tmp.simulated_spin_count(), 1);
    let branches = tmp.passive_branches();
    assert_eq!(branches.len(), 2);
    for b in &branches {
        assert_eq!(b.weight, 0.5);
    }
    let field = field_2t();
    let shifts: Vec<f64> = branches
        .iter()
        .map(|b| tmp.effective_shift_hz(0, &field, b))
        .collect();
    let base = shift_hz(3.799, &field);
    assert_relative_eq!(shifts[0], base + 5.5, max_relative = 1e-12);
    assert_relative_eq!(shifts[1], base - 5.5, max_relative = 1e-12);

    let ce = Molecule::chloroethane();
    assert!(ce.requires_product_space());
    assert_eq!(ce.simulated_spin_count(), 5);
    assert_eq!(ce.spin_weights(), vec![1.0; 5]);
    assert_eq!(ce.spin_system().unwrap().dim(), 32);
    assert_relative_eq!(ce.j_hom_hz[0][1], 7.232);

    for name in ["methyl_acetate", "trimethyl_phosphate", "chloroethane"] {
        assert!(Molecule::preset(name).is_some());
    }
    assert!(Molecule::preset("benzene").is_none());
}

#[test]
fn invalid_molecules_are_rejected() {
    assert!(matches!(
        Molecule::new("m", vec![], vec![], vec![]),
        Err(MoleculeError::NoGroups)
    ));
    let g = |count, ppm| SpinGroup { count, delta_ppm: ppm };
    assert!(matches!(
        Molecule::new("m", vec![g(0, 1.0)], vec![vec![0.0]], vec![]),
        Err(MoleculeError::EmptyGroup(0))
    ));
    assert!(matches!(
        Molecule::new("m", vec![g(1, 1.0), g(1, 2.0)], vec![vec![0.0]], vec![]),
        Err(MoleculeError::JMatrixShape { .. })
    ));
    assert!(matches!(
        Molecule::new(
            "m",
            vec![g(1, 1.0), g(1, 2.0)],
            vec![vec![0.0, 1.0], vec![2.0, 0.0]],
            vec![]
        ),
        Err(MoleculeError::JMatrixAsymmetric { .. })
    ));
    assert!(matches!(
        Molecule::new(
            "m",
            vec![g(1, 1.0)],
            vec![vec![0.0]],
            vec![PassiveSpin { spin: 1.0, j_het_hz: vec![5.0] }]
        ),
        Err(MoleculeError::UnsupportedPassiveSpin(0, _))
    ));
    assert!(matches!(
        Molecule::new(
            "m",
            vec![g(1, 1.0)],
            vec![vec![0.0]],
            vec![PassiveSpin::spin_half(vec![5.0, 6.0])]
        ),
        Err(MoleculeError::PassiveCouplingShape { .. })
    ));
    // 7 + 7 coupled spins exceed the register budget.
    assert!(matches!(
        Molecule::new(
            "m",
            vec![g(7, 1.0), g(7, 2.0)],
            vec![vec![0.0, 3.0], vec![3.0, 0.0]],
            vec![]
        ),
        Err(MoleculeError::SpinBudget { required: 14 })
    ));
}

#[test]
fn hamiltonian_eigenvalues_are_the_dressed_energies() {
    // Single reduced spin, driven: eigenvalues ±Ω̄_rad/2.
    let mol = Molecule::new(
        "single",
        vec![SpinGroup { count: 1, delta_ppm: 3.662 }],
        vec![vec![0.0]],
        vec![],
    )
    .unwrap();
    let field = field_2t();
    let delta_hz = shift_hz(3.662, &field);
    let omega1_rad = TAU * 1000.0;
    let h = build_hamiltonian(
        &mol,
        &field,
        0.0,
        Drive::On { omega1: omega1_rad, phase: FRAC_PI_2, eps: 0.0 },
        &PassiveBranch::empty(),
    )
    .unwrap();
    assert!((&h - h.adjoint()).norm() < 1e-12);
    let mut eigs: Vec<f64> = h.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let omega_bar_rad = TAU * generalized_rabi(delta_hz, 1000.0);
    assert_relative_eq!(eigs[0], -0.5 * omega_bar_rad, max_relative = 1e-10);
    assert_relative_eq!(eigs[1], 0.5 * omega_bar_rad, max_relative = 1e-10);

    // Detuning noise adds directly to the z rate.
    let xi = 100.0;
    let h_noisy = build_hamiltonian(&mol, &field, xi, Drive::Off, &PassiveBranch::empty()).unwrap();
    let mut eigs: Vec<f64> = h_noisy.symmetric_eigen().eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let omega_z = TAU * delta_hz + xi;
    assert_relative_eq!(eigs[1], 0.5 * omega_z, max_relative = 1e-10);
}

#[test]
fn amplitude_noise_scales_the_drive() {
    let mol = Molecule::new(
        "single",
        vec![SpinGroup { count: 1, delta_ppm: 0.0 }],
        vec![vec![0.0]],
        vec![],
    )
    .unwrap();
    let field = field_2t();
    let on = |eps| {
        build_hamiltonian(
            &mol,
            &field,
            0.0,
            Drive::On { omega1: TAU * 500.0, phase: FRAC_PI_2, eps },
            &PassiveBranch::empty(),
        )
        .unwrap()
    };
    let h0 = on(0.0);
    let h1 = on(0.02);
    assert_relative_eq!(h1.norm(), 1.02 * h0.norm(), max_relative = 1e-12);
}

#[test]
fn coupling_term_is_isotropic() {
    let ce = Molecule::chloroethane();
    let hj = j_hamiltonian(&ce).unwrap().expect("coupled molecule");
    let sys = ce.spin_system().unwrap();
    // Σ I⃗·I⃗ commutes with every collective rotation axis and with the
    // collective z operator that carries common-mode dephasing.
    for axis in [Axis::X, Axis::Y, Axis::Z] {
        let c = collective_operator(&sys, axis).unwrap();
        assert!((&hj * &c - &c * &hj).norm() < 1e-9, "axis {axis:?}");
    }
    assert!(j_hamiltonian(&Molecule::methyl_acetate()).unwrap().is_none());
}

#[test]
fn passive_branch_mismatch_is_rejected() {
    let tmp = Molecule::trimethyl_phosphate();
    let field = field_2t();
    let err = build_hamiltonian(&tmp, &field, 0.0, Drive::Off, &PassiveBranch::empty());
    assert!(matches!(
        err,
        Err(MoleculeError::PassiveStateShape { expected: 1, got: 0 })
    ));
}
