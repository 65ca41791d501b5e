use approx::assert_relative_eq;
use kerrmode::fiber::*;
use kerrmode::special::J0_FIRST_ZERO;
use kerrmode::Error;
use proptest::prelude::*;

fn na013() -> FiberSpec {
    FiberSpec::silica_with_na(2.2, 0.13, 0.05)
}

/// Fixed-index fiber whose V at 647 nm equals `v`.
fn fixed_fiber_with_v(v: f64, n_clad: f64, na: f64) -> FiberSpec {
    let a = v * 0.647 / (2.0 * std::f64::consts::PI * na);
    FiberSpec {
        core_radius_um: a,
        index: IndexModel::Fixed { n_core: (n_clad * n_clad + na * na).sqrt(), n_clad },
        length_m: 1.0,
    }
}

#[test]
fn lp_group_counts() {
    // V ≈ 2.27 at 790 nm, ≈ 2.78 at 647 nm
    assert_eq!(count_guided_lp_groups(&na013(), 790.0).unwrap(), 1);
    assert_eq!(count_guided_lp_groups(&na013(), 647.0).unwrap(), 2);
    // long wavelength edge of the window: small V still guides LP01
    let thin = FiberSpec::silica_with_na(0.5, 0.05, 1.0);
    assert!(thin.v_number(1100.0).unwrap() < 0.2);
    assert_eq!(count_guided_lp_groups(&thin, 1100.0).unwrap(), 1);
}

#[test]
fn lp_roots_at_reference_v_numbers() {
    let at_278 = solve_lp_modes(&fixed_fiber_with_v(2.78, 1.457, 0.13), 647.0).unwrap();
    let labels: Vec<_> = at_278.iter().map(|m| (m.l, m.m)).collect();
    assert_eq!(labels, vec![(0, 1), (1, 1)]);
    let at_227 = solve_lp_modes(&fixed_fiber_with_v(2.27, 1.457, 0.13), 647.0).unwrap();
    assert_eq!(at_227.len(), 1);
    assert_eq!(at_227[0].label(), "LP01");
}

#[test]
fn cutoff_is_strict() {
    let exact = solve_lp_modes(&fixed_fiber_with_v(J0_FIRST_ZERO, 1.457, 0.13), 647.0).unwrap();
    assert_eq!(exact.len(), 1, "LP11 must not be guided exactly at cutoff");
    // 2.405 lies just above the J0 zero, so LP11 is (barely) guided there
    let above = solve_lp_modes(&fixed_fiber_with_v(2.405, 1.457, 0.13), 647.0).unwrap();
    assert_eq!(above.len(), 2);
    assert!(above[1].w < 0.05);
}

#[test]
fn preset_vector_modes_at_signal_wavelength() {
    let modes = solve_vector_modes(&FiberSpec::preset_780hp(), 647.0).unwrap();
    let ids: Vec<_> = modes.iter().map(|m| m.id).collect();
    assert_eq!(ids, vec![ModeId::HE11X, ModeId::HE11Y, ModeId::TE01, ModeId::TM01, ModeId::HE21A, ModeId::HE21B]);
    // scipy.special root-finding oracle for the same characteristic equations
    let oracle = [
        (ModeId::HE11X, 1.459_541_982_109_211_5),
        (ModeId::TE01, 1.456_986_242_727_083_7),
        (ModeId::TM01, 1.456_984_370_703_655_2),
        (ModeId::HE21A, 1.456_981_300_978_527_3),
    ];
    for (id, n) in oracle {
        assert_relative_eq!(find_mode(&modes, id).unwrap().n_eff, n, max_relative = 1e-12);
    }
    let lp = solve_lp_modes(&FiberSpec::preset_780hp(), 647.0).unwrap();
    for m in &modes {
        let scalar = lp.iter().find(|l| (l.l, l.m) == m.id.lp_label()).unwrap();
        assert!((m.n_eff - scalar.n_eff).abs() < 1e-3);
        assert!(m.residual < 1e-10);
        assert!(m.group_index.is_some());
    }
    assert_eq!(find_mode(&modes, ModeId::HE11X).unwrap().n_eff, find_mode(&modes, ModeId::HE11Y).unwrap().n_eff);
    assert_eq!(find_mode(&modes, ModeId::HE21A).unwrap().n_eff, find_mode(&modes, ModeId::HE21B).unwrap().n_eff);
}

#[test]
fn pump_wavelength_is_single_mode() {
    let modes = solve_vector_modes(&FiberSpec::preset_780hp(), 790.0).unwrap();
    assert_eq!(modes.len(), 2);
    assert!(modes.iter().all(|m| m.id.lp_order() == 0));
}

#[test]
fn weak_guidance_closes_the_lp11_splitting() {
    // Fixed V = 2.8, shrinking NA: intra-group spread decreases monotonically.
    let mut last = f64::INFINITY;
    for na in [0.2, 0.1, 0.05, 0.02] {
        let modes = solve_vector_modes(&fixed_fiber_with_v(2.8, 1.45, na), 647.0).unwrap();
        let group: Vec<f64> = modes.iter().filter(|m| m.id.lp_order() == 1).map(|m| m.n_eff).collect();
        let spread = group.iter().cloned().fold(f64::MIN, f64::max) - group.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < last, "spread {spread} at NA {na}");
        last = spread;
    }
    assert!(last < 1e-7);
}

#[test]
fn beat_lengths() {
    let modes = solve_vector_modes(&FiberSpec::preset_780hp(), 647.0).unwrap();
    let hb = find_mode(&modes, ModeId::HE21B).unwrap();
    let tm = find_mode(&modes, ModeId::TM01).unwrap();
    let lb = beat_length(hb, tm).unwrap();
    assert_relative_eq!(lb, 0.210_768_056_763_824_5, max_relative = 1e-6);
    assert!(lb > 0.18 && lb < 0.72);
    assert_eq!(beat_length(hb, tm).unwrap(), beat_length(tm, hb).unwrap());

    let x = find_mode(&modes, ModeId::HE11X).unwrap();
    let y = find_mode(&modes, ModeId::HE11Y).unwrap();
    assert!(matches!(beat_length(x, y), Err(Error::Degenerate(_))));

    let mut shifted = *x;
    shifted.n_eff += 1e-6;
    assert_relative_eq!(beat_length(x, &shifted).unwrap(), 0.647, max_relative = 1e-9);
}

#[test]
fn walk_off() {
    let fiber = FiberSpec::preset_780hp();
    let d = walk_off_parameter(&fiber, 790.0, 647.0).unwrap();
    assert!(d.dispersive);
    // Oracle: scipy root solve of HE11 with 0.1 µm-scale central differences
    assert_relative_eq!(d.seconds_per_meter, 2.361_249_479_625_4e-11, max_relative = 1e-5);
    let window_ps = d.seconds_per_meter * 0.05 * 1e12;
    assert!((0.9..=2.0).contains(&window_ps), "{window_ps}");

    let swapped = walk_off_parameter(&fiber, 647.0, 790.0).unwrap();
    assert_relative_eq!(swapped.seconds_per_meter, -d.seconds_per_meter, max_relative = 1e-12);
    assert_eq!(walk_off_parameter(&fiber, 700.0, 700.0).unwrap().seconds_per_meter, 0.0);

    let fixed = fixed_fiber_with_v(2.8, 1.45, 0.12);
    let w = walk_off_parameter(&fixed, 790.0, 647.0).unwrap();
    assert!(!w.dispersive);
    assert_eq!(w.seconds_per_meter, 0.0);
}

#[test]
fn overlap_integrals() {
    let fiber = FiberSpec::preset_780hp();
    let pump = solve_vector_modes(&fiber, 790.0).unwrap()[0];
    let sig = solve_vector_modes(&fiber, 647.0).unwrap();
    let f01 = overlap_integral(&pump, find_mode(&sig, ModeId::HE11Y).unwrap()).unwrap();
    let f11 = overlap_integral(&pump, find_mode(&sig, ModeId::TE01).unwrap()).unwrap();
    let fpp = overlap_integral(&pump, &pump).unwrap();
    // scipy.integrate.quad oracle on the same radial profiles
    assert_relative_eq!(fpp, 45_839_861_853.763_85, max_relative = 1e-8);
    assert_relative_eq!(f01, 51_048_370_864.203_54, max_relative = 1e-8);
    assert_relative_eq!(f11, 24_944_759_389.824_03, max_relative = 1e-8);
    assert!(f01 > f11);
    assert_relative_eq!(pump.effective_area().unwrap(), 1.0 / fpp, max_relative = 1e-14);
    let back = overlap_integral(find_mode(&sig, ModeId::TE01).unwrap(), &pump).unwrap();
    assert_relative_eq!(back, f11, max_relative = 1e-9);
}

#[test]
fn overlap_scales_inverse_with_area() {
    // Scaling radius and wavelength together keeps V (and the profile shape).
    let base =
        FiberSpec { core_radius_um: 2.0, index: IndexModel::Fixed { n_core: 1.46, n_clad: 1.455 }, length_m: 1.0 };
    let s = 1.5;
    let scaled = FiberSpec { core_radius_um: 2.0 * s, ..base };
    let m1 = solve_vector_modes(&base, 600.0).unwrap()[0];
    let m2 = solve_vector_modes(&scaled, 900.0).unwrap()[0];
    let f1 = overlap_integral(&m1, &m1).unwrap();
    let f2 = overlap_integral(&m2, &m2).unwrap();
    assert_relative_eq!(f2, f1 / (s * s), max_relative = 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solved_modes_satisfy_invariants(na in 0.08f64..0.16, a in 1.5f64..3.0, lam in 500.0f64..1000.0) {
        let fiber = FiberSpec::silica_with_na(a, na, 0.1);
        let (n1, n2) = fiber.indices(lam).unwrap();
        let v = fiber.v_number(lam).unwrap();
        let modes = solve_vector_modes(&fiber, lam).unwrap();
        let lp = solve_lp_modes(&fiber, lam).unwrap();
        let expected: usize = lp.iter().map(|m| if m.l == 0 { 2 } else { 4 }).sum();
        prop_assert_eq!(modes.len(), expected);
        for m in &modes {
            prop_assert!(m.n_eff > n2 && m.n_eff < n1);
            prop_assert!(m.residual < 1e-10);
            prop_assert!(((m.u * m.u + m.w * m.w) - v * v).abs() <= 1e-12 * v * v);
        }
        if lp.len() >= 2 {
            prop_assert!(lp[0].n_eff > lp[1].n_eff);
        }
    }
}
