use std::f64::consts::{FRAC_1_SQRT_2, PI};

use approx::assert_relative_eq;
use kerrmode::fiber::{solve_vector_modes, FiberSpec, GuidedMode, ModeId};
use kerrmode::fields::*;
use kerrmode::Error;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use std::sync::OnceLock;

fn modes() -> &'static Vec<GuidedMode> {
    static M: OnceLock<Vec<GuidedMode>> = OnceLock::new();
    M.get_or_init(|| solve_vector_modes(&FiberSpec::preset_780hp(), 647.0).unwrap())
}

fn basis() -> &'static Vec<VectorField> {
    static B: OnceLock<Vec<VectorField>> = OnceLock::new();
    B.get_or_init(|| synthesize_basis(modes(), GridSpec::for_core(2.3)).unwrap())
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[test]
fn mode_fields_are_normalized_and_polarized() {
    let b = basis();
    for f in b {
        assert_relative_eq!(f.power(), 1.0, max_relative = 1e-12);
    }
    let he11x = &b[0];
    let px: f64 = he11x.ex.iter().map(|v| v.norm_sqr()).sum();
    let py: f64 = he11x.ey.iter().map(|v| v.norm_sqr()).sum();
    assert!(py / px < 1e-3);
    let te = modes().iter().find(|m| m.id == ModeId::TE01).unwrap();
    assert_eq!(te.field(0.0, 0.0), (0.0, 0.0));
    // TE01 is purely azimuthal: E·r̂ = 0 everywhere
    for (x, y) in [(1.0, 0.3), (-0.7, 2.1), (3.0, -4.0)] {
        let (ex, ey) = te.field(x, y);
        assert!((ex * x + ey * y).abs() < 1e-14);
    }
}

#[test]
fn field_is_continuous_at_core_boundary() {
    for m in modes() {
        let a = m.core_radius_um;
        let inside = m.radial(a * (1.0 - 1e-12));
        let outside = m.radial(a);
        assert!((inside - outside).abs() < 1e-9, "{}", m.id);
    }
}

#[test]
fn too_coarse_grid_is_rejected() {
    let m = &modes()[0];
    let coarse = GridSpec { half_width_um: 40.0, samples_per_axis: 64 };
    assert!(matches!(synthesize_mode_field(m, coarse), Err(Error::Resolution(_))));
}

#[test]
fn basis_is_grid_orthonormal() {
    let b = basis();
    for i in 0..6 {
        for j in 0..6 {
            let ip = b[i].inner(&b[j]).unwrap();
            if i == j {
                assert_relative_eq!(ip.re, 1.0, max_relative = 1e-12);
            } else {
                assert!(ip.norm() < 1e-3, "<{i}|{j}> = {ip}");
            }
        }
    }
}

#[test]
fn lp_combinations() {
    let h = FRAC_1_SQRT_2;
    let x_v = lp_combination(LpLabel::Lp11x, Polarization::V);
    let want = [0.0, 0.0, h, 0.0, h, 0.0];
    for (got, w) in x_v.coeffs().iter().zip(want) {
        assert!((got - c(w, 0.0)).norm() < 1e-15);
    }
    let v01 = lp_combination(LpLabel::Lp01, Polarization::V);
    assert_eq!(v01.amplitudes(), [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);

    let y_v = lp_combination(LpLabel::Lp11y, Polarization::V);
    assert!(x_v.overlap(&y_v) < 1e-30);
    let nonzero: Vec<f64> = y_v.amplitudes().into_iter().filter(|a| *a > 0.0).collect();
    assert_eq!(nonzero.len(), 2);
    assert_relative_eq!(nonzero[0], nonzero[1], max_relative = 1e-15);

    // the six logical states of one polarization family are mutually orthogonal
    let all: Vec<ModalState> = [LpLabel::Lp01, LpLabel::Lp11x, LpLabel::Lp11y]
        .iter()
        .flat_map(|l| [Polarization::H, Polarization::V].map(|p| lp_combination(*l, p)))
        .collect();
    for i in 0..6 {
        for j in 0..6 {
            let o = all[i].overlap(&all[j]);
            assert!((o - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
        }
    }
}

#[test]
fn lp11x_vertical_is_vertically_polarized_lobe_pair() {
    let f = superpose(&lp_combination(LpLabel::Lp11x, Polarization::V), basis()).unwrap();
    let s = stokes_map(&f);
    let (mut s0, mut s1) = (0.0, 0.0);
    for i in 0..s.s0.len() {
        s0 += s.s0[i];
        s1 += s.s1[i];
    }
    // only the slight radial mismatch between TE01 and HE21 leaks into H
    assert!(s1 / s0 < -0.999);
    let u = azimuthal_unwrap(&s.s0, &f.grid, (0.0, 0.0)).unwrap();
    assert!(u[0] > 0.999 && u[180] > 0.999);
    assert!(u[90] < 1e-2 && u[270] < 1e-2);
}

#[test]
fn superpose_identity_and_linearity() {
    let b = basis();
    let f0 = superpose(&ModalState::basis_mode(0), b).unwrap();
    assert_eq!(f0, b[0]);

    let s1 = ModalState::new([c(0.3, 0.1), c(0.0, 0.5), c(-0.2, 0.2), c(0.4, 0.0), c(0.1, -0.3), c(0.2, 0.2)]).unwrap();
    let s2 = lp_combination(LpLabel::Lp11y, Polarization::R);
    let (alpha, beta) = (c(0.6, -0.2), c(-0.1, 0.7));
    let mut mixed = [c(0.0, 0.0); 6];
    for k in 0..6 {
        mixed[k] = alpha * s1.coeffs()[k] + beta * s2.coeffs()[k];
    }
    let g = kerrmode::fields::superpose(&ModalState::new(mixed).unwrap(), b).unwrap();
    let norm = mixed.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let g1 = superpose(&s1, b).unwrap();
    let g2 = superpose(&s2, b).unwrap();
    // ModalState::new normalizes and re-gauges; undo both before comparing
    let first = mixed.iter().find(|x| x.norm() > 1e-10).unwrap();
    let undo = first / first.norm() * norm;
    for i in 0..g.ex.len() {
        let lin = alpha * g1.ex[i] + beta * g2.ex[i];
        assert!((g.ex[i] * undo - lin).norm() < 1e-12);
        let lin = alpha * g1.ey[i] + beta * g2.ey[i];
        assert!((g.ey[i] * undo - lin).norm() < 1e-12);
    }

    let wrong = vec![b[0].clone(); 5];
    assert!(matches!(superpose(&s1, &wrong), Err(Error::Shape(_))));
}

#[test]
fn lp01_plus_lp11_is_a_displaced_lobe() {
    let s = combine(&[
        (c(FRAC_1_SQRT_2, 0.0), lp_combination(LpLabel::Lp01, Polarization::V)),
        (c(FRAC_1_SQRT_2, 0.0), lp_combination(LpLabel::Lp11x, Polarization::V)),
    ])
    .unwrap();
    let f = superpose(&s, basis()).unwrap();
    let map = stokes_map(&f);
    let (cx, cy) = centroid(&map.s0, &f.grid).unwrap();
    assert!(cx > 0.5, "centroid x = {cx}");
    assert!(cy.abs() < 1e-9);
    // constructive interference on +x, destructive on −x
    let u = azimuthal_unwrap(&map.s0, &f.grid, (0.0, 0.0)).unwrap();
    let peak = u.iter().cloned().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
    assert!(peak <= 5 || peak >= 355, "peak at {peak}°");
    assert!(u[180] < 0.5);
}

#[test]
fn stokes_conventions() {
    let f = superpose(&lp_combination(LpLabel::Lp01, Polarization::V), basis()).unwrap();
    let s = stokes_map(&f);
    for i in 0..s.s0.len() {
        if s.s0[i] > 1e-20 {
            assert!((s.s1[i] / s.s0[i] + 1.0).abs() < 1e-12);
            assert!(s.s2[i].abs() < 1e-12 * s.s0[i] && s.s3[i].abs() < 1e-12 * s.s0[i]);
        }
    }
    let r = stokes_map(&superpose(&lp_combination(LpLabel::Lp01, Polarization::R), basis()).unwrap());
    let centre = r.grid.samples_per_axis / 2 * (r.grid.samples_per_axis + 1);
    assert!(r.s3[centre] > 0.99 * r.s0[centre]);
}

#[test]
fn beating_vector_modes_give_spatially_varying_polarization() {
    // Equal TE01/HE21a weights with a quarter-wave relative phase, as reached
    // after a quarter beat length of propagation.
    let s = ModalState::new([
        c(0.0, 0.0),
        c(0.0, 0.0),
        c(FRAC_1_SQRT_2, 0.0),
        c(0.0, 0.0),
        c(0.0, FRAC_1_SQRT_2),
        c(0.0, 0.0),
    ])
    .unwrap();
    let map = stokes_map(&superpose(&s, basis()).unwrap());
    let n = map.grid.samples_per_axis;
    let mut orientations = Vec::new();
    for (ix, iy) in [(n * 3 / 4, n / 2), (n / 2, n * 3 / 4), (n * 5 / 8, n * 5 / 8)] {
        let i = iy * n + ix;
        orientations.push(0.5 * map.s2[i].atan2(map.s1[i]));
    }
    let spread =
        orientations.iter().cloned().fold(f64::MIN, f64::max) - orientations.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread > 0.1, "{orientations:?}");
}

#[test]
fn stokes_round_trip_recovers_field() {
    let s = ModalState::new([c(0.3, 0.1), c(0.0, 0.5), c(-0.2, 0.2), c(0.4, 0.0), c(0.1, -0.3), c(0.2, 0.2)]).unwrap();
    let f = superpose(&s, basis()).unwrap();
    let back = stokes_map(&f).to_field();
    for i in 0..f.ex.len() {
        assert!((back.ex[i].norm() - f.ex[i].norm()).abs() < 1e-9);
        assert!((back.ey[i].norm() - f.ey[i].norm()).abs() < 1e-9);
        // relative phase: Ex* Ey agrees
        let a = f.ex[i].conj() * f.ey[i];
        let b = back.ex[i].conj() * back.ey[i];
        assert!((a - b).norm() < 1e-9);
    }
}

#[test]
fn stokes_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let map = stokes_map(&superpose(&lp_combination(LpLabel::Lp11x, Polarization::D), basis()).unwrap());
    write_stokes_csv(&path, &map).unwrap();
    let back = read_stokes_csv(&path).unwrap();
    assert_eq!(back.grid.samples_per_axis, map.grid.samples_per_axis);
    assert_relative_eq!(back.grid.half_width_um, map.grid.half_width_um, max_relative = 1e-10);
    let peak = map.s0.iter().cloned().fold(0.0, f64::max);
    for k in 0..4 {
        for (a, b) in map.component(k).iter().zip(back.component(k)) {
            assert!((a - b).abs() <= 1e-11 * peak);
        }
    }
    std::fs::write(
        &path,
        "x_um,y_um,s0,s1,s2,s3
0,0,1,0,0,0
1,0,1,0,0,0
0,1,1,0,0,0
",
    )
    .unwrap();
    assert!(matches!(read_stokes_csv(&path), Err(Error::Parse { .. })));
}

#[test]
fn unwrap_of_fundamental_mode_is_flat() {
    let b = basis();
    let s = stokes_map(&b[1]);
    let u = azimuthal_unwrap(&s.s0, &s.grid, (0.0, 0.0)).unwrap();
    let min = u.iter().cloned().fold(f64::MAX, f64::min);
    assert!(1.0 - min < 0.02, "ripple {}", 1.0 - min);

    let raw = azimuthal_power(&s.s0, &s.grid, (0.0, 0.0)).unwrap();
    assert_relative_eq!(raw.iter().sum::<f64>(), s.total_power(), max_relative = 1e-12);

    let outside = azimuthal_unwrap(&s.s0, &s.grid, (100.0, 0.0));
    assert!(matches!(outside, Err(Error::Domain(_))));
}

#[test]
fn unwrap_is_rotation_equivariant() {
    let m = *modes().iter().find(|m| m.id == ModeId::TM01).unwrap();
    let grid = GridSpec::for_core(2.3);
    // cos²φ lobe pattern of an LP11x intensity, and the same rotated by 30°
    let lobe = |rot: f64| {
        VectorField::sample(grid, move |x, y| {
            let phi = y.atan2(x) - rot;
            let r = x.hypot(y);
            (C64::new(m.radial(r) * phi.cos(), 0.0), C64::new(0.0, 0.0))
        })
    };
    let u0 = azimuthal_unwrap(&stokes_map(&lobe(0.0)).s0, &grid, (0.0, 0.0)).unwrap();
    let u30 = azimuthal_unwrap(&stokes_map(&lobe(30.0 * PI / 180.0)).s0, &grid, (0.0, 0.0)).unwrap();
    for k in 0..360 {
        assert!((u30[(k + 30) % 360] - u0[k]).abs() < 0.02, "bin {k}");
    }
    // analytic cos² profile
    for k in (0..360).step_by(15) {
        let want = (k as f64 * PI / 180.0).cos().powi(2);
        assert!((u0[k] - want).abs() < 0.02, "bin {k}: {} vs {want}", u0[k]);
    }
}

fn arb_state() -> impl Strategy<Value = ModalState> {
    prop::array::uniform12(-1.0f64..1.0).prop_filter_map("zero", |v| {
        let c: [C64; 6] = std::array::from_fn(|k| C64::new(v[2 * k], v[2 * k + 1]));
        ModalState::new(c).ok()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn state_invariants(s in arb_state(), phase in -PI..PI) {
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
        let first = s.coeffs().iter().find(|c| c.norm() > 1e-10).unwrap();
        prop_assert!(first.im == 0.0 && first.re >= 0.0);
        // a global phase does not change the gauged state
        let rotated = ModalState::new(s.coeffs().map(|c| c * C64::from_polar(1.0, phase))).unwrap();
        for (a, b) in rotated.coeffs().iter().zip(s.coeffs()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
        let lp = s.lp_coefficients();
        let back = ModalState::from_lp_coefficients(lp).unwrap();
        for (a, b) in back.coeffs().iter().zip(s.coeffs()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn superposition_conserves_power_and_purity(s in arb_state()) {
        let f = superpose(&s, basis()).unwrap();
        prop_assert!((f.power() - 1.0).abs() < 2e-3);
        let map = stokes_map(&f);
        let peak = map.s0.iter().cloned().fold(0.0, f64::max);
        for i in (0..map.s0.len()).step_by(97) {
            let p2 = map.s1[i].powi(2) + map.s2[i].powi(2) + map.s3[i].powi(2);
            prop_assert!(map.s0[i] >= 0.0);
            prop_assert!((p2.sqrt() - map.s0[i]).abs() <= 1e-9 * peak);
        }
        let raw = azimuthal_power(&map.s0, &map.grid, (0.0, 0.0)).unwrap();
        prop_assert!((raw.iter().sum::<f64>() / map.total_power() - 1.0).abs() < 1e-6);
    }
}
