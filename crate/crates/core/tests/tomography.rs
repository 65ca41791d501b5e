use std::f64::consts::PI;

use kerrmode::fields::{lp_combination, LpLabel, ModalState, Polarization};
use kerrmode::tomography::*;
use kerrmode::Error;
use nalgebra::{Matrix6, Vector6};
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pure(rng: &mut impl Rng) -> DensityMatrix {
    let v = Vector6::from_fn(|_, _| C64::from_polar(rng.gen_range(0.05..1.0), rng.gen_range(-PI..PI)));
    DensityMatrix::pure(&v).unwrap()
}

fn exact_counts(rho: &DensityMatrix, projectors: &[Projector], shots: u64) -> Vec<CountRecord> {
    // noiseless, scaled so rounding stays far below the 1e-4 fidelity budget
    projectors
        .iter()
        .map(|p| CountRecord { label: p.label, counts: (rho.expectation(p) * shots as f64).round() as u64, shots })
        .collect()
}

fn assert_monotone(res: &MleResult) {
    for w in res.log_likelihood.windows(2) {
        assert!(w[1] >= w[0], "log-likelihood decreased: {} -> {}", w[0], w[1]);
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn mub_is_mutually_unbiased_and_orthonormal() {
    let mub = build_mub3();
    assert_eq!(mub.iter().map(|b| b.len()).sum::<usize>(), 12);
    let dot = |a: &[C64; 3], b: &[C64; 3]| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>();
    for (i, bi) in mub.iter().enumerate() {
        for (j, bj) in mub.iter().enumerate() {
            for (si, a) in bi.iter().enumerate() {
                for (sj, b) in bj.iter().enumerate() {
                    let o = dot(a, b).norm_sqr();
                    let expect = if i != j {
                        1.0 / 3.0
                    } else if si == sj {
                        1.0
                    } else {
                        0.0
                    };
                    assert!((o - expect).abs() < 1e-12, "bases {i},{j} states {si},{sj}: {o}");
                }
            }
        }
    }
}

#[test]
fn projector_set_is_informationally_complete() {
    let set = build_projector_set();
    assert_eq!(set.len(), 72);
    assert_eq!(measurement_rank(&set), 36);
    for p in &set {
        let m = p.matrix();
        assert!((m * m - m).norm() < 1e-12);
        assert!((m.trace().re - 1.0).abs() < 1e-12);
        let vals = m.symmetric_eigenvalues();
        assert_eq!(vals.iter().filter(|v| v.abs() > 1e-10).count(), 1);
    }
    // one spatial basis alone cannot resolve spatial coherences
    let partial: Vec<_> = set.iter().filter(|p| p.label.mub_index == 0).cloned().collect();
    assert!(measurement_rank(&partial) < 36);
}

#[test]
fn modal_states_map_to_logical_density() {
    let he11y = ModalState::basis_mode(1);
    let rho = modal_state_to_density(&he11y).unwrap();
    let mut expect = Matrix6::<C64>::zeros();
    expect[(1, 1)] = C64::new(1.0, 0.0);
    assert!((rho.matrix() - expect).norm() < 1e-14);
    let lp11y_h = modal_state_to_density(&lp_combination(LpLabel::Lp11y, Polarization::H)).unwrap();
    assert!((lp11y_h.matrix()[(4, 4)].re - 1.0).abs() < 1e-14);
    let a = modal_state_to_density(&lp_combination(LpLabel::Lp01, Polarization::D)).unwrap();
    let b = modal_state_to_density(&lp_combination(LpLabel::Lp01, Polarization::A)).unwrap();
    assert!((purity(&a) - 1.0).abs() < 1e-12);
    assert!((a.matrix().trace().re - 1.0).abs() < 1e-12);
    let mix = DensityMatrix::mix(&a, &b, 0.5).unwrap();
    assert!((purity(&mix) - 0.5).abs() < 1e-12);
}

#[test]
fn metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rho = random_pure(&mut rng);
    assert!((fidelity(&rho, &rho) - 1.0).abs() < 1e-9);
    let e = |i: usize| {
        DensityMatrix::pure(&Vector6::from_fn(|k, _| C64::new(if k == i { 1.0 } else { 0.0 }, 0.0))).unwrap()
    };
    assert!(fidelity(&e(0), &e(3)) < 1e-12);
    let mixed = DensityMatrix::maximally_mixed();
    assert!((purity(&mixed) - 1.0 / 6.0).abs() < 1e-14);
    // pure vs mixed: F = ⟨ψ|σ|ψ⟩
    assert!((fidelity(&rho, &mixed) - 1.0 / 6.0).abs() < 1e-9);
}

#[test]
fn simulated_counts_follow_expectations() {
    let set = build_projector_set();
    let mixed = DensityMatrix::maximally_mixed();
    for e in expected_counts(&mixed, &set, 6000, 0.0) {
        assert!((e - 1000.0).abs() < 1e-9);
    }
    let rho = DensityMatrix::pure(&set[17].vector()).unwrap();
    assert!((expected_counts(&rho, &set, 500, 0.0)[17] - 500.0).abs() < 1e-9);
    let a = simulate_counts(&rho, &set, 1000, 9).unwrap();
    assert_eq!(a, simulate_counts(&rho, &set, 1000, 9).unwrap());
    assert_ne!(a, simulate_counts(&rho, &set, 1000, 10).unwrap());
    let bg = expected_counts(&mixed, &set, 6000, 1e-3);
    assert!((bg[0] - 1006.0).abs() < 1e-9);
}

#[test]
fn noiseless_pure_states_are_reconstructed() {
    let set = build_projector_set();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let truth = random_pure(&mut rng);
        let res = mle_reconstruct(&exact_counts(&truth, &set, 1 << 40), &set, &MleConfig::default()).unwrap();
        assert_monotone(&res);
        let f = fidelity(&res.rho, &truth);
        assert!(f > 0.9999, "fidelity {f} after {} iterations", res.iterations);
    }
}

#[test]
fn uniform_counts_give_maximally_mixed() {
    let set = build_projector_set();
    let counts: Vec<_> = set.iter().map(|p| CountRecord { label: p.label, counts: 1000, shots: 6000 }).collect();
    let res = mle_reconstruct(&counts, &set, &MleConfig::default()).unwrap();
    let diff = res.rho.matrix() - Matrix6::<C64>::identity() / C64::new(6.0, 0.0);
    assert!(diff.iter().all(|z| z.norm() < 1e-6));
}

#[test]
fn poisson_counts_reconstruct_with_high_fidelity() {
    let set = build_projector_set();
    let mut medians = Vec::new();
    for shots in [1_000u64, 10_000, 100_000] {
        let mut fids = Vec::new();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let truth = random_pure(&mut rng);
            let counts = simulate_counts(&truth, &set, shots, seed).unwrap();
            let res = mle_reconstruct(&counts, &set, &MleConfig::default()).unwrap();
            assert_monotone(&res);
            fids.push(fidelity(&res.rho, &truth));
        }
        medians.push(median(fids));
    }
    assert!(medians[2] > 0.99, "medians {medians:?}");
    assert!(medians[0] <= medians[1] && medians[1] <= medians[2], "medians {medians:?}");
}

#[test]
fn reconstruction_is_permutation_equivariant() {
    let set = build_projector_set();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let truth = random_pure(&mut rng);
    let counts = simulate_counts(&truth, &set, 20_000, 4).unwrap();
    let a = mle_reconstruct(&counts, &set, &MleConfig::default()).unwrap();
    // relabel spatial modes (0,1,2) → (2,0,1) and swap H/V in every projector
    let permuted: Vec<Projector> = set
        .iter()
        .map(|p| Projector {
            spatial: [p.spatial[1], p.spatial[2], p.spatial[0]],
            polarization: [p.polarization[1], p.polarization[0]],
            label: p.label,
        })
        .collect();
    let b = mle_reconstruct(&counts, &permuted, &MleConfig::default()).unwrap();
    let perm = |i: usize| {
        let (s, p) = (i / 2, i % 2);
        2 * ((s + 1) % 3) + (1 - p)
    };
    let mut u = Matrix6::<C64>::zeros();
    for i in 0..6 {
        u[(perm(i), i)] = C64::new(1.0, 0.0);
    }
    let expect = a.rho.transformed(&u.adjoint()).unwrap();
    assert!((expect.matrix() - b.rho.matrix()).norm() < 1e-8);
}

#[test]
fn invalid_count_sets_are_rejected() {
    let set = build_projector_set();
    let rho = DensityMatrix::maximally_mixed();
    let counts = simulate_counts(&rho, &set, 100, 0).unwrap();
    let partial: Vec<_> = counts.iter().filter(|c| c.label.mub_index < 2).cloned().collect();
    assert!(matches!(
        mle_reconstruct(&partial, &set, &MleConfig::default()),
        Err(Error::RankDeficient { needed: 36, .. })
    ));
    let zeros: Vec<_> = counts.iter().map(|c| CountRecord { counts: 0, ..*c }).collect();
    assert!(matches!(mle_reconstruct(&zeros, &set, &MleConfig::default()), Err(Error::DegenerateData(_))));
}

#[test]
fn counts_and_density_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let set = build_projector_set();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rho = random_pure(&mut rng);
    let counts = simulate_counts(&rho, &set, 1000, 5).unwrap();
    let path = dir.path().join("counts.csv");
    write_counts_csv(&path, &counts).unwrap();
    assert_eq!(read_counts_csv(&path).unwrap(), counts);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("mub_index,state_index,pol_index,counts,shots"));

    let json = serde_json::to_string(&DensityJson::from(&rho)).unwrap();
    let back: DensityJson = serde_json::from_str(&json).unwrap();
    assert_eq!(DensityMatrix::try_from(&back).unwrap(), rho);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn reconstructions_are_physical(seed in any::<u64>(), shots in 50u64..5000) {
        let set = build_projector_set();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_pure(&mut rng);
        let b = random_pure(&mut rng);
        let truth = DensityMatrix::mix(&a, &b, rng.gen_range(0.0..1.0)).unwrap();
        let counts = simulate_counts(&truth, &set, shots, seed).unwrap();
        let res = mle_reconstruct(&counts, &set, &MleConfig { max_iter: 2000, ..Default::default() }).unwrap();
        assert_monotone(&res);
        // constructor re-validates the invariants
        prop_assert!(DensityMatrix::new(*res.rho.matrix()).is_ok());
        let p = purity(&res.rho);
        prop_assert!((1.0 / 6.0 - 1e-12..=1.0 + 1e-12).contains(&p));
    }
}
