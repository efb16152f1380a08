//! Property tests over randomized angles, outlet lengths and samples. The
//! eigenvalue-backed properties use coarse meshes and few cases.

use std::f64::consts::PI;
use std::sync::Arc;

use dirlayer::analysis::*;
use dirlayer::geometry::{build_regular, build_trihedral, lshape_profile, make_layer};
use dirlayer::mesh2d::{mesh_lshape_with, EndCondition};
use proptest::prelude::*;
use rand::SeedableRng;

fn coarse(levels: usize) -> Numerics {
    Numerics { h: 1.0 / 16.0, levels, r: Some(5.0), ..Numerics::default() }
}

fn feasible_trihedral() -> impl Strategy<Value = [f64; 3]> {
    [0.2..2.6f64, 0.2..2.6f64, 0.2..2.6f64].prop_filter("spherical triangle", |a| {
        let s: f64 = a.iter().sum();
        s < 2.0 * PI - 0.1 && (0..3).all(|i| a[i] + 0.05 < a[(i + 1) % 3] + a[(i + 2) % 3])
    })
}

fn regular_layer() -> impl Strategy<Value = (usize, f64)> {
    (3usize..=5).prop_flat_map(|n| (Just(n), 0.3..(2.0 * PI / n as f64 - 0.15)))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn trihedral_dihedrals_obey_law_of_cosines(alpha in feasible_trihedral()) {
        let a = build_trihedral(alpha).unwrap();
        prop_assert!(a.law_of_cosines_defect().unwrap() < 1e-9);
        for (got, want) in a.vertex_angles.iter().zip(alpha) {
            prop_assert!((got - want).abs() < 1e-9);
        }
        // A spherical triangle has angle sum above π.
        prop_assert!(a.dihedral_angles.iter().sum::<f64>() > PI);
        let layer = make_layer(a).unwrap();
        prop_assert!(layer.inscribed_ball_residual < 1e-10);
        for nrm in &layer.angle.normals {
            prop_assert!((nrm.dot(&layer.shift) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn regular_angles_have_equal_dihedrals((n, alpha) in regular_layer()) {
        let a = build_regular(n, alpha).unwrap();
        let b0 = a.dihedral_angles[0];
        prop_assert!(a.dihedral_angles.iter().all(|b| (b - b0).abs() < 1e-12));
        prop_assert!(a.vertex_angles.iter().all(|x| (x - alpha).abs() < 1e-12));
        prop_assert!(make_layer(a).is_ok());
    }

    #[test]
    fn lshape_mesh_covers_the_profile(theta in 0.1..3.0f64, half_r in 3u32..16) {
        let r = half_r as f64 / 2.0;
        let p = lshape_profile(theta, r).unwrap();
        prop_assert!((p.area() - p.shoelace_area()).abs() < 1e-10 * p.area());
        let mesh = Arc::new(mesh_lshape_with(&p, 0.5, EndCondition::Neumann).unwrap());
        mesh.validate().unwrap();
        prop_assert!((mesh.area() - p.area()).abs() < 1e-9 * p.area());
        let fine = mesh.refine();
        fine.validate().unwrap();
        prop_assert!((fine.area() - p.area()).abs() < 1e-9 * p.area());
        prop_assert!((fine.min_angle() - mesh.min_angle()).abs() < 1e-9);
    }

    #[test]
    fn richardson_is_exact_on_quadratic_errors(exact in -10.0..10.0f64, c in -5.0..5.0f64, h0 in 0.05..1.0f64) {
        let vals: Vec<f64> = (0..3).map(|k| exact + c * (h0 / f64::powi(2.0, k)).powi(2)).collect();
        let (e, ind) = richardson(&vals).unwrap();
        prop_assert!((e - exact).abs() < 1e-11);
        prop_assert!(ind < 1e-11);
    }

    #[test]
    fn cutoffs_stay_in_unit_interval(n in 1u32..8, t in -1.0..1.0f64, z in 0.0..600.0f64) {
        let [s, ds, _] = smoothstep(t);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(ds >= 0.0);
        let c = cutoff(n, z)[0];
        prop_assert!((0.0..=1.0).contains(&c));
        let lo = f64::powi(2.0, n as i32);
        if z <= lo || z >= 2.0 * lo {
            prop_assert_eq!(c, 0.0);
        }
        prop_assert_eq!(support_overlap(n, n + 1), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn hardy_inequalities_hold_on_random_samples(seed in any::<u64>()) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let s = HardySample::random(&mut rng);
        let r = hardy_check(&s).unwrap();
        prop_assert!(r.lemma.holds, "lemma fails: {:?}", r.lemma);
        prop_assert!(r.corollary.holds, "corollary fails: {:?}", r.corollary);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn waveguide_value_lies_between_limits(theta in 0.3..2.8f64) {
        let t = lambda1_waveguide(theta, &coarse(2)).unwrap();
        prop_assert!(t.extrapolated > PI2 / 4.0 && t.extrapolated < PI2, "{}", t.extrapolated);
        prop_assert!(nonincreasing_levels(&t.levels));
    }

    #[test]
    fn eigenvalues_ascend_and_levels_decrease(theta in 0.2..2.9f64) {
        let s = solve_waveguide(theta, 4.0, EndCondition::Dirichlet, &coarse(2), 3).unwrap();
        for l in &s.levels {
            let ev = &l.result.eigenvalues;
            prop_assert!(ev.windows(2).all(|w| w[0] <= w[1]), "{:?}", ev);
            prop_assert!(l.result.residuals.iter().all(|r| *r <= 1e-8));
            prop_assert!(l.result.orthonormality_defect <= 1e-8);
        }
        prop_assert!(nonincreasing_levels(&s.records()));
    }

    #[test]
    fn longer_outlets_raise_the_ground_state(theta in 0.5..2.5f64, half_r in 3u32..8) {
        let r = half_r as f64 / 2.0;
        let n = coarse(2);
        let a = solve_waveguide(theta, r, EndCondition::Neumann, &n, 1).unwrap();
        let b = solve_waveguide(theta, r + 1.0, EndCondition::Neumann, &n, 1).unwrap();
        prop_assert!(b.finest().result.eigenvalues[0] >= a.finest().result.eigenvalues[0] - 1e-9);
    }

    #[test]
    fn regular_thresholds_agree_across_faces((n, alpha) in regular_layer()) {
        let layer = make_layer(build_regular(n, alpha).unwrap()).unwrap();
        let num = coarse(2);
        let t0 = threshold_on_ray(&layer, 0, &num).unwrap().extrapolated;
        for j in 1..n {
            let tj = threshold_on_ray(&layer, j, &num).unwrap().extrapolated;
            prop_assert!((tj - t0).abs() <= 1e-8 * t0, "face {}: {} vs {}", j, tj, t0);
        }
    }

    #[test]
    fn veps_value_is_positive_for_large_eps((n, alpha) in regular_layer()) {
        let layer = make_layer(build_regular(n, alpha).unwrap()).unwrap();
        let grid: Vec<f64> = (0..=8).map(|k| 10.0 * f64::powi(2.0, k)).collect();
        let c = veps_certificate(&layer, &grid, &coarse(3)).unwrap();
        let Evidence::Veps(v) = &c.evidence else { panic!("wrong evidence kind") };
        prop_assert!(v.value.iter().all(|x| x.is_finite() && *x > 0.0), "{:?}", v.value);
    }

    #[test]
    fn certificate_never_claims_inside_the_indicator(value in 8.0..10.5f64, err in 0.0..1.0f64) {
        let layer = make_layer(build_trihedral([PI / 2.0; 3]).unwrap()).unwrap();
        let t = ThresholdResult {
            theta_used: PI / 2.0,
            lambda1_estimates: vec![value, value],
            extrapolated: value,
            error_indicator: err,
            discretization_indicator: err,
            truncation_indicator: 0.0,
            r: 6.0,
            h: 1.0 / 64.0,
            levels: Vec::new(),
        };
        let c = certify_with_threshold(&layer, 3.0, 0.25, 1, &t, &Numerics::default()).unwrap();
        prop_assert!(c.combined_indicator >= err);
        if c.margin <= c.combined_indicator {
            prop_assert_eq!(c.verdict, Verdict::Inconclusive);
        }
        if c.verdict == Verdict::Nonempty {
            prop_assert!(c.margin > c.combined_indicator);
        }
        prop_assert!(!c.is_proof);
    }
}
