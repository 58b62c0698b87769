use homoclinic::bundle::first_stiefel_whitney;
use homoclinic::dichotomy::*;
use homoclinic::field::*;
use homoclinic::linalg::{max_abs, op_norm, RealMatrix};
use homoclinic::matrixcore::{spectral_projector_contour, DEFAULT_NODES};
use homoclinic::random;
use proptest::prelude::*;
use std::sync::Arc;

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

/// Line bundle span(cos(m t/2), sin(m t/2)); orientable iff m is even.
fn twisted_line(base: &ParameterLoop, m: i32) -> SampledBundle {
    SampledBundle::analytic(
        base.clone(),
        Arc::new(move |l: &[f64]| {
            let t = m as f64 * l[0] / 2.0;
            RealMatrix::from_column_slice(2, 1, &[t.cos(), t.sin()])
        }),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(cases(16))]

    #[test]
    fn projector_families_are_invariant_idempotent(seed in 0u64..10_000, d in 1usize..=4, side_plus in any::<bool>()) {
        let mut r = random::rng(seed);
        let s = (seed as usize) % (d + 1);
        let (a, _) = random::hyperbolic_matrix(&mut r, d, s);
        let f = DiscreteVectorField::autonomous(a.clone()).unwrap();
        let side = if side_plus { Side::Plus } else { Side::Minus };
        let pf = build_projector_family(&f, &[0.0], side, 0, ProjectorOptions::default()).unwrap();
        prop_assert_eq!(pf.rank, s);
        for n in pf.first..pf.last {
            let p = pf.at(n).unwrap();
            let q = pf.at(n + 1).unwrap();
            let scale = 1.0 + op_norm(&a) * op_norm(p);
            prop_assert!(max_abs(&(p * p - p)) <= 1e-9 * op_norm(p).max(1.0));
            prop_assert!(max_abs(&(q * &a - &a * p)) <= 1e-7 * scale);
        }
    }

    #[test]
    fn propagator_cocycle(seed in 0u64..10_000, k in 0i64..6, m in -6i64..0, n in -12i64..-6) {
        let mut r = random::rng(seed);
        let (f, _, _) = random::asymptotic_field(&mut r, 3, -5, 5).unwrap();
        let lhs = propagator(&f, &[0.0], k, m).unwrap() * propagator(&f, &[0.0], m, n).unwrap();
        let rhs = propagator(&f, &[0.0], k, n).unwrap();
        prop_assert!(max_abs(&(&lhs - &rhs)) <= 1e-10 * max_abs(&rhs).max(1.0));
    }

    #[test]
    fn stiefel_whitney_is_additive(m1 in -3i32..=3, m2 in -3i32..=3, n in 12usize..40) {
        let base = ParameterLoop::angular(n).unwrap();
        let e1 = twisted_line(&base, m1);
        let e2 = twisted_line(&base, m2);
        let w1 = first_stiefel_whitney(&e1).unwrap();
        let w2 = first_stiefel_whitney(&e2).unwrap();
        prop_assert_eq!(w1, m1.rem_euclid(2) as u8);
        prop_assert_eq!(first_stiefel_whitney(&e1.direct_sum(&e2).unwrap()).unwrap(), (w1 + w2) % 2);
    }

    #[test]
    fn contour_projector_commutes(seed in 0u64..10_000, d in 1usize..=5) {
        let mut r = random::rng(seed);
        let (a, _) = random::hyperbolic_matrix(&mut r, d, (seed as usize) % (d + 1));
        let sp = spectral_projector_contour(&a, DEFAULT_NODES).unwrap();
        let p = &sp.stable;
        let tol = 1e-8 * op_norm(p).max(1.0) * op_norm(&a).max(1.0);
        prop_assert!(max_abs(&(p * p - p)) <= 1e-8 * op_norm(p).max(1.0));
        prop_assert!(max_abs(&(p * &a - &a * p)) <= tol);
    }
}

proptest! {
    #![proptest_config(cases(6))]

    #[test]
    fn spectrum_scales_with_the_field(seed in 0u64..10_000, c in 0.3f64..3.0) {
        let mut r = random::rng(seed);
        let (a, _) = random::hyperbolic_matrix(&mut r, 2, 1);
        let f = DiscreteVectorField::autonomous(a).unwrap();
        let opts = SpectrumOptions { horizon: 1024, burn_in: 256, gamma_min: 0.01, gamma_max: 100.0, ..Default::default() };
        let s1 = dichotomy_spectrum(&f, &[0.0], opts).unwrap();
        let s2 = dichotomy_spectrum(&f.scaled(c), &[0.0], opts).unwrap();
        prop_assert_eq!(s1.intervals.len(), s2.intervals.len());
        for (i1, i2) in s1.intervals.iter().zip(&s2.intervals) {
            prop_assert!((c * i1[0] - i2[0]).abs() <= 1e-6 * i2[0]);
            prop_assert!((c * i1[1] - i2[1]).abs() <= 1e-6 * i2[1]);
        }
    }

    #[test]
    fn shift_projector_matches_spectral_projector(seed in 0u64..10_000, d in 1usize..=3) {
        let mut r = random::rng(seed);
        let (a, _) = random::hyperbolic_matrix(&mut r, d, (seed as usize) % (d + 1));
        let f = DiscreteVectorField::autonomous(a.clone()).unwrap();
        let sp = spectral_projector_contour(&a, DEFAULT_NODES).unwrap();
        let pf = shift_operator_projector(&f, &[0.0], 32, DEFAULT_NODES, 0).unwrap();
        for p in &pf.projectors {
            prop_assert!(max_abs(&(p - &sp.stable)) <= 1e-6 * op_norm(&sp.stable).max(1.0));
        }
    }
}
