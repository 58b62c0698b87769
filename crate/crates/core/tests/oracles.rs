use homoclinic::dichotomy::*;
use homoclinic::field::*;
use homoclinic::fredholm::*;
use homoclinic::linalg::{max_abs, RealMatrix, RealVector};
use homoclinic::matrixcore::*;
use homoclinic::random;
use homoclinic::sequence::FiniteWindowSequence;
use rand::Rng;

fn diag(v: &[f64]) -> RealMatrix {
    RealMatrix::from_diagonal(&RealVector::from_column_slice(v))
}

/// Stable projector known from the construction A = V B V^-1 with block-diagonal B whose first
/// `stable` coordinates carry the small moduli.
fn constructed(seed: u64, d: usize, stable: usize) -> (RealMatrix, RealMatrix) {
    let mut r = random::rng(seed);
    let mut b = RealMatrix::zeros(d, d);
    for i in 0..d {
        b[(i, i)] = if i < stable { r.gen_range(0.1..0.9) } else { r.gen_range(1.1..10.0) };
    }
    let v = random::well_conditioned(&mut r, d, 20.0);
    let vi = v.clone().try_inverse().unwrap();
    let mut mask = RealMatrix::zeros(d, d);
    for i in 0..stable {
        mask[(i, i)] = 1.0;
    }
    (&v * b * &vi, &v * mask * vi)
}

#[test]
fn contour_projector_matches_construction() {
    for seed in 0..40 {
        let d = 1 + (seed as usize % 4);
        let s = seed as usize % (d + 1);
        let (a, p) = constructed(seed, d, s);
        let c = spectral_projector_contour(&a, DEFAULT_NODES).unwrap();
        assert_eq!(c.stable_rank, s);
        assert!(max_abs(&(&c.stable - &p)) <= 1e-8, "seed {seed}");
    }
}

#[test]
fn autonomous_spectrum_is_the_set_of_moduli() {
    let a = diag(&[0.5, 2.0]);
    let f = DiscreteVectorField::autonomous(a).unwrap();
    let s = dichotomy_spectrum(&f, &[0.0], SpectrumOptions::default()).unwrap();
    assert_eq!(s.intervals.len(), 2);
    assert!((s.intervals[0][0] - 0.5).abs() < 1e-2 && (s.intervals[0][1] - 0.5).abs() < 1e-2);
    assert!((s.intervals[1][0] - 2.0).abs() < 2e-2 && (s.intervals[1][1] - 2.0).abs() < 2e-2);
}

#[test]
fn ed_constants_of_a_diagonal_matrix() {
    let f = DiscreteVectorField::autonomous(diag(&[0.5, 2.0])).unwrap();
    let pf = build_projector_family(&f, &[0.0], Side::Plus, 0, ProjectorOptions::default()).unwrap();
    let w = verify_ed(&f, &[0.0], &pf, 20).unwrap();
    assert!((w.k - 1.0).abs() <= 1e-6, "K = {}", w.k);
    assert!((w.alpha - 0.5).abs() <= 1e-6, "alpha = {}", w.alpha);
    assert!(pf.max_invariance_residual <= 1e-7);
    assert!(w.inverse_pairs > 0);
    assert!(max_abs(&(pf.at(5).unwrap() - diag(&[1.0, 0.0]))) < 1e-12);
}

#[test]
fn shift_operator_projector_of_a_diagonal_matrix() {
    let f = DiscreteVectorField::autonomous(diag(&[0.5, 2.0])).unwrap();
    let pf = shift_operator_projector(&f, &[0.0], 64, DEFAULT_NODES, -32).unwrap();
    for p in &pf.projectors {
        assert!(max_abs(&(p - diag(&[1.0, 0.0]))) <= 1e-6);
    }
}

#[test]
fn shift_operator_agrees_with_orthogonal_iteration() {
    let minus = diag(&[0.5, 2.0]);
    let plus = RealMatrix::from_row_slice(2, 2, &[0.4, 1.0, 0.0, 3.0]);
    let f = DiscreteVectorField::asymptotic(minus, plus, 0).unwrap();
    let shift = shift_operator_projector(&f, &[0.0], 64, DEFAULT_NODES, -32).unwrap();
    let opts = ProjectorOptions { length: 20, ..Default::default() };
    let full = build_projector_family(&f, &[0.0], Side::Full, -10, opts).unwrap();
    for n in -10..=10 {
        assert!(max_abs(&(shift.at(n).unwrap() - full.at(n).unwrap())) <= 1e-6, "n = {n}");
    }
}

#[test]
fn green_solutions_satisfy_the_equation() {
    let mut r = random::rng(11);
    for d in [1usize, 2, 4] {
        for stable in [0, d / 2, d] {
            let (a, _) = random::hyperbolic_matrix(&mut r, d, stable);
            let f = DiscreteVectorField::autonomous(a).unwrap();
            for side in [Side::Plus, Side::Minus] {
                let opts = ProjectorOptions { length: 80, ..Default::default() };
                let pf = build_projector_family(&f, &[0.0], side, 0, opts).unwrap();
                let w = verify_ed(&f, &[0.0], &pf, 20).expect("ed");
                let (lo, len) = match side {
                    Side::Plus => (0, 40),
                    _ => (-60, 40),
                };
                let vals: Vec<RealVector> = (0..len)
                    .map(|i| {
                        let env = if side == Side::Plus { i } else { len - i };
                        let _ = env;
                        RealVector::from_fn(d, |_, _| r.gen_range(-1.0..1.0))
                    })
                    .collect();
                let start = if side == Side::Plus { 10 } else { lo + 10 };
                let psi = FiniteWindowSequence::new(start, vals).unwrap();
                let g = green_solve(&f, &[0.0], side, 0, &psi, &pf, &w, SOLVE_TOL).unwrap();
                assert!(g.residual <= 1e-10, "d {d} stable {stable} {side:?}: {}", g.residual);
            }
        }
    }
}

#[test]
fn realization_index_and_kernel() {
    let base = ParameterLoop::angular(16).unwrap();
    let e = mobius_bundle(&base).unwrap();
    let t = SampledBundle::trivial(base.clone(), 1, 2).unwrap();
    let f = realization_field(&e, &t, 0.5, -2, 2, None).unwrap();
    let opts = ProjectorOptions::default();
    let at = |theta: f64| index_at(&f, &[theta], (-40, 40), (-3, 3), opts, 20).unwrap().report;
    let r0 = at(0.0);
    assert_eq!((r0.dim_ker, r0.dim_coker, r0.index), (0, 0, 0));
    let rpi = at(std::f64::consts::PI);
    assert_eq!((rpi.dim_ker, rpi.dim_coker), (1, 1));
    assert!(rpi.consistent && rpi.kernel_decays);
}

#[test]
fn random_fields_have_consistent_indices() {
    let mut r = random::rng(5);
    let mut agree = 0;
    for _ in 0..10 {
        let d = r.gen_range(1..=3);
        let (f, sm, sp) = random::asymptotic_field(&mut r, d, -5, 5).unwrap();
        let run = match index_at(&f, &[0.0], (-40, 40), (-6, 6), ProjectorOptions::default(), 20) {
            Ok(r) => r,
            Err(e) => panic!("d {d} sm {sm} sp {sp}: {e}"),
        };
        assert_eq!(run.report.index, sp as i64 - sm as i64);
        if run.report.consistent {
            agree += 1;
        }
    }
    assert!(agree >= 9, "{agree}");
}

#[test]
fn identity_has_no_dichotomy() {
    let f = DiscreteVectorField::autonomous(RealMatrix::identity(2, 2)).unwrap();
    let e = build_projector_family(&f, &[0.0], Side::Plus, 0, ProjectorOptions::default()).unwrap_err();
    assert!(matches!(e, homoclinic::Error::NoDichotomy(_)), "{e:?}");
}
