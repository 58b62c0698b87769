//! Acceptance criteria 1-11. Each prints one PASS/FAIL line; the test fails if any does.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use homoclinic::bifurcation::{nemitski_apply, nemitski_derivative, remainder_probe, NonlinearField};
use homoclinic::bundle::class_of_field;
use homoclinic::dichotomy::*;
use homoclinic::field::*;
use homoclinic::fredholm::*;
use homoclinic::linalg::{max_abs, op_norm, RealMatrix, RealVector};
use homoclinic::matrixcore::*;
use homoclinic::random;
use homoclinic::sequence::FiniteWindowSequence;
use homoclinic_cli::{execute_file, scenario, Command};
use rand::Rng;
use serde_json::Value;

const TOL_PROJECTOR: f64 = 1e-8;
const TOL_SPECTRUM: f64 = 1e-2;
const TOL_ED: f64 = 1e-6;
const TOL_INVARIANCE: f64 = 1e-7;
const TOL_SHIFT: f64 = 1e-6;
const TOL_GREEN: f64 = 1e-10;
const TOL_NEMITSKI: f64 = 1e-6;
const MIN_SLOPE: f64 = 1.8;
const TOL_LOCALIZE: f64 = 1e-9;

type Outcome = Result<String, String>;

fn diag(v: &[f64]) -> RealMatrix {
    RealMatrix::from_diagonal(&RealVector::from_column_slice(v))
}

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_projectors() -> Outcome {
    let mut r = random::rng(101);
    let mut worst = 0.0_f64;
    for i in 0..200 {
        let d = r.gen_range(1..=4);
        let s = r.gen_range(0..=d);
        let (a, _) = random::hyperbolic_matrix(&mut r, d, s);
        let c = spectral_projector_contour(&a, DEFAULT_NODES).map_err(|e| format!("matrix {i}: {e}"))?;
        let e = spectral_projector_eigen(&a).map_err(|e| format!("matrix {i}: {e}"))?;
        ensure(c.stable_rank == s && e.stable_rank == s, || format!("matrix {i}: rank mismatch"))?;
        worst = worst.max(max_abs(&(&c.stable - &e.stable)));
    }
    ensure(worst <= TOL_PROJECTOR, || format!("max difference {worst:.3e}"))?;
    Ok(format!("200 matrices, max |P_contour - P_eigen| = {worst:.2e}"))
}

/// Diagonalizable matrix with prescribed moduli (complex pairs allowed) in a well-conditioned basis.
fn with_moduli(r: &mut impl Rng, moduli: &[f64]) -> RealMatrix {
    let d = moduli.len();
    let mut b = RealMatrix::zeros(d, d);
    let mut i = 0;
    while i < d {
        if i + 1 < d && moduli[i] == moduli[i + 1] && r.gen_bool(0.5) {
            let th: f64 = r.gen_range(0.3..2.8);
            let rho = moduli[i];
            b[(i, i)] = rho * th.cos();
            b[(i, i + 1)] = -rho * th.sin();
            b[(i + 1, i)] = rho * th.sin();
            b[(i + 1, i + 1)] = rho * th.cos();
            i += 2;
        } else {
            b[(i, i)] = if r.gen_bool(0.5) { moduli[i] } else { -moduli[i] };
            i += 1;
        }
    }
    let v = random::well_conditioned(r, d, 10.0);
    let vi = v.clone().try_inverse().unwrap();
    v * b * vi
}

fn c2_spectrum() -> Outcome {
    let mut r = random::rng(202);
    let mut worst = 0.0_f64;
    let mut non_hyperbolic = 0;
    for i in 0..50 {
        let d = r.gen_range(1..=3);
        let mut moduli: Vec<f64> = (0..d).map(|_| r.gen_range(0.2..5.0_f64)).collect();
        if i % 2 == 1 {
            moduli[0] = 1.0;
            non_hyperbolic += 1;
        }
        if d >= 2 && r.gen_bool(0.4) {
            moduli[1] = moduli[0];
        }
        let a = with_moduli(&mut r, &moduli);
        let f = DiscreteVectorField::autonomous(a).unwrap();
        let s = dichotomy_spectrum(&f, &[0.0], SpectrumOptions::default()).map_err(|e| format!("matrix {i}: {e}"))?;
        // Every modulus lies in (or next to) an interval and every endpoint is next to a modulus.
        for &m in &moduli {
            let dist = s.intervals.iter().map(|iv| (iv[0] - m).max(m - iv[1]).max(0.0)).fold(f64::INFINITY, f64::min);
            worst = worst.max(dist);
        }
        for iv in &s.intervals {
            for &x in iv {
                let dist = moduli.iter().map(|m| (x - m).abs()).fold(f64::INFINITY, f64::min);
                worst = worst.max(dist);
            }
        }
        ensure(worst <= TOL_SPECTRUM, || format!("matrix {i} moduli {moduli:?}: intervals {:?}", s.intervals))?;
    }
    Ok(format!("50 matrices ({non_hyperbolic} with a unit modulus), max distance {worst:.2e}"))
}

fn c3_ed() -> Outcome {
    let f = DiscreteVectorField::autonomous(diag(&[0.5, 2.0])).unwrap();
    let mut lines = Vec::new();
    for side in [Side::Plus, Side::Minus] {
        let pf = build_projector_family(&f, &[0.0], side, 0, ProjectorOptions::default()).map_err(|e| e.to_string())?;
        let w = verify_ed(&f, &[0.0], &pf, 20).map_err(|e| e.to_string())?;
        ensure((w.k - 1.0).abs() <= TOL_ED && (w.alpha - 0.5).abs() <= TOL_ED, || {
            format!("{side:?}: K = {}, alpha = {}", w.k, w.alpha)
        })?;
        ensure(pf.max_invariance_residual <= TOL_INVARIANCE, || {
            format!("{side:?}: invariance residual {:.3e}", pf.max_invariance_residual)
        })?;
        ensure(w.inverse_pairs > 0, || format!("{side:?}: no inverse-form pairs checked"))?;
        lines.push(format!("{side:?} K={:.7} alpha={:.7} inv={:.1e} pairs={}", w.k, w.alpha, pf.max_invariance_residual, w.inverse_pairs));
    }
    Ok(lines.join("; "))
}

fn c4_shift() -> Outcome {
    let f = DiscreteVectorField::autonomous(diag(&[0.5, 2.0])).unwrap();
    let pf = shift_operator_projector(&f, &[0.0], 64, DEFAULT_NODES, -32).map_err(|e| e.to_string())?;
    let target = diag(&[1.0, 0.0]);
    let worst = pf.projectors.iter().map(|p| max_abs(&(p - &target))).fold(0.0, f64::max);
    ensure(worst <= TOL_SHIFT, || format!("max deviation {worst:.3e}"))?;
    Ok(format!("{} interior nodes, max |P - diag(1,0)| = {worst:.2e}", pf.projectors.len()))
}

/// (L phi)(n) = phi(n+1) - A_n phi(n), evaluated directly from the field.
fn apply_l(f: &DiscreteVectorField, phi: &FiniteWindowSequence, n: i64) -> RealVector {
    phi.value(n + 1) - f.at(&[0.0], n).unwrap() * phi.value(n)
}

fn c5_green() -> Outcome {
    let mut r = random::rng(505);
    let mut cases = Vec::new();
    for d in [1usize, 2, 4] {
        let mut ranks = vec![0, d];
        if d > 1 {
            ranks.push(d / 2);
        }
        for s in ranks {
            for side in [Side::Plus, Side::Minus] {
                cases.push((d, s, side));
            }
        }
    }
    let mut worst = 0.0_f64;
    let mut fields = Vec::new();
    for &(d, s, side) in &cases {
        let (a, _) = random::hyperbolic_matrix(&mut r, d, s);
        let f = DiscreteVectorField::autonomous(a).unwrap();
        let opts = ProjectorOptions { length: 80, ..Default::default() };
        let pf = build_projector_family(&f, &[0.0], side, 0, opts).map_err(|e| e.to_string())?;
        let w = verify_ed(&f, &[0.0], &pf, 20).map_err(|e| e.to_string())?;
        fields.push((f, pf, w, side, d));
    }
    for k in 0..50 {
        let (f, pf, w, side, d) = &fields[k % fields.len()];
        let len = 30;
        let start = if *side == Side::Plus { 5 } else { -5 - len as i64 };
        let vals = (0..len).map(|_| RealVector::from_fn(*d, |_, _| r.gen_range(-1.0..1.0))).collect();
        let psi = FiniteWindowSequence::new(start, vals).unwrap();
        let g = green_solve(f, &[0.0], *side, 0, &psi, pf, w, SOLVE_TOL).map_err(|e| format!("rhs {k}: {e}"))?;
        // Residual recomputed here on every row whose two samples lie in the solution window.
        let (lo, hi) = (g.phi.start, g.phi.start + g.phi.values.len() as i64 - 2);
        for n in lo..=hi {
            let res = (apply_l(f, &g.phi, n) - psi.value(n)).amax();
            worst = worst.max(res);
        }
    }
    ensure(worst <= TOL_GREEN, || format!("max |L(M psi) - psi| = {worst:.3e}"))?;
    Ok(format!("50 right-hand sides over {} (d, rank, side) cases, max residual {worst:.2e}", cases.len()))
}

fn c6_index() -> Outcome {
    let mut r = random::rng(606);
    let (mut agree, mut disagree, mut failed) = (0, 0, 0);
    for i in 0..25 {
        let d = r.gen_range(1..=3);
        let (f, sm, sp) = random::asymptotic_field(&mut r, d, -5, 5).unwrap();
        match index_at(&f, &[0.0], (-40, 40), (-6, 6), ProjectorOptions::default(), 20) {
            Ok(run) => {
                let rep = run.report;
                let truncated = rep.dim_ker as i64 - rep.dim_coker as i64;
                let subspace = rep.dim_ker_subspace as i64 - rep.dim_coker_subspace as i64;
                if rep.index == truncated && rep.index == subspace && rep.index == sp as i64 - sm as i64 {
                    agree += 1;
                } else {
                    disagree += 1;
                    eprintln!("field {i}: formula {} truncated {truncated} subspace {subspace}", rep.index);
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("field {i}: {e}");
            }
        }
    }
    ensure(agree >= 20 && disagree == 0, || format!("{agree} agree, {disagree} disagree, {failed} failed"))?;
    Ok(format!("{agree}/25 fields agree exactly, {disagree} disagree, {failed} not evaluated"))
}

fn class_pair(f: &DiscreteVectorField, base: &ParameterLoop, anchors: (i64, i64)) -> Result<(usize, i64, u8), String> {
    let (c, _) = class_of_field(f, base, anchors.1, anchors.0, ProjectorOptions::default(), 20).map_err(|e| e.to_string())?;
    Ok((c.rank_plus, c.virtual_rank, c.delta_w1))
}

fn c7_realization() -> Outcome {
    let base = ParameterLoop::angular(16).unwrap();
    let mobius = mobius_bundle(&base).unwrap();
    let line = SampledBundle::trivial(base.clone(), 1, 2).unwrap();
    let f = realization_field(&mobius, &line, 0.5, -2, 2, None).unwrap();
    let (_, vr, dw) = class_pair(&f, &base, (-3, 3))?;
    ensure((vr, dw) == (0, 1), || format!("Moebius/line gave ({vr}, {dw})"))?;
    let mut trivial = Vec::new();
    for (k, m, d) in [(2usize, 1usize, 2usize), (1, 2, 2), (1, 1, 3), (3, 1, 3)] {
        let e = SampledBundle::trivial(base.clone(), k, d).unwrap();
        let t = SampledBundle::trivial(base.clone(), m, d).unwrap();
        let f = realization_field(&e, &t, 0.5, -1, 1, None).unwrap();
        let (_, vr, dw) = class_pair(&f, &base, (-2, 2))?;
        ensure((vr, dw) == (k as i64 - m as i64, 0), || format!("trivial {k}/{m} in R^{d} gave ({vr}, {dw})"))?;
        trivial.push(format!("({k},{m})->({vr},{dw})"));
    }
    let sum = mobius.direct_sum(&mobius).unwrap();
    let t2 = SampledBundle::trivial(base.clone(), 2, 4).unwrap();
    let f = realization_field(&sum, &t2, 0.5, -2, 2, None).unwrap();
    let (_, vr, dw) = class_pair(&f, &base, (-3, 3))?;
    ensure(dw == 0, || format!("Moebius+Moebius gave delta w1 = {dw}"))?;
    Ok(format!("Moebius/line (0,1); trivial {}; Moebius+Moebius ({vr},{dw})", trivial.join(" ")))
}

fn c8_perturbation() -> Outcome {
    let base = ParameterLoop::angular(16).unwrap();
    let mobius = mobius_bundle(&base).unwrap();
    let line = SampledBundle::trivial(base.clone(), 1, 2).unwrap();
    let (km, kp) = (-2, 2);
    let f = realization_field(&mobius, &line, 0.5, km, kp, None).unwrap();
    // Certified margin: smallest Green-kernel bound over the limit matrices on the loop.
    let mut margin = f64::INFINITY;
    for l in base.samples() {
        margin = margin.min(robustness_margin(&f.at(l, kp + 1).unwrap()).map_err(|e| e.to_string())?);
        margin = margin.min(robustness_margin(&f.at(l, km - 1).unwrap()).map_err(|e| e.to_string())?);
    }
    let gamma = 0.5 * margin;
    let anchors = (km - 1, kp + 1);
    let reference_class = class_pair(&f, &base, anchors)?;
    let probe: Vec<usize> = vec![0, 4, 8, 12];
    let reference_index: Vec<i64> = probe
        .iter()
        .map(|&i| index_at(&f, base.sample(i), (-40, 40), anchors, ProjectorOptions::default(), 20).map(|r| r.report.index))
        .collect::<homoclinic::Result<_>>()
        .map_err(|e| e.to_string())?;
    let mut r = random::rng(808);
    for trial in 0..20 {
        // D(theta, n) = gamma * (B0 + cos theta B1 + sin theta B2)_n / norm, constant outside [-8, 8].
        let blocks: Vec<[RealMatrix; 3]> = (0..17)
            .map(|_| std::array::from_fn(|_| RealMatrix::from_fn(2, 2, |_, _| r.gen_range(-1.0..1.0))))
            .collect();
        let scale: Vec<f64> = blocks.iter().map(|b| op_norm(&b[0]) + op_norm(&b[1]) + op_norm(&b[2])).collect();
        let pert: MatrixEvaluator = Arc::new(move |l: &[f64], n: i64| {
            let k = (n.clamp(-8, 8) + 8) as usize;
            let b = &blocks[k];
            Ok((&b[0] + &b[1] * l[0].cos() + &b[2] * l[0].sin()) * (gamma / scale[k]))
        });
        let (g, rep) = perturb_field(&f, pert, gamma, gamma, kp, km, &base, 40).map_err(|e| e.to_string())?;
        ensure(rep.ok, || format!("trial {trial}: smallness check failed"))?;
        let class = class_pair(&g, &base, anchors)?;
        ensure(class == reference_class, || format!("trial {trial}: class {class:?} vs {reference_class:?}"))?;
        for (j, &i) in probe.iter().enumerate() {
            let idx = index_at(&g, base.sample(i), (-40, 40), anchors, ProjectorOptions::default(), 20)
                .map_err(|e| format!("trial {trial}: {e}"))?
                .report
                .index;
            ensure(idx == reference_index[j], || format!("trial {trial}, sample {i}: index {idx}"))?;
        }
    }
    Ok(format!(
        "20 perturbations of sup norm {gamma:.3e} (half the margin {margin:.3e}): class {reference_class:?} and indices unchanged"
    ))
}

fn c9_nemitski() -> Outcome {
    let f = NonlinearField::quadratic(0.5, 2, 1.0).unwrap();
    let mut r = random::rng(909);
    let len = 12;
    let phi = FiniteWindowSequence::new(-6, (0..len).map(|_| RealVector::from_fn(2, |_, _| r.gen_range(-0.5..0.5))).collect()).unwrap();
    let dir = FiniteWindowSequence::new(-6, (0..len).map(|_| RealVector::from_fn(2, |_, _| r.gen_range(-1.0..1.0))).collect()).unwrap();
    let der = nemitski_derivative(&f, &[0.0], &phi).map_err(|e| e.to_string())?;
    let h = 1e-6;
    let shifted = |s: f64| {
        let vals = phi.values.iter().zip(&dir.values).map(|(p, v)| p + v * s).collect();
        nemitski_apply(&f, &[0.0], &FiniteWindowSequence::new(-6, vals).unwrap()).unwrap()
    };
    let (up, down) = (shifted(h), shifted(-h));
    let mut gap = 0.0_f64;
    for (k, jac) in der.iter().enumerate() {
        let n = -6 + k as i64;
        let fd = (up.value(n) - down.value(n)) / (2.0 * h);
        gap = gap.max((fd - jac * dir.value(n)).amax());
    }
    ensure(gap <= TOL_NEMITSKI, || format!("finite-difference gap {gap:.3e}"))?;
    let p = remainder_probe(&f, &[0.0], &phi, &dir, &[1e-1, 3e-2, 1e-2, 3e-3, 1e-3]).map_err(|e| e.to_string())?;
    ensure(p.slope >= MIN_SLOPE, || format!("remainder slope {:.3}", p.slope))?;
    Ok(format!("FD gap {gap:.2e}, remainder slope {:.3}", p.slope))
}

fn c10_end_to_end() -> Outcome {
    let path = scenarios_dir().join("system2_mobius.toml");
    let out = execute_file(Command::Certify, &path, None, Some(1));
    let rep = &out.report;
    ensure(rep.exit_code == 0, || format!("exit code {}, warnings {:?}", rep.exit_code, rep.warnings))?;
    let cert = &rep.results["certificate"];
    ensure(cert["verdict"] == "bifurcation_certified", || format!("verdict {}", cert["verdict"]))?;
    ensure(cert["lambda0_index"] == 0, || format!("lambda0 index {}", cert["lambda0_index"]))?;
    let samples = scenario::load(&path).map_err(|e| e.to_string())?;
    let n = match samples.parameters {
        scenario::ParameterSpec::Angular { samples } => samples,
        _ => return Err("system2 scenario is not on an angular loop".into()),
    };
    let loc = &rep.results["localization"];
    let clusters = loc["clusters"].as_array().map_or(0, Vec::len);
    ensure(clusters > 0, || "no candidate cluster".into())?;
    let step = 2.0 * PI / n as f64;
    let near: Vec<&Value> = loc["candidates"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["residual"].as_f64().unwrap() <= TOL_LOCALIZE && (c["lambda"][0].as_f64().unwrap() - PI).abs() <= 2.0 * step)
        .collect();
    ensure(!near.is_empty(), || "no candidate with small residual near theta = pi".into())?;
    Ok(format!("certified at lambda0 = sample 0; {clusters} cluster(s), {} candidate(s) within 2 steps of pi", near.len()))
}

/// Command per builtin scenario for the determinism check.
const DETERMINISM: &[(&str, Command)] = &[
    ("autonomous.toml", Command::Spectrum),
    ("autonomous.toml", Command::Projectors),
    ("asymptotic.toml", Command::Index),
    ("asymptotic.toml", Command::Solve),
    ("hyperbolic_family.toml", Command::Class),
    ("realization_mobius.toml", Command::Index),
    ("realization_mobius.toml", Command::Class),
    ("realization_trivial.toml", Command::Certify),
    ("mobius_sum.toml", Command::Class),
    ("system2_mobius.toml", Command::Certify),
    ("quadratic.toml", Command::Solve),
    ("tabulated.toml", Command::Realize),
];

fn c11_determinism() -> Outcome {
    let dir = scenarios_dir();
    let mut files: Vec<String> = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".toml"))
        .collect();
    files.sort();
    for f in &files {
        ensure(DETERMINISM.iter().any(|(s, _)| s == f), || format!("scenario {f} has no determinism entry"))?;
    }
    for (file, cmd) in DETERMINISM {
        let path = dir.join(file);
        let a = execute_file(*cmd, &path, None, Some(1));
        let b = execute_file(*cmd, &path, None, Some(8));
        ensure(a.report_json() == b.report_json(), || format!("{file} {cmd:?}: reports differ"))?;
        let rows = |o: &homoclinic_cli::RunOutput| o.tables.iter().map(|t| (t.name.clone(), t.rows.clone())).collect::<Vec<_>>();
        ensure(rows(&a) == rows(&b), || format!("{file} {cmd:?}: tables differ"))?;
        ensure(a.files == b.files, || format!("{file} {cmd:?}: files differ"))?;
    }
    Ok(format!("{} scenarios, {} runs identical at 1 and 8 threads", files.len(), DETERMINISM.len()))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("1 spectral projector agreement", c1_projectors),
        ("2 autonomous dichotomy spectrum", c2_spectrum),
        ("3 dichotomy constants", c3_ed),
        ("4 shift-operator projector", c4_shift),
        ("5 Green solver", c5_green),
        ("6 index two-way consistency", c6_index),
        ("7 index-bundle realization", c7_realization),
        ("8 perturbation invariance", c8_perturbation),
        ("9 Nemitski derivative", c9_nemitski),
        ("10 end-to-end certification", c10_end_to_end),
        ("11 determinism", c11_determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let t = std::time::Instant::now();
        match check() {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64()),
            Err(detail) => {
                println!("FAIL criterion {name}: {detail} [{:.1}s]", t.elapsed().as_secs_f64());
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
