//! The subcommands. Each returns JSON results, warnings, CSV tables and an outcome class.

use homoclinic::bifurcation::{certify_bifurcation, localize_bifurcations, CertifyOptions, LocalizeOptions, Status, Verdict};
use homoclinic::bundle::class_of_field;
use homoclinic::dichotomy::{build_projector_family, dichotomy_spectrum, shift_operator_projector, verify_ed, ProjectorOptions, Side};
use homoclinic::fredholm::{green_solve, index_at};
use homoclinic::linalg::max_abs;
use homoclinic::sequence::FiniteWindowSequence;
use homoclinic::{Error, RealVector, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::scenario::{Built, FieldSpec, RhsSpec, Scenario, SideSpec, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    HypothesesFailed,
    Indeterminate,
}

pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub struct CommandResult {
    pub results: Value,
    pub warnings: Vec<String>,
    pub tables: Vec<Table>,
    pub outcome: Outcome,
    /// Extra files (name, contents) written next to the report.
    pub files: Vec<(String, String)>,
}

impl CommandResult {
    fn new(results: Value) -> Self {
        CommandResult { results, warnings: Vec::new(), tables: Vec::new(), outcome: Outcome::Ok, files: Vec::new() }
    }
}

fn num(x: f64) -> String {
    // Shortest round-trip form, identical to the JSON report.
    serde_json::to_string(&x).unwrap_or_else(|_| "nan".into())
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn error_value(e: &Error) -> Value {
    json!({ "error": e.to_string(), "indeterminate": e.is_indeterminate() })
}

/// Per-parameter failures are reported inline; input errors abort the command.
fn per_lambda<T, F>(lambdas: &[Vec<f64>], f: F) -> Result<Vec<(Vec<f64>, std::result::Result<T, Error>)>>
where
    T: Send,
    F: Fn(usize, &[f64]) -> Result<T> + Sync,
{
    let out: Vec<(Vec<f64>, std::result::Result<T, Error>)> =
        lambdas.par_iter().enumerate().map(|(i, l)| (l.clone(), f(i, l))).collect();
    for (_, r) in &out {
        if let Err(e @ Error::Input(_)) = r {
            return Err(e.clone());
        }
    }
    Ok(out)
}

fn lambda_cols(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).map(|i| format!("{prefix}{i}")).collect()
}

pub fn spectrum(sc: &Scenario, b: &Built) -> Result<CommandResult> {
    let opts = sc.spectrum.options(sc.numerics.gap_ratio);
    let runs = per_lambda(&b.lambdas, |_, l| dichotomy_spectrum(&b.linear, l, opts))?;
    let mut res = CommandResult::new(Value::Null);
    let mut items = Vec::new();
    let mut rows = Vec::new();
    for (i, (l, r)) in runs.iter().enumerate() {
        match r {
            Ok(s) => {
                items.push(json!({ "lambda": l, "intervals": s.intervals, "plus_rates": s.plus_rates,
                    "minus_rates": s.minus_rates, "threshold": s.threshold }));
                for (g, v) in s.grid.iter().zip(&s.verdicts) {
                    rows.push(vec![i.to_string(), num(*g), to_value(v).as_str().unwrap_or("").to_string()]);
                }
                if s.verdicts.contains(&homoclinic::dichotomy::GammaVerdict::Indeterminate) {
                    res.warnings.push(format!("lambda {l:?}: indeterminate verdicts on the gamma grid"));
                }
            }
            Err(e) => {
                res.outcome = res.outcome.max(Outcome::Indeterminate);
                res.warnings.push(format!("lambda {l:?}: {e}"));
                items.push(json!({ "lambda": l, "failure": error_value(e) }));
            }
        }
    }
    res.results = json!({ "spectra": items });
    res.tables.push(Table {
        name: "spectrum.csv".into(),
        header: vec!["lambda_index".into(), "gamma".into(), "verdict".into()],
        rows,
    });
    Ok(res)
}

pub fn projectors(sc: &Scenario, b: &Built) -> Result<CommandResult> {
    let (km, kp) = sc.numerics.anchor_pair();
    let popts = sc.numerics.projector();
    let vh = sc.numerics.verify_horizon;
    let runs = per_lambda(&b.lambdas, |_, l| {
        let plus = build_projector_family(&b.linear, l, Side::Plus, kp, popts)?;
        let minus = build_projector_family(&b.linear, l, Side::Minus, km, popts)?;
        let wp = verify_ed(&b.linear, l, &plus, vh)?;
        let wm = verify_ed(&b.linear, l, &minus, vh)?;
        let shift = if sc.numerics.truncation > 0 {
            let t = sc.numerics.truncation;
            let start = (km + kp) / 2 - (t / 2) as i64;
            Some(shift_operator_projector(&b.linear, l, t, sc.numerics.nodes, start).and_then(|sf| {
                // Compare with the orthogonal-iteration full-line family on the shift interior.
                let full_opts = ProjectorOptions { length: (sf.last - sf.first) as usize, ..popts };
                let full = build_projector_family(&b.linear, l, Side::Full, sf.first, full_opts)?;
                let mut diff = 0.0_f64;
                for n in sf.first..=sf.last {
                    diff = diff.max(max_abs(&(sf.at(n)? - full.at(n)?)));
                }
                Ok((sf, diff))
            }))
        } else {
            None
        };
        Ok((plus, minus, wp, wm, shift))
    })?;
    let mut res = CommandResult::new(Value::Null);
    let mut items = Vec::new();
    let d = b.linear.dim();
    let mut header = vec!["lambda_index".into(), "side".into(), "n".into()];
    for r in 0..d {
        for c in 0..d {
            header.push(format!("p{r}{c}"));
        }
    }
    let mut rows = Vec::new();
    for (i, (l, r)) in runs.iter().enumerate() {
        match r {
            Ok((plus, minus, wp, wm, shift)) => {
                let shift_v = match shift {
                    None => Value::Null,
                    Some(Ok((sf, diff))) => json!({ "first": sf.first, "last": sf.last, "rank": sf.rank,
                        "max_difference_to_orthogonal_iteration": diff }),
                    Some(Err(e)) => {
                        res.warnings.push(format!("lambda {l:?}: shift-operator projector: {e}"));
                        error_value(e)
                    }
                };
                items.push(json!({ "lambda": l, "plus": to_value(plus), "minus": to_value(minus),
                    "plus_witness": to_value(wp), "minus_witness": to_value(wm), "shift_operator": shift_v }));
                for (side, pf) in [("plus", plus), ("minus", minus)] {
                    for (k, p) in pf.projectors.iter().enumerate() {
                        let mut row = vec![i.to_string(), side.into(), (pf.first + k as i64).to_string()];
                        for r in 0..d {
                            for c in 0..d {
                                row.push(num(p[(r, c)]));
                            }
                        }
                        rows.push(row);
                    }
                }
            }
            Err(e) => {
                res.outcome = res.outcome.max(Outcome::Indeterminate);
                res.warnings.push(format!("lambda {l:?}: {e}"));
                items.push(json!({ "lambda": l, "failure": error_value(e) }));
            }
        }
    }
    res.results = json!({ "anchors": [km, kp], "families": items });
    res.tables.push(Table { name: "projectors.csv".into(), header, rows });
    Ok(res)
}

pub fn index(sc: &Scenario, b: &Built) -> Result<CommandResult> {
    let w = sc.numerics.window_pair();
    let anchors = sc.numerics.anchor_pair();
    let popts = sc.numerics.projector();
    let runs = per_lambda(&b.lambdas, |_, l| index_at(&b.linear, l, w, anchors, popts, sc.numerics.verify_horizon))?;
    let mut res = CommandResult::new(Value::Null);
    let mut items = Vec::new();
    let p = b.lambdas.first().map_or(1, |l| l.len());
    let mut header = vec!["lambda_index".to_string()];
    header.extend(lambda_cols("lambda", p));
    header.extend(["index", "dim_ker", "dim_coker", "consistent"].map(String::from));
    let mut rows = Vec::new();
    for (i, (l, r)) in runs.iter().enumerate() {
        match r {
            Ok(run) => {
                let rep = &run.report;
                if !rep.consistent {
                    res.outcome = res.outcome.max(Outcome::Indeterminate);
                    res.warnings.push(format!("lambda {l:?}: the two kernel/cokernel routes disagree"));
                }
                if rep.dim_ker > 0 && !rep.kernel_decays {
                    res.warnings.push(format!("lambda {l:?}: kernel elements do not decay within the window"));
                }
                items.push(to_value(run));
                let mut row = vec![i.to_string()];
                row.extend(l.iter().map(|x| num(*x)));
                row.extend([rep.index.to_string(), rep.dim_ker.to_string(), rep.dim_coker.to_string(), rep.consistent.to_string()]);
                rows.push(row);
            }
            Err(e) => {
                res.outcome = res.outcome.max(Outcome::Indeterminate);
                res.warnings.push(format!("lambda {l:?}: {e}"));
                items.push(json!({ "lambda": l, "failure": error_value(e) }));
            }
        }
    }
    res.results = json!({ "window": [w.0, w.1], "anchors": [anchors.0, anchors.1], "indices": items });
    res.tables.push(Table { name: "index.csv".into(), header, rows });
    Ok(res)
}

fn bundle_table(name: &str, rec: &homoclinic::field::BundleRecord) -> Table {
    let p = rec.samples.first().map_or(1, |l| l.len());
    let mut header = vec!["i".to_string()];
    header.extend(lambda_cols("lambda", p));
    for r in 0..rec.ambient {
        for c in 0..rec.rank {
            header.push(format!("f{r}{c}"));
        }
    }
    let rows = rec
        .samples
        .iter()
        .zip(&rec.frames)
        .enumerate()
        .map(|(i, (l, f))| {
            let mut row = vec![i.to_string()];
            row.extend(l.iter().map(|x| num(*x)));
            for r in 0..rec.ambient {
                for c in 0..rec.rank {
                    row.push(num(f[(r, c)]));
                }
            }
            row
        })
        .collect();
    Table { name: name.into(), header, rows }
}

fn require_loop(b: &Built) -> Result<&homoclinic::field::ParameterLoop> {
    b.base
        .as_ref()
        .ok_or_else(|| Error::Input("this command needs a parameter loop (parameters.kind = angular or points)".into()))
}

pub fn class(sc: &Scenario, b: &Built) -> Result<CommandResult> {
    let base = require_loop(b)?;
    let (km, kp) = sc.numerics.anchor_pair();
    let (class, pair) = class_of_field(&b.linear, base, kp, km, sc.numerics.projector(), sc.numerics.verify_horizon)?;
    let stable = pair.stable.record();
    let minus = pair.minus_image.record();
    let worst = pair.samples.iter().map(|s| s.plus.alpha.max(s.minus.alpha)).fold(0.0, f64::max);
    let mut res = CommandResult::new(json!({
        "class": to_value(&class),
        "anchors": [km, kp],
        "samples": base.len(),
        "worst_alpha": worst,
    }));
    res.tables.push(bundle_table("bundle_stable.csv", &stable));
    res.tables.push(bundle_table("bundle_minus_image.csv", &minus));
    Ok(res)
}

pub fn certify(sc: &Scenario, b: &Built) -> Result<CommandResult> {
    let base = require_loop(b)?;
    let f = b.nonlinear_or_linear(1.0)?;
    let (km, kp) = sc.numerics.anchor_pair();
    let opts = CertifyOptions {
        anchors: Some((km, kp)),
        projector: sc.numerics.projector(),
        split: sc.numerics.split(),
        verify_horizon: sc.numerics.verify_horizon,
        manifold_dim: sc.certify.manifold_dim,
    };
    let cert = certify_bifurcation(&f, base, opts)?;
    let mut res = CommandResult::new(Value::Null);
    if b.nonlinear.is_none() {
        res.warnings.push("the scenario is linear; certifying f(x) = A x".into());
    }
    res.warnings.extend(cert.notes.iter().cloned());
    if cert.verdict == Verdict::HypothesesFailed {
        let indeterminate = cert.hypotheses.iter().any(|h| h.status == Status::Indeterminate);
        res.outcome = if indeterminate { Outcome::Indeterminate } else { Outcome::HypothesesFailed };
        if indeterminate {
            res.warnings.push("indeterminate whole-line dichotomy scan: refine the loop".into());
        }
    }
    let mut localization = Value::Null;
    if sc.certify.localize {
        if !base.is_angular() {
            res.warnings.push("localization needs an angular loop; skipped".into());
        } else {
            let (w0, w1) = sc.numerics.window_pair();
            let lopts = LocalizeOptions {
                refinement: sc.certify.refinement,
                window: (w0, w1),
                anchors: Some((km, kp)),
                projector: sc.numerics.projector(),
                ..LocalizeOptions::default()
            };
            let loc = localize_bifurcations(&f, base, lopts)?;
            for (i, e) in &loc.skipped {
                res.warnings.push(format!("localization sample {i} skipped: {e}"));
            }
            let d = f.dim();
            let p = base.sample(0).len();
            let mut header = vec!["candidate".to_string()];
            header.extend(lambda_cols("lambda", p));
            header.push("n".into());
            header.extend(lambda_cols("phi", d));
            let mut rows = Vec::new();
            for (ci, c) in loc.candidates.iter().enumerate() {
                for (k, v) in c.solution.values.iter().enumerate() {
                    let mut row = vec![ci.to_string()];
                    row.extend(c.lambda.iter().map(|x| num(*x)));
                    row.push((c.solution.start + k as i64).to_string());
                    row.extend(v.iter().map(|x| num(*x)));
                    rows.push(row);
                }
            }
            res.tables.push(Table { name: "solutions.csv".into(), header, rows });
            let cands: Vec<Value> = loc
                .candidates
                .iter()
                .map(|c| json!({ "lambda": c.lambda, "sample": c.sample, "seed_scale": c.seed_scale,
                    "sup_norm": c.sup_norm, "residual": c.residual, "iterations": c.iterations }))
                .collect();
            localization = json!({ "heuristic": true, "refined_samples": loc.samples,
                "clusters": to_value(&loc.clusters), "candidates": cands });
        }
    }
    res.results = json!({ "certificate": to_value(&cert), "localization": localization });
    Ok(res)
}

pub fn solve(sc: &Scenario, b: &Built, seed: u64) -> Result<CommandResult> {
    let spec = &sc.solve;
    let side = match spec.side {
        SideSpec::Plus => Side::Plus,
        SideSpec::Minus => Side::Minus,
    };
    let anchor = spec.anchor.expect("solve anchor is materialized");
    let d = b.linear.dim();
    let popts = ProjectorOptions { length: spec.length, ..sc.numerics.projector() };
    let runs = per_lambda(&b.lambdas, |li, l| {
        let pf = build_projector_family(&b.linear, l, side, anchor, popts)?;
        let w = verify_ed(&b.linear, l, &pf, sc.numerics.verify_horizon)?;
        let rhs: Vec<FiniteWindowSequence> = match &spec.rhs {
            RhsSpec::Impulse { offset, component } => {
                if *component >= d || *offset < 0 || *offset as usize >= spec.length {
                    return Err(Error::Input("solve.rhs impulse lies outside the half-window or dimension".into()));
                }
                let n0 = if side == Side::Plus { anchor + offset } else { anchor - 1 - offset };
                let start = if side == Side::Plus { anchor } else { anchor - spec.length as i64 };
                vec![FiniteWindowSequence::impulse(start, spec.length, d, n0, *component)]
            }
            RhsSpec::Random { count, support } => {
                if *support == 0 || *support >= spec.length {
                    return Err(Error::Input("solve.rhs.support must lie in [1, length)".into()));
                }
                (0..*count)
                    .map(|j| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((li as u64) << 32) ^ j as u64);
                        let vals = (0..*support)
                            .map(|_| RealVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)))
                            .collect();
                        let start = if side == Side::Plus { anchor } else { anchor - *support as i64 };
                        FiniteWindowSequence::new(start, vals)
                    })
                    .collect::<Result<_>>()?
            }
        };
        rhs.iter().map(|psi| green_solve(&b.linear, l, side, anchor, psi, &pf, &w, spec.tol)).collect::<Result<Vec<_>>>()
    })?;
    let mut res = CommandResult::new(Value::Null);
    let p = b.lambdas.first().map_or(1, |l| l.len());
    let mut header = vec!["rhs".to_string()];
    header.extend(lambda_cols("lambda", p));
    header.push("n".into());
    header.extend(lambda_cols("phi", d));
    let mut rows = Vec::new();
    let mut items = Vec::new();
    for (l, r) in &runs {
        match r {
            Ok(sols) => {
                let mut entries = Vec::new();
                for (j, g) in sols.iter().enumerate() {
                    entries.push(json!({ "rhs": j, "residual": g.residual, "tail_bound": g.tail_bound,
                        "sup_norm": g.phi.sup_norm() }));
                    for (k, v) in g.phi.values.iter().enumerate() {
                        let mut row = vec![j.to_string()];
                        row.extend(l.iter().map(|x| num(*x)));
                        row.push((g.phi.start + k as i64).to_string());
                        row.extend(v.iter().map(|x| num(*x)));
                        rows.push(row);
                    }
                }
                items.push(json!({ "lambda": l, "solutions": entries }));
            }
            Err(e) => {
                res.outcome = res.outcome.max(Outcome::Indeterminate);
                res.warnings.push(format!("lambda {l:?}: {e}"));
                items.push(json!({ "lambda": l, "failure": error_value(e) }));
            }
        }
    }
    res.results = json!({ "side": spec.side, "anchor": anchor, "solves": items });
    res.tables.push(Table { name: "solutions.csv".into(), header, rows });
    Ok(res)
}

/// Tabulate the linear field on the parameter samples and the padded window and emit a
/// scenario that reads it back.
pub fn realize(sc: &Scenario, b: &Built) -> Result<CommandResult> {
    let (w0, w1) = b.linear.window();
    let (n_min, n_max) = (w0 - sc.realize.pad, w1 + sc.realize.pad);
    let d = b.linear.dim();
    let nt = (n_max - n_min + 1) as usize;
    let mut data = Vec::with_capacity(b.lambdas.len() * nt * d * d);
    for l in &b.lambdas {
        for n in n_min..=n_max {
            let m = b.linear.at(l, n)?;
            for r in 0..d {
                for c in 0..d {
                    data.push(m[(r, c)]);
                }
            }
        }
    }
    let mut out = sc.clone();
    out.field = FieldSpec::Tabulated { shape: [b.lambdas.len(), nt, d], n_min, params: b.lambdas.clone(), data };
    out.numerics.anchors = sc.numerics.anchors;
    out.schema_version = SCHEMA_VERSION;
    let text = toml::to_string(&out).map_err(|e| Error::Numeric(format!("cannot serialize the tabulated scenario: {e}")))?;
    let mut res = CommandResult::new(json!({
        "source": sc.field.name(),
        "file": "realized.toml",
        "shape": [b.lambdas.len(), nt, d],
        "n_min": n_min,
        "n_max": n_max,
    }));
    res.files.push(("realized.toml".into(), text));
    Ok(res)
}
