//! Nonlinear difference equations x(n+1) = f_n(lambda, x(n)) with the trivial branch x = 0:
//! substitution operators, linearization, the hypothesis checks, the bifurcation certificate
//! and a Newton search for small homoclinic solutions.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::{index_bundle_class, stable_unstable_bundles, KoClassDesk};
use crate::dichotomy::{build_projector_family, estimate_splitting, ProjectorOptions, Side, SplitOptions};
use crate::error::{Error, Result};
use crate::field::{DiscreteVectorField, FieldKind, MatrixEvaluator, ParameterLoop};
use crate::linalg::{complement, max_abs, min_singular, null_basis, op_norm, RealMatrix, RealVector};
use crate::sequence::FiniteWindowSequence;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-6;

pub type MapFn = Arc<dyn Fn(&[f64], i64, &RealVector) -> Result<RealVector> + Send + Sync>;
pub type JacobianFn = Arc<dyn Fn(&[f64], i64, &RealVector) -> Result<RealMatrix> + Send + Sync>;

/// f_n(lambda, x) with f_n(lambda, 0) = 0, optionally with an analytic Jacobian in x.
#[derive(Clone)]
pub struct NonlinearField {
    dim: usize,
    window: (i64, i64),
    r0: f64,
    f: MapFn,
    jac: Option<JacobianFn>,
}

impl std::fmt::Debug for NonlinearField {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("NonlinearField")
            .field("dim", &self.dim)
            .field("window", &self.window)
            .field("r0", &self.r0)
            .field("analytic_jacobian", &self.jac.is_some())
            .finish()
    }
}

impl NonlinearField {
    pub fn new(dim: usize, window: (i64, i64), r0: f64, f: MapFn, jac: Option<JacobianFn>) -> Result<Self> {
        if dim == 0 || !(r0 > 0.0) || window.0 > window.1 {
            return Err(Error::Input("nonlinear field needs dim > 0, r0 > 0 and a nonempty window".into()));
        }
        Ok(NonlinearField { dim, window, r0, f, jac })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> (i64, i64) {
        self.window
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac.is_some()
    }

    pub fn eval(&self, lambda: &[f64], n: i64, x: &RealVector) -> Result<RealVector> {
        if x.len() != self.dim {
            return Err(Error::Input(format!("state of length {} for a field of dimension {}", x.len(), self.dim)));
        }
        let y = (self.f)(lambda, n, x)?;
        if y.len() != self.dim || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("nonlinear field returned an invalid value at n = {n}")));
        }
        Ok(y)
    }

    /// Central differences with step `FD_STEP`.
    pub fn fd_jacobian(&self, lambda: &[f64], n: i64, x: &RealVector) -> Result<RealMatrix> {
        let d = self.dim;
        let mut j = RealMatrix::zeros(d, d);
        for c in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[c] += FD_STEP;
            xm[c] -= FD_STEP;
            let col = (self.eval(lambda, n, &xp)? - self.eval(lambda, n, &xm)?) / (2.0 * FD_STEP);
            j.set_column(c, &col);
        }
        Ok(j)
    }

    /// D_2 f_n(lambda, x): analytic when supplied, finite differences otherwise.
    pub fn jacobian(&self, lambda: &[f64], n: i64, x: &RealVector) -> Result<RealMatrix> {
        match &self.jac {
            Some(j) => {
                let m = j(lambda, n, x)?;
                if m.nrows() != self.dim || m.ncols() != self.dim || !crate::linalg::all_finite(&m) {
                    return Err(Error::Numeric(format!("invalid Jacobian at n = {n}")));
                }
                Ok(m)
            }
            None => self.fd_jacobian(lambda, n, x),
        }
    }

    /// Componentwise f(x) = a x + x.^2, autonomous.
    pub fn quadratic(a: f64, dim: usize, r0: f64) -> Result<Self> {
        let f: MapFn = Arc::new(move |_, _, x| Ok(x * a + x.component_mul(x)));
        let j: JacobianFn = Arc::new(move |_, _, x| {
            Ok(RealMatrix::identity(x.len(), x.len()) * a + RealMatrix::from_diagonal(&(x * 2.0)))
        });
        Self::new(dim, (0, 0), r0, f, Some(j))
    }
}

/// A small residual R(lambda, n, x) = o(|x|) together with its Jacobian in x.
#[derive(Clone)]
pub struct Residual {
    pub map: MapFn,
    pub jacobian: JacobianFn,
}

impl Residual {
    pub fn zero(dim: usize) -> Self {
        Residual {
            map: Arc::new(move |_, _, _| Ok(RealVector::zeros(dim))),
            jacobian: Arc::new(move |_, _, _| Ok(RealMatrix::zeros(dim, dim))),
        }
    }

    /// exp(-|n|) (x1^2, x1 x2) in two dimensions.
    pub fn decaying_quadratic() -> Self {
        Residual {
            map: Arc::new(|_, n, x| {
                let w = (-(n.abs() as f64)).exp();
                Ok(RealVector::from_column_slice(&[w * x[0] * x[0], w * x[0] * x[1]]))
            }),
            jacobian: Arc::new(|_, n, x| {
                let w = (-(n.abs() as f64)).exp();
                Ok(RealMatrix::from_row_slice(2, 2, &[w * 2.0 * x[0], 0.0, w * x[1], w * x[0]]))
            }),
        }
    }
}

/// x(n+1) = (A_n + D_n) x(n) + R(lambda, n, x(n)).
#[derive(Clone)]
pub struct PerturbedSystemSpec {
    pub linear: DiscreteVectorField,
    pub perturbation: Option<MatrixEvaluator>,
    pub residual: Residual,
    pub r0: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SideConditions {
    pub residual_vanishes_at_zero: bool,
    /// sup ||D_2 R(lambda, n, 0)|| over the sampled left and right ends.
    pub residual_derivative_left: f64,
    pub residual_derivative_right: f64,
}

impl PerturbedSystemSpec {
    pub fn into_field(self) -> Result<NonlinearField> {
        let a = self.linear.evaluator();
        let dp = self.perturbation.clone();
        let lin = move |l: &[f64], n: i64| -> Result<RealMatrix> {
            let m = a(l, n)?;
            Ok(match &dp {
                Some(p) => m + p(l, n)?,
                None => m,
            })
        };
        let lin = Arc::new(lin);
        let (l1, r1) = (lin.clone(), self.residual.map.clone());
        let f: MapFn = Arc::new(move |l, n, x| Ok(l1(l, n)? * x + r1(l, n, x)?));
        let (l2, r2) = (lin, self.residual.jacobian.clone());
        let j: JacobianFn = Arc::new(move |l, n, x| Ok(l2(l, n)? + r2(l, n, x)?));
        NonlinearField::new(self.linear.dim(), self.linear.window(), self.r0, f, Some(j))
    }

    /// Sampled check of R(lambda, n, 0) = 0 and of the decay of D_2 R(lambda, n, 0) at both ends.
    pub fn side_conditions(&self, base: &ParameterLoop, reach: i64) -> Result<SideConditions> {
        let d = self.linear.dim();
        let z = RealVector::zeros(d);
        let mut vanish = true;
        let (mut left, mut right) = (0.0_f64, 0.0_f64);
        for l in base.samples() {
            for n in -reach..=reach {
                if (self.residual.map)(l, n, &z)?.amax() > 0.0 {
                    vanish = false;
                }
            }
            left = left.max(op_norm(&(self.residual.jacobian)(l, -reach, &z)?));
            right = right.max(op_norm(&(self.residual.jacobian)(l, reach, &z)?));
        }
        Ok(SideConditions { residual_vanishes_at_zero: vanish, residual_derivative_left: left, residual_derivative_right: right })
    }
}

/// (N_f phi)(n) = f_n(lambda, phi(n)).
pub fn nemitski_apply(f: &NonlinearField, lambda: &[f64], phi: &FiniteWindowSequence) -> Result<FiniteWindowSequence> {
    let mut out = Vec::with_capacity(phi.len());
    for (i, x) in phi.values.iter().enumerate() {
        out.push(f.eval(lambda, phi.start + i as i64, x)?);
    }
    FiniteWindowSequence::new(phi.start, out)
}

/// Diagonal blocks D_2 f_n(lambda, phi(n)).
pub fn nemitski_derivative(f: &NonlinearField, lambda: &[f64], phi: &FiniteWindowSequence) -> Result<Vec<RealMatrix>> {
    phi.values
        .iter()
        .enumerate()
        .map(|(i, x)| f.jacobian(lambda, phi.start + i as i64, x))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct RemainderProbe {
    pub scales: Vec<f64>,
    pub remainders: Vec<f64>,
    /// Fitted slope of log remainder against log scale.
    pub slope: f64,
}

/// r(h) = ||N(phi + h) - N(phi) - D h|| for h = s * direction.
pub fn remainder_probe(
    f: &NonlinearField,
    lambda: &[f64],
    phi: &FiniteWindowSequence,
    direction: &FiniteWindowSequence,
    scales: &[f64],
) -> Result<RemainderProbe> {
    let base = nemitski_apply(f, lambda, phi)?;
    let der = nemitski_derivative(f, lambda, phi)?;
    let mut rem = Vec::with_capacity(scales.len());
    for &s in scales {
        let h = direction.scale(s);
        let shifted = FiniteWindowSequence::new(
            phi.start,
            phi.values.iter().zip(&h.values).map(|(a, b)| a + b).collect(),
        )?;
        let np = nemitski_apply(f, lambda, &shifted)?;
        let mut r = 0.0_f64;
        for i in 0..phi.len() {
            let e = &np.values[i] - &base.values[i] - &der[i] * &h.values[i];
            r = r.max(e.norm());
        }
        rem.push(r);
    }
    let pts: Vec<(f64, f64)> = scales
        .iter()
        .zip(&rem)
        .filter(|(_, r)| **r > 0.0)
        .map(|(s, r)| (s.ln(), r.ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (sxx, sxy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    } else {
        f64::INFINITY
    };
    Ok(RemainderProbe { scales: scales.to_vec(), remainders: rem, slope })
}

/// A_n(lambda) = D_2 f_n(lambda, 0).
pub fn linearize_at_zero(f: &NonlinearField) -> Result<DiscreteVectorField> {
    let g = f.clone();
    let d = f.dim();
    DiscreteVectorField::from_fn(d, f.window(), FieldKind::TabulatedFromNonlinear, move |l, n| {
        g.jacobian(l, n, &RealVector::zeros(d))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Passed,
    Failed,
    Indeterminate,
    Unverified,
}

#[derive(Debug, Clone, Serialize)]
pub struct F3Report {
    pub lambda: Vec<f64>,
    pub status: Status,
    pub rank_plus: Option<usize>,
    pub rank_minus: Option<usize>,
    /// Smallest singular value of [stable frame | unstable frame] at n = 0.
    pub transversality: Option<f64>,
    pub reason: String,
}

/// Dichotomy on the whole line at lambda: dichotomies on both half-lines with equal stable
/// ranks whose stable and backward-decaying subspaces at n = 0 are complementary.
pub fn check_f3(field: &DiscreteVectorField, lambda: &[f64], opts: SplitOptions) -> F3Report {
    let mut rep = F3Report {
        lambda: lambda.to_vec(),
        status: Status::Indeterminate,
        rank_plus: None,
        rank_minus: None,
        transversality: None,
        reason: String::new(),
    };
    let plus = estimate_splitting(field, lambda, Side::Plus, 0, opts);
    let minus = estimate_splitting(field, lambda, Side::Minus, 0, opts);
    let (plus, minus) = match (plus, minus) {
        (Ok(p), Ok(m)) => (p, m),
        (Err(e), _) | (_, Err(e)) => {
            rep.reason = e.to_string();
            return rep;
        }
    };
    rep.rank_plus = Some(plus.stable_rank);
    rep.rank_minus = Some(minus.stable_rank);
    if plus.stable_rank != minus.stable_rank {
        rep.status = Status::Failed;
        rep.reason = "stable ranks differ on the two half-lines".into();
        return rep;
    }
    let d = field.dim();
    let s = plus.stable_rank;
    let mut b = RealMatrix::zeros(d, d);
    b.columns_mut(0, s).copy_from(&plus.stable);
    b.columns_mut(s, d - s).copy_from(&minus.unstable);
    let sig = min_singular(&b);
    rep.transversality = Some(sig);
    if sig >= 1e-6 {
        rep.status = Status::Passed;
        rep.reason = "complementary splitting at n = 0".into();
    } else if sig <= 1e-10 {
        rep.status = Status::Failed;
        rep.reason = "a bounded solution decays in both directions".into();
    } else {
        rep.reason = "transversality inside the indeterminate band".into();
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    BifurcationCertified,
    ObstructionVanishes,
    HypothesesFailed,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub status: Status,
    pub evidence: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub verdict: Verdict,
    pub hypotheses: Vec<HypothesisCheck>,
    pub lambda0: Option<Vec<f64>>,
    pub lambda0_index: Option<usize>,
    pub index: Option<i64>,
    pub class: Option<KoClassDesk>,
    pub anchors: [i64; 2],
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CertifyOptions {
    /// (minus anchor, plus anchor); derived from the field window when absent.
    pub anchors: Option<(i64, i64)>,
    pub projector: ProjectorOptions,
    pub split: SplitOptions,
    pub verify_horizon: usize,
    /// Dimension of a manifold the loop is embedded in, if any.
    pub manifold_dim: Option<usize>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            anchors: None,
            projector: ProjectorOptions::default(),
            split: SplitOptions::default(),
            verify_horizon: 20,
            manifold_dim: None,
        }
    }
}

pub fn default_anchors(window: (i64, i64)) -> (i64, i64) {
    ((window.0 - 1).min(-1), (window.1 + 1).max(1))
}

fn failed(hyps: Vec<HypothesisCheck>, anchors: (i64, i64), index: Option<i64>, notes: Vec<String>) -> Certificate {
    Certificate {
        verdict: Verdict::HypothesesFailed,
        hypotheses: hyps,
        lambda0: None,
        lambda0_index: None,
        index,
        class: None,
        anchors: [anchors.0, anchors.1],
        notes,
    }
}

/// Check the hypotheses over the loop, find lambda0, compute the index bundle class and decide.
pub fn certify_bifurcation(f: &NonlinearField, base: &ParameterLoop, opts: CertifyOptions) -> Result<Certificate> {
    let d = f.dim();
    let anchors = opts.anchors.unwrap_or_else(|| default_anchors(f.window()));
    let (km, kp) = anchors;
    let mut hyps = Vec::new();
    let mut notes = Vec::new();
    let zero = RealVector::zeros(d);

    // F0: trivial branch and derivative consistency.
    let mut branch = 0.0_f64;
    let mut fd_gap = 0.0_f64;
    for l in base.samples() {
        for n in km - 5..=kp + 5 {
            branch = branch.max(f.eval(l, n, &zero)?.amax());
            if f.has_analytic_jacobian() {
                for x in [zero.clone(), RealVector::from_element(d, 0.1 * f.r0())] {
                    let a = f.jacobian(l, n, &x)?;
                    let b = f.fd_jacobian(l, n, &x)?;
                    fd_gap = fd_gap.max(max_abs(&(a - b)));
                }
            }
        }
    }
    let f0_ok = branch == 0.0 && fd_gap <= FD_TOL;
    hyps.push(HypothesisCheck {
        name: "F0",
        status: if f0_ok { Status::Passed } else { Status::Failed },
        evidence: format!("sup |f(lambda, n, 0)| = {branch:.3e}; analytic vs central-difference Jacobian gap {fd_gap:.3e}"),
    });
    if !f0_ok {
        return Ok(failed(hyps, anchors, None, notes));
    }

    // F1: sampled boundedness of the Jacobian on the ball of radius r0.
    let mut jb = 0.0_f64;
    for l in base.samples() {
        for n in km - 5..=kp + 5 {
            for j in 0..d {
                for s in [-0.5, 0.5] {
                    let mut x = zero.clone();
                    x[j] = s * f.r0();
                    jb = jb.max(op_norm(&f.jacobian(l, n, &x)?));
                }
            }
        }
    }
    hyps.push(HypothesisCheck {
        name: "F1",
        status: if jb.is_finite() { Status::Passed } else { Status::Failed },
        evidence: format!("sampled sup of the Jacobian on the ball of radius {}: {jb:.3e}", f.r0()),
    });
    notes.push("equicontinuity of the Jacobian in x uniformly in n is sampled, not proven".into());

    // F2: dichotomies on both half-lines at every sample.
    let lin = linearize_at_zero(f)?;
    let pair = match stable_unstable_bundles(&lin, base, kp, km, opts.projector, opts.verify_horizon) {
        Ok(p) => p,
        Err(e) => {
            hyps.push(HypothesisCheck { name: "F2", status: Status::Failed, evidence: e.to_string() });
            return Ok(failed(hyps, anchors, None, notes));
        }
    };
    let worst_alpha = pair.samples.iter().map(|s| s.plus.alpha.max(s.minus.alpha)).fold(0.0, f64::max);
    hyps.push(HypothesisCheck {
        name: "F2",
        status: Status::Passed,
        evidence: format!(
            "dichotomies on [{kp}, +inf) and (-inf, {km}] at all {} samples, worst alpha {worst_alpha:.4}",
            base.len()
        ),
    });
    let index = pair.stable.rank() as i64 - pair.minus_image.rank() as i64;
    if index != 0 {
        hyps.push(HypothesisCheck {
            name: "F3",
            status: Status::Failed,
            evidence: format!("index {index} is nonzero, so the linearization is never invertible"),
        });
        return Ok(failed(hyps, anchors, Some(index), notes));
    }

    // F3: first sample, in loop order, with a dichotomy on the whole line.
    let mut lambda0 = None;
    let mut indeterminate = 0;
    for (i, l) in base.samples().iter().enumerate() {
        let r = check_f3(&lin, l, opts.split);
        match r.status {
            Status::Passed => {
                lambda0 = Some(i);
                break;
            }
            Status::Indeterminate => indeterminate += 1,
            _ => {}
        }
    }
    let Some(i0) = lambda0 else {
        hyps.push(HypothesisCheck {
            name: "F3",
            status: if indeterminate > 0 { Status::Indeterminate } else { Status::Failed },
            evidence: format!("no sample with a dichotomy on the whole line ({indeterminate} indeterminate)"),
        });
        return Ok(failed(hyps, anchors, Some(index), notes));
    };
    hyps.push(HypothesisCheck {
        name: "F3",
        status: Status::Passed,
        evidence: format!("whole-line dichotomy at sample {i0}, lambda = {:?}", base.sample(i0)),
    });

    let class = index_bundle_class(&pair)?;
    let verdict = if class.delta_w1 == 1 { Verdict::BifurcationCertified } else { Verdict::ObstructionVanishes };
    if verdict == Verdict::ObstructionVanishes {
        notes.push("vanishing w1 difference is inconclusive: the test is sufficient, not necessary".into());
    }
    if let Some(k) = opts.manifold_dim {
        if k >= 2 && verdict == Verdict::BifurcationCertified {
            notes.push(format!(
                "unverified: for a loop in a {k}-dimensional parameter manifold the bifurcation set has \
                 covering dimension at least {} and is not contractible",
                k - 1
            ));
        }
    }
    Ok(Certificate {
        verdict,
        hypotheses: hyps,
        lambda0: Some(base.sample(i0).to_vec()),
        lambda0_index: Some(i0),
        index: Some(index),
        class: Some(class),
        anchors: [km, kp],
        notes,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LocalizeOptions {
    pub refinement: usize,
    pub window: (i64, i64),
    pub anchors: Option<(i64, i64)>,
    pub max_iter: usize,
    pub tol: f64,
    pub accept_residual: f64,
    pub decay_tol: f64,
    pub projector: ProjectorOptions,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        LocalizeOptions {
            refinement: 2,
            window: (-40, 40),
            anchors: None,
            max_iter: 50,
            tol: 1e-11,
            accept_residual: 1e-9,
            decay_tol: crate::fredholm::DECAY_TOL,
            projector: ProjectorOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Candidate {
    pub lambda: Vec<f64>,
    pub sample: usize,
    pub seed_scale: f64,
    pub sup_norm: f64,
    pub residual: f64,
    pub iterations: usize,
    pub solution: FiniteWindowSequence,
}

#[derive(Debug, Clone, Serialize)]
pub struct Cluster {
    pub samples: Vec<usize>,
    pub lambda_first: Vec<f64>,
    pub lambda_last: Vec<f64>,
    pub max_sup_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Localization {
    pub samples: usize,
    pub candidates: Vec<Candidate>,
    pub clusters: Vec<Cluster>,
    pub skipped: Vec<(usize, String)>,
}

struct Problem<'a> {
    f: &'a NonlinearField,
    lambda: &'a [f64],
    first: i64,
    last: i64,
    left: RealMatrix,
    right: RealMatrix,
}

impl Problem<'_> {
    fn unknowns(&self) -> usize {
        ((self.last - self.first + 1) as usize) * self.f.dim()
    }

    /// Equations phi(n+1) - f_n(phi(n)) followed by the boundary rows.
    fn residual(&self, x: &RealVector) -> Result<(RealVector, f64)> {
        let d = self.f.dim();
        let w = (self.last - self.first + 1) as usize;
        let rows = (w - 1) * d + self.left.nrows() + self.right.nrows();
        let mut r = RealVector::zeros(rows);
        let mut eq = 0.0_f64;
        for i in 0..w - 1 {
            let xi = x.rows(i * d, d).into_owned();
            let e = x.rows((i + 1) * d, d) - self.f.eval(self.lambda, self.first + i as i64, &xi)?;
            eq = eq.max(e.amax());
            r.rows_mut(i * d, d).copy_from(&e);
        }
        let o = (w - 1) * d;
        r.rows_mut(o, self.left.nrows()).copy_from(&(&self.left * x.rows(0, d)));
        r.rows_mut(o + self.left.nrows(), self.right.nrows())
            .copy_from(&(&self.right * x.rows((w - 1) * d, d)));
        Ok((r, eq))
    }

    fn jacobian(&self, x: &RealVector) -> Result<RealMatrix> {
        let d = self.f.dim();
        let w = (self.last - self.first + 1) as usize;
        let rows = (w - 1) * d + self.left.nrows() + self.right.nrows();
        let mut j = RealMatrix::zeros(rows, w * d);
        for i in 0..w - 1 {
            let xi = x.rows(i * d, d).into_owned();
            let a = self.f.jacobian(self.lambda, self.first + i as i64, &xi)?;
            j.view_mut((i * d, i * d), (d, d)).copy_from(&(-a));
            j.view_mut((i * d, (i + 1) * d), (d, d)).copy_from(&RealMatrix::identity(d, d));
        }
        let o = (w - 1) * d;
        j.view_mut((o, 0), (self.left.nrows(), d)).copy_from(&self.left);
        j.view_mut((o + self.left.nrows(), (w - 1) * d), (self.right.nrows(), d)).copy_from(&self.right);
        Ok(j)
    }

    /// Damped Newton (Armijo backtracking on the residual norm), least-squares steps.
    fn newton(&self, mut x: RealVector, max_iter: usize, tol: f64) -> Result<(RealVector, f64, usize)> {
        let (mut r, _) = self.residual(&x)?;
        for it in 0..max_iter {
            let nr = r.norm();
            if r.amax() <= tol {
                return Ok((x, r.amax(), it));
            }
            let j = self.jacobian(&x)?;
            let step = solve_least_squares(j, &(-&r))?;
            let mut t = 1.0;
            loop {
                let xt = &x + &step * t;
                let (rt, _) = self.residual(&xt)?;
                if rt.norm() <= (1.0 - 1e-4 * t) * nr || t < 1e-8 {
                    x = xt;
                    r = rt;
                    break;
                }
                t *= 0.5;
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric("Newton iterate diverged".into()));
            }
        }
        Ok((x, r.amax(), max_iter))
    }
}

/// LU for square systems, SVD least squares otherwise or when LU breaks down.
fn solve_least_squares(j: RealMatrix, r: &RealVector) -> Result<RealVector> {
    if j.is_square() {
        if let Some(x) = j.clone().lu().solve(r) {
            if x.iter().all(|v| v.is_finite()) && (&j * &x - r).amax() <= 1e-8 * (1.0 + r.amax()) {
                return Ok(x);
            }
        }
    }
    let svd = j.svd(true, true);
    let smax = svd.singular_values.max();
    svd.solve(r, 1e-12 * smax).map_err(|e| Error::Numeric(e.to_string()))
}

/// Right singular vector of the smallest singular value: inverse iteration on J^T J for square
/// J, dense SVD otherwise.
fn weakest_direction(j: &RealMatrix) -> RealVector {
    if j.is_square() {
        let lu = j.clone().lu();
        let lut = j.transpose().lu();
        let mut x = RealVector::from_fn(j.ncols(), |i, _| 1.0 + ((i * 7919) % 13) as f64 / 13.0);
        x /= x.norm();
        let mut ok = true;
        for _ in 0..8 {
            match lut.solve(&x).and_then(|y| lu.solve(&y)) {
                Some(y) if y.iter().all(|v| v.is_finite()) && y.norm() > 0.0 => x = &y / y.norm(),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return x;
        }
    }
    null_basis(j, 1).column(0).into_owned()
}

/// Seeds the Newton search with the weakest directions of the linearized, boundary-closed
/// operator at every refined sample and keeps small nontrivial solutions.
pub fn localize_bifurcations(f: &NonlinearField, base: &ParameterLoop, opts: LocalizeOptions) -> Result<Localization> {
    let grid = base.refined(opts.refinement)?;
    let lin = linearize_at_zero(f)?;
    let (first, last) = opts.window;
    let (km, kp) = opts.anchors.unwrap_or_else(|| default_anchors(f.window()));
    if !(first < km && km <= kp && kp < last) {
        return Err(Error::Domain("localization window must contain both anchors".into()));
    }
    let d = f.dim();
    let scales = [1e-3, 1e-2, 1e-1];
    let per_sample: Vec<std::result::Result<Vec<Candidate>, (usize, String)>> = grid
        .samples()
        .par_iter()
        .enumerate()
        .map(|(idx, l)| {
            let run = || -> Result<Vec<Candidate>> {
                let po = ProjectorOptions { length: (last - kp) as usize, ..opts.projector };
                let mo = ProjectorOptions { length: (km - first) as usize, ..opts.projector };
                let plus = build_projector_family(&lin, l, Side::Plus, kp, po)?;
                let minus = build_projector_family(&lin, l, Side::Minus, km, mo)?;
                let prob = Problem {
                    f,
                    lambda: l,
                    first,
                    last,
                    left: complement(minus.kernel(first)?).transpose(),
                    right: complement(plus.image(last)?).transpose(),
                };
                let j0 = prob.jacobian(&RealVector::zeros(prob.unknowns()))?;
                let seed_dir = weakest_direction(&j0);
                let mut found = Vec::new();
                for &s in &scales {
                    let seed = &seed_dir * (s * f.r0() / seed_dir.amax().max(f64::MIN_POSITIVE));
                    let Ok((x, res, it)) = prob.newton(seed, opts.max_iter, opts.tol) else { continue };
                    let (_, eq) = prob.residual(&x)?;
                    let sol = FiniteWindowSequence::from_flat(first, d, x.as_slice())?;
                    let nrm = sol.values.iter().map(|v| v.amax()).fold(0.0, f64::max);
                    if res <= opts.tol && eq <= opts.accept_residual && nrm > 10.0 * opts.decay_tol && nrm < f.r0() {
                        found.push(Candidate {
                            lambda: l.clone(),
                            sample: idx,
                            seed_scale: s,
                            sup_norm: nrm,
                            residual: eq,
                            iterations: it,
                            solution: sol,
                        });
                    }
                }
                Ok(found)
            };
            run().map_err(|e| (idx, e.to_string()))
        })
        .collect();
    let mut candidates = Vec::new();
    let mut skipped = Vec::new();
    for r in per_sample {
        match r {
            Ok(c) => candidates.extend(c),
            Err(e) => skipped.push(e),
        }
    }
    // Clusters of cyclically consecutive samples.
    let n = grid.len();
    let mut hit: Vec<bool> = vec![false; n];
    let mut best = vec![0.0_f64; n];
    for c in &candidates {
        hit[c.sample] = true;
        best[c.sample] = best[c.sample].max(c.sup_norm);
    }
    let mut clusters = Vec::new();
    if hit.iter().all(|h| *h) {
        clusters.push(Cluster {
            samples: (0..n).collect(),
            lambda_first: grid.sample(0).to_vec(),
            lambda_last: grid.sample(n - 1).to_vec(),
            max_sup_norm: best.iter().cloned().fold(0.0, f64::max),
        });
    } else if hit.iter().any(|h| *h) {
        let start = (0..n).find(|&i| !hit[i]).unwrap();
        let mut cur: Vec<usize> = Vec::new();
        for k in 1..=n {
            let i = (start + k) % n;
            if hit[i] {
                cur.push(i);
            } else if !cur.is_empty() {
                clusters.push(Cluster {
                    lambda_first: grid.sample(cur[0]).to_vec(),
                    lambda_last: grid.sample(*cur.last().unwrap()).to_vec(),
                    max_sup_norm: cur.iter().map(|&j| best[j]).fold(0.0, f64::max),
                    samples: std::mem::take(&mut cur),
                });
            }
        }
    }
    Ok(Localization { samples: n, candidates, clusters, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_remainder_is_second_order() {
        let f = NonlinearField::quadratic(0.5, 1, 1.0).unwrap();
        let phi = FiniteWindowSequence::from_flat(0, 1, &[0.1, -0.2, 0.3, 0.05]).unwrap();
        let dir = FiniteWindowSequence::from_flat(0, 1, &[1.0, 0.5, -0.3, 0.2]).unwrap();
        let p = remainder_probe(&f, &[0.0], &phi, &dir, &[1e-1, 1e-2, 1e-3]).unwrap();
        assert!(p.slope >= 1.8, "{}", p.slope);
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let f = NonlinearField::quadratic(0.5, 3, 1.0).unwrap();
        let x = RealVector::from_column_slice(&[0.3, -0.1, 0.7]);
        let a = f.jacobian(&[0.0], 0, &x).unwrap();
        let b = f.fd_jacobian(&[0.0], 0, &x).unwrap();
        assert!(max_abs(&(a - b)) < FD_TOL);
    }
}
