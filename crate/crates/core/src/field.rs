//! Parameter-dependent linear difference equations x(n+1) = A_n(lambda) x(n), parameter loops,
//! sampled vector bundles over loops, and the constructive hyperbolic families.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{all_finite, max_abs, op_norm, orthonormalize, principal_cosines, serde_mat, RealMatrix};

pub const MAX_FACTORS: u64 = 10_000;
pub const OVERFLOW_LIMIT: f64 = 1e150;

pub type MatrixEvaluator = Arc<dyn Fn(&[f64], i64) -> Result<RealMatrix> + Send + Sync>;
pub type FrameFn = Arc<dyn Fn(&[f64]) -> RealMatrix + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Autonomous,
    Asymptotic,
    Tabulated,
    Constructed,
    TabulatedFromNonlinear,
}

/// A_n(lambda) for all integers n; `window` is the range outside of which the field is settled.
#[derive(Clone)]
pub struct DiscreteVectorField {
    dim: usize,
    window: (i64, i64),
    kind: FieldKind,
    eval: MatrixEvaluator,
}

impl std::fmt::Debug for DiscreteVectorField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteVectorField")
            .field("dim", &self.dim)
            .field("window", &self.window)
            .field("kind", &self.kind)
            .finish()
    }
}

impl DiscreteVectorField {
    pub fn new(dim: usize, window: (i64, i64), kind: FieldKind, eval: MatrixEvaluator) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("field dimension must be positive".into()));
        }
        if window.0 > window.1 {
            return Err(Error::Input(format!("empty window {:?}", window)));
        }
        Ok(DiscreteVectorField { dim, window, kind, eval })
    }

    pub fn from_fn<F>(dim: usize, window: (i64, i64), kind: FieldKind, f: F) -> Result<Self>
    where
        F: Fn(&[f64], i64) -> Result<RealMatrix> + Send + Sync + 'static,
    {
        Self::new(dim, window, kind, Arc::new(f))
    }

    pub fn autonomous(m: RealMatrix) -> Result<Self> {
        check_matrix(&m, None)?;
        let d = m.nrows();
        Self::from_fn(d, (0, 0), FieldKind::Autonomous, move |_, _| Ok(m.clone()))
    }

    /// `minus` for n < switch, `plus` for n >= switch.
    pub fn asymptotic(minus: RealMatrix, plus: RealMatrix, switch: i64) -> Result<Self> {
        check_matrix(&minus, None)?;
        check_matrix(&plus, Some(minus.nrows()))?;
        let d = minus.nrows();
        Self::from_fn(d, (switch - 1, switch), FieldKind::Asymptotic, move |_, n| {
            Ok(if n < switch { minus.clone() } else { plus.clone() })
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn window(&self) -> (i64, i64) {
        self.window
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn evaluator(&self) -> MatrixEvaluator {
        self.eval.clone()
    }

    pub fn with_kind(mut self, kind: FieldKind) -> Self {
        self.kind = kind;
        self
    }

    /// A_n(lambda), validated for shape and finiteness.
    pub fn at(&self, lambda: &[f64], n: i64) -> Result<RealMatrix> {
        let m = (self.eval)(lambda, n)?;
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::Input(format!(
                "evaluator returned {}x{} at n = {n}, expected {d}x{d}",
                m.nrows(),
                m.ncols(),
                d = self.dim
            )));
        }
        if !all_finite(&m) {
            return Err(Error::Input(format!("non-finite matrix entry at n = {n}")));
        }
        Ok(m)
    }

    /// The field c * A_n(lambda).
    pub fn scaled(&self, c: f64) -> Self {
        let inner = self.eval.clone();
        DiscreteVectorField {
            dim: self.dim,
            window: self.window,
            kind: self.kind,
            eval: Arc::new(move |l, n| Ok(inner(l, n)? * c)),
        }
    }

    /// sup of ||A_n(lambda_i)|| over the loop samples and the given times.
    pub fn sampled_bound(&self, base: &ParameterLoop, times: std::ops::RangeInclusive<i64>) -> Result<f64> {
        let mut b = 0.0_f64;
        for l in base.samples() {
            for n in times.clone() {
                b = b.max(op_norm(&self.at(l, n)?));
            }
        }
        Ok(b)
    }
}

fn check_matrix(m: &RealMatrix, dim: Option<usize>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Input(format!("expected square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if let Some(d) = dim {
        if m.nrows() != d {
            return Err(Error::Input(format!("dimension mismatch: {} vs {d}", m.nrows())));
        }
    }
    if !all_finite(m) {
        return Err(Error::Input("non-finite matrix entry".into()));
    }
    Ok(())
}

/// Phi(k, n) = A_{k-1} ... A_n, Phi(n, n) = I.
pub fn propagator(field: &DiscreteVectorField, lambda: &[f64], k: i64, n: i64) -> Result<RealMatrix> {
    if k < n {
        return Err(Error::Domain(format!("propagator needs k >= n, got k = {k}, n = {n}")));
    }
    if (k - n) as u64 > MAX_FACTORS {
        return Err(Error::Domain(format!("product of {} factors exceeds the cap {MAX_FACTORS}", k - n)));
    }
    let mut p = RealMatrix::identity(field.dim(), field.dim());
    for j in n..k {
        p = field.at(lambda, j)? * p;
        if max_abs(&p) > OVERFLOW_LIMIT {
            return Err(Error::Numeric(format!("propagator overflow at step {j}")));
        }
    }
    Ok(p)
}

/// Finitely many distinct parameter samples traversed cyclically.
#[derive(Debug, Clone, Serialize)]
pub struct ParameterLoop {
    samples: Vec<Vec<f64>>,
    angular: bool,
}

impl ParameterLoop {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        if samples.len() < 8 {
            return Err(Error::Input(format!("a loop needs at least 8 samples, got {}", samples.len())));
        }
        let dim = samples[0].len();
        if dim == 0 || samples.iter().any(|s| s.len() != dim || s.iter().any(|x| !x.is_finite())) {
            return Err(Error::Input("loop samples must be finite vectors of equal positive length".into()));
        }
        for i in 0..samples.len() {
            for j in i + 1..samples.len() {
                if samples[i] == samples[j] {
                    return Err(Error::Input(format!("loop samples {i} and {j} coincide")));
                }
            }
        }
        Ok(ParameterLoop { samples, angular: false })
    }

    /// theta_i = 2 pi i / n, i = 0..n.
    pub fn angular(n: usize) -> Result<Self> {
        let samples = (0..n).map(|i| vec![2.0 * PI * i as f64 / n as f64]).collect();
        let mut l = Self::new(samples)?;
        l.angular = true;
        Ok(l)
    }

    pub fn is_angular(&self) -> bool {
        self.angular
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i % self.samples.len()]
    }

    /// Angular loops only: the same circle with `factor` times as many samples.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if !self.angular {
            return Err(Error::Domain("only angular loops can be refined".into()));
        }
        Self::angular(self.len() * factor.max(1))
    }

    /// The same loop started at sample k.
    pub fn rotated(&self, k: usize) -> Self {
        let n = self.samples.len();
        ParameterLoop {
            samples: (0..n).map(|i| self.samples[(i + k) % n].clone()).collect(),
            angular: self.angular,
        }
    }

    pub fn index_of(&self, lambda: &[f64]) -> Option<usize> {
        self.samples
            .iter()
            .position(|s| s.iter().zip(lambda).all(|(a, b)| (a - b).abs() <= 1e-12))
    }
}

/// A rank-k subbundle of the trivial bundle Lambda x R^d, given by orthonormal frames.
#[derive(Clone)]
pub struct SampledBundle {
    base: ParameterLoop,
    ambient: usize,
    rank: usize,
    frames: Vec<RealMatrix>,
    analytic: Option<FrameFn>,
}

impl std::fmt::Debug for SampledBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SampledBundle")
            .field("samples", &self.base.len())
            .field("ambient", &self.ambient)
            .field("rank", &self.rank)
            .finish()
    }
}

/// Serializable view of a sampled bundle.
#[derive(Debug, Clone, Serialize)]
pub struct BundleRecord {
    pub ambient: usize,
    pub rank: usize,
    pub samples: Vec<Vec<f64>>,
    #[serde(with = "serde_mat::vec")]
    pub frames: Vec<RealMatrix>,
}

pub const MAX_FIBRE_ANGLE: f64 = PI / 3.0;

impl SampledBundle {
    pub fn new(base: ParameterLoop, frames: Vec<RealMatrix>) -> Result<Self> {
        if frames.len() != base.len() {
            return Err(Error::Input(format!("{} frames for {} samples", frames.len(), base.len())));
        }
        let ambient = frames[0].nrows();
        let rank = frames[0].ncols();
        if ambient == 0 || rank > ambient {
            return Err(Error::Input("invalid frame shape".into()));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.nrows() != ambient || f.ncols() != rank {
                return Err(Error::Input(format!("frame {i} has inconsistent shape")));
            }
            if !all_finite(f) {
                return Err(Error::Input(format!("frame {i} has non-finite entries")));
            }
            let g = f.transpose() * f - RealMatrix::identity(rank, rank);
            if max_abs(&g) > 1e-8 {
                return Err(Error::Input(format!("frame {i} is not orthonormal")));
            }
        }
        let b = SampledBundle { base, ambient, rank, frames, analytic: None };
        b.check_sampling()?;
        Ok(b)
    }

    /// Bundle with a closed-form frame map, sampled on `base`.
    pub fn analytic(base: ParameterLoop, frame: FrameFn) -> Result<Self> {
        let frames = base.samples().iter().map(|l| frame(l)).collect();
        let mut b = Self::new(base, frames)?;
        b.analytic = Some(frame);
        Ok(b)
    }

    fn check_sampling(&self) -> Result<()> {
        let n = self.frames.len();
        let cos_min = MAX_FIBRE_ANGLE.cos();
        for i in 0..n {
            let j = (i + 1) % n;
            if let Some(&c) = principal_cosines(&self.frames[i], &self.frames[j]).last() {
                if c <= cos_min {
                    return Err(Error::NotABundle(format!(
                        "largest principal angle between fibres {i} and {j} is {:.4} rad (limit pi/3)",
                        c.clamp(-1.0, 1.0).acos()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn base(&self) -> &ParameterLoop {
        &self.base
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn frames(&self) -> &[RealMatrix] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &RealMatrix {
        &self.frames[i % self.frames.len()]
    }

    pub fn fibre_projector(&self, i: usize) -> RealMatrix {
        let f = self.frame(i);
        f * f.transpose()
    }

    /// Frame at an arbitrary parameter: closed form if available, otherwise an exact sample match.
    pub fn frame_at(&self, lambda: &[f64]) -> Result<RealMatrix> {
        if let Some(f) = &self.analytic {
            return Ok(f(lambda));
        }
        self.base
            .index_of(lambda)
            .map(|i| self.frames[i].clone())
            .ok_or_else(|| Error::Domain(format!("parameter {lambda:?} is not a sample of this bundle")))
    }

    /// Re-sample an analytic bundle on another loop.
    pub fn resampled(&self, base: ParameterLoop) -> Result<Self> {
        match &self.analytic {
            Some(f) => Self::analytic(base, f.clone()),
            None => Err(Error::Domain("only analytic bundles can be re-sampled".into())),
        }
    }

    /// Fibrewise direct sum in R^(d1 + d2).
    pub fn direct_sum(&self, other: &SampledBundle) -> Result<Self> {
        if self.base.len() != other.base.len() {
            return Err(Error::Input("direct sum needs a common base loop".into()));
        }
        let (d1, d2, k1, k2) = (self.ambient, other.ambient, self.rank, other.rank);
        let join = move |a: &RealMatrix, b: &RealMatrix| {
            let mut f = RealMatrix::zeros(d1 + d2, k1 + k2);
            f.view_mut((0, 0), (d1, k1)).copy_from(a);
            f.view_mut((d1, k1), (d2, k2)).copy_from(b);
            f
        };
        match (&self.analytic, &other.analytic) {
            (Some(fa), Some(fb)) => {
                let (fa, fb) = (fa.clone(), fb.clone());
                Self::analytic(self.base.clone(), Arc::new(move |l| join(&fa(l), &fb(l))))
            }
            _ => {
                let frames = self.frames.iter().zip(&other.frames).map(|(a, b)| join(a, b)).collect();
                Self::new(self.base.clone(), frames)
            }
        }
    }

    /// span(e_1, ..., e_rank) in R^ambient at every sample.
    pub fn trivial(base: ParameterLoop, rank: usize, ambient: usize) -> Result<Self> {
        if rank > ambient || ambient == 0 {
            return Err(Error::Input(format!("trivial bundle of rank {rank} in R^{ambient}")));
        }
        let f = RealMatrix::identity(ambient, rank);
        Self::analytic(base, Arc::new(move |_| f.clone()))
    }

    pub fn record(&self) -> BundleRecord {
        BundleRecord {
            ambient: self.ambient,
            rank: self.rank,
            samples: self.base.samples().to_vec(),
            frames: self.frames.clone(),
        }
    }
}

/// The Moebius line bundle: fibre span(cos(theta/2), sin(theta/2)) over the angular loop.
pub fn mobius_bundle(base: &ParameterLoop) -> Result<SampledBundle> {
    if !base.is_angular() {
        return Err(Error::Domain("the Moebius bundle needs an angular loop".into()));
    }
    if base.len() < 8 {
        return Err(Error::NotABundle("the Moebius bundle needs at least 8 samples".into()));
    }
    SampledBundle::analytic(
        base.clone(),
        Arc::new(|l: &[f64]| {
            let t = l[0] / 2.0;
            RealMatrix::from_column_slice(2, 1, &[t.cos(), t.sin()])
        }),
    )
}

/// H = q Pi + (1/q)(I - Pi) for the orthogonal projector Pi onto span(frame).
pub fn hyperbolic_matrix(frame: &RealMatrix, q: f64) -> RealMatrix {
    let d = frame.nrows();
    let f = orthonormalize(frame);
    let pi = &f * f.transpose();
    &pi * q + (RealMatrix::identity(d, d) - pi) * (1.0 / q)
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Input(format!("contraction rate q must lie in (0, 1), got {q}")));
    }
    Ok(())
}

/// Autonomous family lambda -> H_E(lambda), contracting on E and expanding on its complement.
pub fn construct_hyperbolic_family(bundle: &SampledBundle, q: f64) -> Result<DiscreteVectorField> {
    check_q(q)?;
    let b = bundle.clone();
    DiscreteVectorField::from_fn(bundle.ambient(), (0, 0), FieldKind::Constructed, move |l, _| {
        Ok(hyperbolic_matrix(&b.frame_at(l)?, q))
    })
}

/// Largest ||H(lambda_i) - H(lambda_{i+1})|| over the loop; bounded by (1/q - q) times the fibre
/// distance.
pub fn hyperbolic_family_jump(bundle: &SampledBundle, q: f64) -> f64 {
    let n = bundle.base().len();
    (0..n)
        .map(|i| op_norm(&(hyperbolic_matrix(bundle.frame(i), q) - hyperbolic_matrix(bundle.frame(i + 1), q))))
        .fold(0.0, f64::max)
}

/// A(lambda, n) = H_F for n < kappa_minus, T for kappa_minus <= n <= kappa_plus, H_E for
/// n > kappa_plus. The stable bundle at +infinity is E and at -infinity is F.
pub fn realization_field(
    e: &SampledBundle,
    f: &SampledBundle,
    q: f64,
    kappa_minus: i64,
    kappa_plus: i64,
    middle: Option<MatrixEvaluator>,
) -> Result<DiscreteVectorField> {
    check_q(q)?;
    if e.ambient() != f.ambient() {
        return Err(Error::Input(format!("bundles live in R^{} and R^{}", e.ambient(), f.ambient())));
    }
    if e.base().len() != f.base().len() {
        return Err(Error::Input("bundles must share the base loop".into()));
    }
    if kappa_minus > kappa_plus {
        return Err(Error::Input(format!("kappa_minus {kappa_minus} > kappa_plus {kappa_plus}")));
    }
    let d = e.ambient();
    if let Some(t) = &middle {
        for l in e.base().samples() {
            for n in kappa_minus..=kappa_plus {
                let m = t(l, n)?;
                if m.nrows() != d || m.ncols() != d || crate::linalg::min_singular(&m) < 1e-12 {
                    return Err(Error::Input(format!("middle matrix not invertible at lambda = {l:?}, n = {n}")));
                }
            }
        }
    }
    let (e, f) = (e.clone(), f.clone());
    DiscreteVectorField::from_fn(d, (kappa_minus, kappa_plus), FieldKind::Constructed, move |l, n| {
        if n < kappa_minus {
            Ok(hyperbolic_matrix(&f.frame_at(l)?, q))
        } else if n > kappa_plus {
            Ok(hyperbolic_matrix(&e.frame_at(l)?, q))
        } else {
            match &middle {
                Some(t) => t(l, n),
                None => Ok(RealMatrix::identity(d, d)),
            }
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SmallnessReport {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
    pub sup_plus: f64,
    pub sup_minus: f64,
    pub ok: bool,
    /// First time where the sampled perturbation norm exceeds its bound.
    pub first_violation: Option<i64>,
}

/// A + D together with a sampled check that ||D|| <= gamma_plus for n >= kappa_plus and
/// ||D|| <= gamma_minus for n <= kappa_minus, over `span` steps of each tail.
#[allow(clippy::too_many_arguments)]
pub fn perturb_field(
    base: &DiscreteVectorField,
    perturbation: MatrixEvaluator,
    gamma_plus: f64,
    gamma_minus: f64,
    kappa_plus: i64,
    kappa_minus: i64,
    samples: &ParameterLoop,
    span: i64,
) -> Result<(DiscreteVectorField, SmallnessReport)> {
    if kappa_minus > kappa_plus {
        return Err(Error::Input("perturbation anchors out of order".into()));
    }
    let d = base.dim();
    let mut rep = SmallnessReport {
        gamma_plus,
        gamma_minus,
        sup_plus: 0.0,
        sup_minus: 0.0,
        ok: true,
        first_violation: None,
    };
    let note = |n: i64, rep: &mut SmallnessReport| {
        if rep.first_violation.is_none_or(|v| n.abs() < v.abs()) {
            rep.first_violation = Some(n);
        }
        rep.ok = false;
    };
    for l in samples.samples() {
        for s in 0..=span {
            let np = kappa_plus + s;
            let dp = perturbation(l, np)?;
            if dp.nrows() != d || dp.ncols() != d {
                return Err(Error::Input("perturbation has the wrong shape".into()));
            }
            let a = op_norm(&dp);
            rep.sup_plus = rep.sup_plus.max(a);
            if a > gamma_plus {
                note(np, &mut rep);
            }
            let nm = kappa_minus - s;
            let b = op_norm(&perturbation(l, nm)?);
            rep.sup_minus = rep.sup_minus.max(b);
            if b > gamma_minus {
                note(nm, &mut rep);
            }
        }
    }
    let a = base.evaluator();
    let window = base.window();
    let field = DiscreteVectorField::from_fn(
        d,
        (window.0.min(kappa_minus), window.1.max(kappa_plus)),
        FieldKind::Asymptotic,
        move |l, n| Ok(a(l, n)? + perturbation(l, n)?),
    )?;
    Ok((field, rep))
}

/// Field tabulated on a finite grid of parameters and times; clamped outside the time window.
#[derive(Debug, Clone, Serialize)]
pub struct TabulatedField {
    pub dim: usize,
    pub n_min: i64,
    pub params: Vec<Vec<f64>>,
    /// matrices[p][t] is A_{n_min + t}(params[p])
    #[serde(skip)]
    pub matrices: Vec<Vec<RealMatrix>>,
}

impl TabulatedField {
    pub fn into_field(self) -> Result<DiscreteVectorField> {
        let w = self.matrices.first().map(|r| r.len()).unwrap_or(0);
        if self.params.is_empty() || w == 0 || self.matrices.len() != self.params.len() {
            return Err(Error::Input("tabulated field needs at least one parameter and one time".into()));
        }
        for row in &self.matrices {
            if row.len() != w {
                return Err(Error::Input("ragged tabulated field".into()));
            }
            for m in row {
                check_matrix(m, Some(self.dim))?;
            }
        }
        let n_min = self.n_min;
        let n_max = n_min + w as i64 - 1;
        let tab = Arc::new(self);
        let dim = tab.dim;
        DiscreteVectorField::from_fn(dim, (n_min, n_max), FieldKind::Tabulated, move |l, n| {
            let p = tab
                .params
                .iter()
                .position(|s| s.len() == l.len() && s.iter().zip(l).all(|(a, b)| (a - b).abs() <= 1e-12))
                .ok_or_else(|| Error::Domain(format!("parameter {l:?} is not tabulated")))?;
            let t = (n.clamp(n_min, n_max) - n_min) as usize;
            Ok(tab.matrices[p][t].clone())
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propagator_cocycle() {
        let f = DiscreteVectorField::from_fn(2, (0, 0), FieldKind::Constructed, |_, n| {
            Ok(RealMatrix::from_row_slice(2, 2, &[1.0, 0.1 * n as f64, 0.0, 0.9]))
        })
        .unwrap();
        let a = propagator(&f, &[0.0], 7, 3).unwrap();
        let b = propagator(&f, &[0.0], 3, -2).unwrap();
        let c = propagator(&f, &[0.0], 7, -2).unwrap();
        assert!(max_abs(&(a * b - c)) < 1e-12);
        assert!(matches!(propagator(&f, &[0.0], 1, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn propagator_overflow() {
        let f = DiscreteVectorField::autonomous(RealMatrix::identity(1, 1) * 1e10).unwrap();
        assert!(matches!(propagator(&f, &[0.0], 20, 0), Err(Error::Numeric(_))));
    }

    #[test]
    fn coarse_mobius_rejected() {
        let base = ParameterLoop::new((0..8).map(|i| vec![i as f64]).collect()).unwrap();
        let frames: Vec<RealMatrix> = (0..8)
            .map(|i| {
                let t = 2.0 * PI * 3.0 * i as f64 / 8.0;
                RealMatrix::from_column_slice(2, 1, &[(t / 2.0).cos(), (t / 2.0).sin()])
            })
            .collect();
        assert!(matches!(SampledBundle::new(base, frames), Err(Error::NotABundle(_))));
    }

    #[test]
    fn duplicate_samples_rejected() {
        let mut s: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64]).collect();
        s[3] = vec![0.0];
        assert!(ParameterLoop::new(s).is_err());
    }
}
