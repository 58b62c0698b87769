//! The difference operator (L phi)(n) = phi(n+1) - A_n phi(n): truncations, kernel and
//! cokernel dimensions, the index, and Green-function solves on half-lines.

use serde::Serialize;

use crate::dichotomy::{build_projector_family, verify_ed, EdWitness, ProjectorFamily, ProjectorOptions, Side};
use crate::error::{Error, Result};
use crate::field::{propagator, DiscreteVectorField};
use crate::linalg::{
    complement, gapped_rank, max_abs, null_basis, op_norm, range_basis, restricted_solve, serde_mat,
    singular_values, RealMatrix, RealVector,
};
use crate::sequence::FiniteWindowSequence;

pub const DECAY_TOL: f64 = 1e-6;
pub const SOLVE_TOL: f64 = 1e-8;

/// Block matrix of L on phi(first..=last) -> psi(first..last).
#[derive(Debug, Clone, Serialize)]
pub struct TruncatedOperator {
    pub first: i64,
    pub last: i64,
    pub dim: usize,
    #[serde(skip)]
    pub matrix: RealMatrix,
}

pub fn assemble_truncated(field: &DiscreteVectorField, lambda: &[f64], first: i64, last: i64) -> Result<TruncatedOperator> {
    let w = last - first + 1;
    if w < 8 {
        return Err(Error::Input(format!("truncation window [{first}, {last}] has fewer than 8 points")));
    }
    let d = field.dim();
    let w = w as usize;
    let mut m = RealMatrix::zeros((w - 1) * d, w * d);
    for i in 0..w - 1 {
        let a = field.at(lambda, first + i as i64)?;
        m.view_mut((i * d, i * d), (d, d)).copy_from(&(-a));
        m.view_mut((i * d, (i + 1) * d), (d, d)).copy_from(&RealMatrix::identity(d, d));
    }
    Ok(TruncatedOperator { first, last, dim: d, matrix: m })
}

/// (L phi)(n) for n in [phi.start, phi.end - 1].
pub fn apply_difference(field: &DiscreteVectorField, lambda: &[f64], phi: &FiniteWindowSequence) -> Result<FiniteWindowSequence> {
    let mut out = Vec::with_capacity(phi.len().saturating_sub(1));
    for n in phi.start..phi.end() {
        let a = field.at(lambda, n)?;
        out.push(phi.value(n + 1) - a * phi.value(n));
    }
    FiniteWindowSequence::new(phi.start, out)
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexReport {
    pub lambda: Vec<f64>,
    pub window: [i64; 2],
    pub anchor_plus: i64,
    pub anchor_minus: i64,
    pub rank_plus: usize,
    pub rank_minus: usize,
    /// rank P+ - rank P-
    pub index: i64,
    pub dim_ker: usize,
    pub dim_coker: usize,
    /// Same dimensions obtained from subspace intersection and sum at the anchors.
    pub dim_ker_subspace: usize,
    pub dim_coker_subspace: usize,
    pub consistent: bool,
    pub kernel_decays: bool,
    pub condition: f64,
    pub kernel: Vec<FiniteWindowSequence>,
}

/// Kernel and cokernel of L from two routes: the intersection of the backward-decaying
/// subspace pushed to the plus anchor with the stable subspace there, and the null space of
/// the truncated operator with boundary rows phi(first) in ker P-(first), phi(last) in
/// im P+(last).
pub fn kernel_cokernel(
    field: &DiscreteVectorField,
    lambda: &[f64],
    first: i64,
    last: i64,
    plus: &ProjectorFamily,
    minus: &ProjectorFamily,
    decay_tol: f64,
) -> Result<IndexReport> {
    let (kp, km) = (plus.anchor, minus.anchor);
    if plus.side != Side::Plus || minus.side != Side::Minus {
        return Err(Error::Input("need a plus-side and a minus-side family".into()));
    }
    if !(first <= km && km <= kp && kp <= last) {
        return Err(Error::Domain(format!(
            "anchors {km}, {kp} must lie in order inside the window [{first}, {last}]"
        )));
    }
    if !plus.contains(last) || !minus.contains(first) {
        return Err(Error::Domain(format!(
            "projector windows [{}, {}] and [{}, {}] do not cover the truncation window [{first}, {last}]",
            minus.first, minus.last, plus.first, plus.last
        )));
    }
    let d = field.dim();
    let s_plus = plus.rank;
    let s_minus = minus.rank;
    let index = s_plus as i64 - s_minus as i64;

    // Route one: subspaces at the plus anchor.
    let kmin = minus.kernel(km)?;
    let u = kmin.ncols();
    let phi_k = propagator(field, lambda, kp, km)? * kmin;
    let r0 = if u == 0 { 0 } else { gapped_rank(&singular_values(&phi_k), op_norm(&phi_k))? };
    let kb = range_basis(&phi_k, r0);
    let s_img = plus.image(kp)?;
    let sperp = complement(s_img);
    let cross = sperp.transpose() * &kb;
    let rc = if cross.nrows() == 0 || cross.ncols() == 0 { 0 } else { gapped_rank(&singular_values(&cross), 1.0)? };
    let ker_sub = (u - r0) + (r0 - rc);
    let mut sum = RealMatrix::zeros(d, r0 + s_plus);
    sum.columns_mut(0, r0).copy_from(&kb);
    sum.columns_mut(r0, s_plus).copy_from(s_img);
    let rs = if sum.ncols() == 0 { 0 } else { gapped_rank(&singular_values(&sum), 1.0)? };
    let coker_sub = d - rs;

    // Route two: the truncated operator with boundary rows.
    let trunc = assemble_truncated(field, lambda, first, last)?;
    let w = (last - first + 1) as usize;
    let left = complement(minus.kernel(first)?).transpose();
    let right = complement(plus.image(last)?).transpose();
    let rows = trunc.matrix.nrows() + left.nrows() + right.nrows();
    let mut m = RealMatrix::zeros(rows, w * d);
    m.rows_mut(0, trunc.matrix.nrows()).copy_from(&trunc.matrix);
    let r1 = trunc.matrix.nrows();
    m.view_mut((r1, 0), (left.nrows(), d)).copy_from(&left);
    m.view_mut((r1 + left.nrows(), (w - 1) * d), (right.nrows(), d)).copy_from(&right);
    let sv = singular_values(&m);
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = gapped_rank(&sv, smax)?;
    let ker = w * d - rank;
    let coker = rows - rank;
    let smin_nz = sv.iter().take(rank).next_back().copied().unwrap_or(smax);
    let basis = null_basis(&m, ker);
    let mut kernel = Vec::new();
    let mut decays = true;
    for c in 0..ker {
        let seq = FiniteWindowSequence::from_flat(first, d, basis.column(c).as_slice())?;
        let seq = seq.scale(1.0 / seq.sup_norm().max(f64::MIN_POSITIVE));
        let (l, r) = seq.decay_flags(decay_tol);
        decays &= l && r;
        kernel.push(seq);
    }
    let consistent =
        ker == ker_sub && coker == coker_sub && ker as i64 - coker as i64 == index;
    Ok(IndexReport {
        lambda: lambda.to_vec(),
        window: [first, last],
        anchor_plus: kp,
        anchor_minus: km,
        rank_plus: s_plus,
        rank_minus: s_minus,
        index,
        dim_ker: ker,
        dim_coker: coker,
        dim_ker_subspace: ker_sub,
        dim_coker_subspace: coker_sub,
        consistent,
        kernel_decays: decays,
        condition: smax / smin_nz,
        kernel,
    })
}

/// Half-line families and ED witnesses on both sides, then `kernel_cokernel`.
#[derive(Debug, Clone, Serialize)]
pub struct IndexRun {
    pub report: IndexReport,
    pub plus: EdWitness,
    pub minus: EdWitness,
}

pub fn index_at(
    field: &DiscreteVectorField,
    lambda: &[f64],
    window: (i64, i64),
    anchors: (i64, i64),
    opts: ProjectorOptions,
    verify_horizon: usize,
) -> Result<IndexRun> {
    let (first, last) = window;
    let (km, kp) = anchors;
    if !(first <= km && km <= kp && kp <= last) {
        return Err(Error::Domain("anchors must lie in order inside the window".into()));
    }
    let po = ProjectorOptions { length: (last - kp).max(1) as usize, ..opts };
    let mo = ProjectorOptions { length: (km - first).max(1) as usize, ..opts };
    let plus = build_projector_family(field, lambda, Side::Plus, kp, po)?;
    let minus = build_projector_family(field, lambda, Side::Minus, km, mo)?;
    let wp = verify_ed(field, lambda, &plus, verify_horizon)?;
    let wm = verify_ed(field, lambda, &minus, verify_horizon)?;
    let report = kernel_cokernel(field, lambda, first, last, &plus, &minus, DECAY_TOL)?;
    Ok(IndexRun { report, plus: wp, minus: wm })
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenSolution {
    pub phi: FiniteWindowSequence,
    pub tail_bound: f64,
    pub residual: f64,
}

/// Preimage in ker P(n) of y in ker P(n+1) under A_n.
fn backward_on_kernel(a: &RealMatrix, ker: &RealMatrix, y: &RealVector, n: i64) -> Result<RealVector> {
    let w = restricted_solve(a, ker, y)?;
    let res = (a * &w - y).norm();
    if res > 1e-8 * (1.0 + y.norm()) {
        return Err(Error::Numeric(format!("backward step on the kernel failed at n = {n}: residual {res:.3e}")));
    }
    Ok(w)
}

/// Solve L phi = psi on a half-line with the Green operator of the given family.
///
/// Plus side: phi on [anchor, pf.last], psi on [anchor, pf.last - 1].
/// Minus side: phi on [pf.first, anchor], psi on [pf.first, anchor - 1].
/// `witness` supplies (K, alpha) for the tail estimate.
pub fn green_solve(
    field: &DiscreteVectorField,
    lambda: &[f64],
    side: Side,
    anchor: i64,
    psi: &FiniteWindowSequence,
    pf: &ProjectorFamily,
    witness: &EdWitness,
    solve_tol: f64,
) -> Result<GreenSolution> {
    let d = field.dim();
    if psi.dim() != d && !psi.is_empty() {
        return Err(Error::Input(format!("right-hand side has dimension {}, field {d}", psi.dim())));
    }
    let (lo, hi) = match side {
        Side::Plus => (anchor, pf.last),
        Side::Minus => (pf.first, anchor),
        Side::Full => return Err(Error::Domain("Green solves are done on half-lines".into())),
    };
    if side != pf.side || !pf.contains(lo) || !pf.contains(hi) || hi <= lo {
        return Err(Error::Domain(format!(
            "projector family [{}, {}] ({:?}) does not cover the half-window [{lo}, {hi}]",
            pf.first, pf.last, pf.side
        )));
    }
    if !psi.is_empty() && (psi.start < lo || psi.end() > hi - 1) {
        return Err(Error::Domain(format!(
            "right-hand side [{}, {}] is not supported on [{lo}, {}]",
            psi.start,
            psi.end(),
            hi - 1
        )));
    }
    let len = (hi - lo + 1) as usize;
    let mut mats = Vec::with_capacity(len - 1);
    for n in lo..hi {
        mats.push(field.at(lambda, n)?);
    }
    let eye = RealMatrix::identity(d, d);
    let mut u = vec![RealVector::zeros(d); len];
    for n in lo..hi {
        let i = (n - lo) as usize;
        // Re-projecting keeps rounding errors from growing along the kernel.
        let p = pf.at(n + 1)?;
        u[i + 1] = p * (&mats[i] * &u[i] + psi.value(n));
    }
    let mut v = vec![RealVector::zeros(d); len];
    for n in (lo..hi).rev() {
        let i = (n - lo) as usize;
        let y = (&eye - pf.at(n + 1)?) * psi.value(n) + &v[i + 1];
        v[i] = backward_on_kernel(&mats[i], pf.kernel(n)?, &y, n)?;
    }
    let values: Vec<RealVector> = u.iter().zip(&v).map(|(a, b)| a - b).collect();
    let phi = FiniteWindowSequence::new(lo, values)?;

    // Unsampled continuation of psi is taken to be bounded by its outermost 10%.
    let rhs_len = (hi - lo) as usize;
    let edge = (rhs_len / 10).max(1) as i64;
    let edge_mag = match side {
        Side::Plus => (hi - edge..hi).map(|n| psi.value(n).norm()).fold(0.0, f64::max),
        _ => (lo..lo + edge).map(|n| psi.value(n).norm()).fold(0.0, f64::max),
    };
    let pnorm = pf.projectors.iter().map(|p| op_norm(&(&eye - p)).max(op_norm(p))).fold(0.0, f64::max);
    let (k, a) = (witness.k, witness.alpha);
    let tail_bound = k * a / (1.0 - a) * edge_mag * pnorm;
    if tail_bound > solve_tol {
        let extend = ((solve_tol / tail_bound).ln() / a.ln()).ceil().max(1.0) as usize;
        return Err(Error::WindowTooShort { tail_bound, extend_by: extend });
    }
    let lphi = apply_difference(field, lambda, &phi)?;
    let mut residual = 0.0_f64;
    for n in lo..hi {
        residual = residual.max((lphi.value(n) - psi.value(n)).amax());
    }
    Ok(GreenSolution { phi, tail_bound, residual })
}

/// Green kernel G(n, m) of a projector family, for n, m in its window.
pub struct GreenKernel<'a> {
    field: &'a DiscreteVectorField,
    lambda: Vec<f64>,
    pf: &'a ProjectorFamily,
}

impl<'a> GreenKernel<'a> {
    pub fn new(field: &'a DiscreteVectorField, lambda: &[f64], pf: &'a ProjectorFamily) -> Self {
        GreenKernel { field, lambda: lambda.to_vec(), pf }
    }

    /// Phi(n, m) P(m) for m <= n; -Phi(n, m)(I - P(m)) for n < m, inverting on the kernels.
    pub fn eval(&self, n: i64, m: i64) -> Result<RealMatrix> {
        let d = self.field.dim();
        if m <= n {
            return Ok(propagator(self.field, &self.lambda, n, m)? * self.pf.at(m)?);
        }
        let mut z = RealMatrix::identity(d, d) - self.pf.at(m)?;
        for j in (n..m).rev() {
            let a = self.field.at(&self.lambda, j)?;
            let ker = self.pf.kernel(j)?;
            let mut next = RealMatrix::zeros(d, d);
            for c in 0..d {
                let col = backward_on_kernel(&a, ker, &z.column(c).into_owned(), j)?;
                next.set_column(c, &col);
            }
            z = next;
        }
        Ok(-z)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvolveResult {
    pub output: FiniteWindowSequence,
    /// sup_n sum_k ||f(n, k)||
    pub c0: f64,
}

/// (f * phi)(n) = sum_k f(n, k) phi(k) on the window of phi.
pub fn kernel_convolve<F>(f: F, phi: &FiniteWindowSequence) -> Result<ConvolveResult>
where
    F: Fn(i64, i64) -> Result<RealMatrix>,
{
    let mut out = Vec::with_capacity(phi.len());
    let mut c0 = 0.0_f64;
    for n in phi.start..=phi.end() {
        let mut acc = RealVector::zeros(phi.dim());
        let mut row = 0.0;
        for k in phi.start..=phi.end() {
            let m = f(n, k)?;
            row += op_norm(&m);
            acc += m * phi.value(k);
        }
        if !acc.iter().all(|x| x.is_finite()) || !row.is_finite() {
            return Err(Error::Numeric(format!("convolution overflow at n = {n}")));
        }
        c0 = c0.max(row);
        out.push(acc);
    }
    let output = FiniteWindowSequence::new(phi.start, out)?;
    if output.sup_norm() > c0 * phi.sup_norm() * (1.0 + 1e-12) + 1e-300 {
        return Err(Error::Numeric("convolution bound violated".into()));
    }
    Ok(ConvolveResult { output, c0 })
}

/// Serializable copy of a truncated operator.
#[derive(Debug, Clone, Serialize)]
pub struct TruncatedRecord {
    pub first: i64,
    pub last: i64,
    #[serde(with = "serde_mat")]
    pub matrix: RealMatrix,
}

impl From<&TruncatedOperator> for TruncatedRecord {
    fn from(t: &TruncatedOperator) -> Self {
        TruncatedRecord { first: t.first, last: t.last, matrix: t.matrix.clone() }
    }
}

pub fn max_entry(m: &RealMatrix) -> f64 {
    max_abs(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::verify_ed;

    fn scalar(a: f64) -> DiscreteVectorField {
        DiscreteVectorField::autonomous(RealMatrix::from_element(1, 1, a)).unwrap()
    }

    fn fam(f: &DiscreteVectorField, side: Side, anchor: i64) -> (ProjectorFamily, EdWitness) {
        let pf = build_projector_family(f, &[0.0], side, anchor, ProjectorOptions { length: 60, ..Default::default() }).unwrap();
        let w = verify_ed(f, &[0.0], &pf, 20).unwrap();
        (pf, w)
    }

    #[test]
    fn impulse_on_contracting_scalar() {
        let f = scalar(0.5);
        let (pf, w) = fam(&f, Side::Plus, 0);
        let psi = FiniteWindowSequence::impulse(0, 60, 1, 0, 0);
        let s = green_solve(&f, &[0.0], Side::Plus, 0, &psi, &pf, &w, SOLVE_TOL).unwrap();
        assert_eq!(s.phi.value(0)[0], 0.0);
        for n in 1..20 {
            assert!((s.phi.value(n)[0] - 0.5f64.powi(n as i32 - 1)).abs() < 1e-14);
        }
    }

    #[test]
    fn impulse_on_expanding_scalar() {
        let f = scalar(2.0);
        let (pf, w) = fam(&f, Side::Plus, 0);
        let psi = FiniteWindowSequence::impulse(0, 60, 1, 0, 0);
        let s = green_solve(&f, &[0.0], Side::Plus, 0, &psi, &pf, &w, SOLVE_TOL).unwrap();
        assert!((s.phi.value(0)[0] + 0.5).abs() < 1e-14);
        assert!(s.phi.values.iter().skip(1).all(|v| v[0].abs() < 1e-14));
    }

    #[test]
    fn window_too_short_is_reported() {
        let f = scalar(0.5);
        let (pf, w) = fam(&f, Side::Plus, 0);
        let psi = FiniteWindowSequence::new(0, vec![RealVector::from_element(1, 1.0); 60]).unwrap();
        let r = green_solve(&f, &[0.0], Side::Plus, 0, &psi, &pf, &w, SOLVE_TOL);
        assert!(matches!(r, Err(Error::WindowTooShort { .. })));
    }
}
