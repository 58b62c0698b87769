//! Exponential dichotomies of x(n+1) = A_n x(n) on half-lines and on the whole line.
//!
//! Stable subspaces at a time `n` are read off a backward orthogonal iteration with the
//! transposed matrices (the dominant directions of Phi(n+N, n)^T span the complement of the
//! forward-decaying subspace). Backward-decaying subspaces come from a forward orthogonal
//! iteration. Both iterations only ever propagate dominant directions, so they stay well
//! conditioned over long horizons and never form overflowing products.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::DiscreteVectorField;
use crate::linalg::{
    complement, generic_basis, max_abs, min_singular, op_norm, orthonormalize, projector_from_frames,
    qr_positive, range_basis, serde_mat, RealMatrix, RealVector,
};
use crate::matrixcore::{contour_with_gap, is_hyperbolic, spectral_projector_contour, Hyperbolicity, DEFAULT_MARGIN};

pub const DEFAULT_HORIZON: usize = 100;
pub const DEFAULT_GAP_RATIO: f64 = 1e3;
pub const SIGMA_REG: f64 = 1e-6;
pub const TAU_INV: f64 = 1e-7;
pub const ED_SLACK: f64 = 1.05;
const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Plus,
    Minus,
    Full,
}

/// Frames of an orthogonal iteration recorded on a range of times, plus per-step log growth.
struct Sweep {
    rec_lo: i64,
    frames: Vec<RealMatrix>,
    lo: i64,
    /// logs[i] belongs to the step that uses A_{lo + i}
    logs: Vec<Vec<f64>>,
}

impl Sweep {
    fn frame(&self, n: i64) -> &RealMatrix {
        &self.frames[(n - self.rec_lo) as usize]
    }

    /// Mean log growth per column over the steps using A_j for j in [from, to).
    fn rates(&self, from: i64, to: i64) -> Vec<f64> {
        let d = self.logs[0].len();
        let mut r = vec![0.0; d];
        for j in from..to {
            for (c, v) in self.logs[(j - self.lo) as usize].iter().enumerate() {
                r[c] += v;
            }
        }
        let len = (to - from) as f64;
        r.iter().map(|x| x / len).collect()
    }
}

fn log_diag(diag: &[f64]) -> Vec<f64> {
    diag.iter().map(|x| x.max(LOG_FLOOR).ln()).collect()
}

/// W_top = generic; W_n = Q(A_n^T W_{n+1}) for n = top-1 down to bottom.
fn adjoint_sweep(field: &DiscreteVectorField, lambda: &[f64], top: i64, bottom: i64, rec: (i64, i64)) -> Result<Sweep> {
    let d = field.dim();
    let mut w = generic_basis(d);
    let mut frames = vec![RealMatrix::zeros(d, d); (rec.1 - rec.0 + 1) as usize];
    let mut logs = vec![Vec::new(); (top - bottom) as usize];
    if top <= rec.1 && top >= rec.0 {
        frames[(top - rec.0) as usize] = w.clone();
    }
    for n in (bottom..top).rev() {
        let a = field.at(lambda, n)?;
        let (q, diag) = qr_positive(&(a.transpose() * &w));
        w = q;
        logs[(n - bottom) as usize] = log_diag(&diag);
        if n >= rec.0 && n <= rec.1 {
            frames[(n - rec.0) as usize] = w.clone();
        }
    }
    Ok(Sweep { rec_lo: rec.0, frames, lo: bottom, logs })
}

/// Q_bottom = generic; Q_{n+1} = Q(A_n Q_n) for n = bottom .. top-1.
fn forward_sweep(field: &DiscreteVectorField, lambda: &[f64], bottom: i64, top: i64, rec: (i64, i64)) -> Result<Sweep> {
    let d = field.dim();
    let mut q = generic_basis(d);
    let mut frames = vec![RealMatrix::zeros(d, d); (rec.1 - rec.0 + 1) as usize];
    let mut logs = vec![Vec::new(); (top - bottom) as usize];
    if bottom >= rec.0 && bottom <= rec.1 {
        frames[(bottom - rec.0) as usize] = q.clone();
    }
    for n in bottom..top {
        let a = field.at(lambda, n)?;
        let (qn, diag) = qr_positive(&(a * &q));
        q = qn;
        logs[(n - bottom) as usize] = log_diag(&diag);
        let t = n + 1;
        if t >= rec.0 && t <= rec.1 {
            frames[(t - rec.0) as usize] = q.clone();
        }
    }
    Ok(Sweep { rec_lo: rec.0, frames, lo: bottom, logs })
}

/// Columns with rate above `shift` must come first. Returns how many do.
fn split_count(rates: &[f64], shift: f64, threshold: f64) -> Result<usize> {
    if let Some(r) = rates.iter().find(|r| (*r - shift).abs() < threshold / 2.0) {
        return Err(Error::NoDichotomy(format!(
            "growth rate {:.5} is within {:.3e} of the splitting level {:.5}",
            r,
            threshold / 2.0,
            shift
        )));
    }
    let above = rates.iter().filter(|r| **r > shift).count();
    if rates.iter().take(above).any(|r| *r < shift) {
        return Err(Error::Indeterminate("growth rates are not ordered across the gap".into()));
    }
    Ok(above)
}

fn gap_threshold(gap_ratio: f64, horizon: usize) -> f64 {
    gap_ratio.ln() / horizon as f64
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SplitOptions {
    pub horizon: usize,
    pub gap_ratio: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions { horizon: DEFAULT_HORIZON, gap_ratio: DEFAULT_GAP_RATIO }
    }
}

/// Splitting at one time. On the plus side the stable frame is canonical and the unstable frame
/// is its orthogonal complement; on the minus side it is the other way round.
#[derive(Debug, Clone, Serialize)]
pub struct Splitting {
    pub side: Side,
    pub anchor: i64,
    pub horizon: usize,
    #[serde(with = "serde_mat")]
    pub stable: RealMatrix,
    #[serde(with = "serde_mat")]
    pub unstable: RealMatrix,
    pub stable_rank: usize,
    /// Finite-horizon growth rates, dominant first.
    pub rates: Vec<f64>,
}

fn check_horizon(h: usize) -> Result<()> {
    if h < 2 {
        return Err(Error::Input(format!("horizon {h} is too short")));
    }
    Ok(())
}

pub fn estimate_splitting(
    field: &DiscreteVectorField,
    lambda: &[f64],
    side: Side,
    anchor: i64,
    opts: SplitOptions,
) -> Result<Splitting> {
    check_horizon(opts.horizon)?;
    let d = field.dim();
    let n = opts.horizon as i64;
    let t = gap_threshold(opts.gap_ratio, opts.horizon);
    match side {
        Side::Plus => {
            let sw = adjoint_sweep(field, lambda, anchor + n, anchor, (anchor, anchor))?;
            let rates = sw.rates(anchor, anchor + n);
            let above = split_count(&rates, 0.0, t)?;
            let w = sw.frame(anchor);
            Ok(Splitting {
                side,
                anchor,
                horizon: opts.horizon,
                stable: w.columns(above, d - above).into_owned(),
                unstable: w.columns(0, above).into_owned(),
                stable_rank: d - above,
                rates,
            })
        }
        Side::Minus => {
            let sw = forward_sweep(field, lambda, anchor - n, anchor, (anchor, anchor))?;
            let rates = sw.rates(anchor - n, anchor);
            let above = split_count(&rates, 0.0, t)?;
            let q = sw.frame(anchor);
            Ok(Splitting {
                side,
                anchor,
                horizon: opts.horizon,
                stable: q.columns(above, d - above).into_owned(),
                unstable: q.columns(0, above).into_owned(),
                stable_rank: d - above,
                rates,
            })
        }
        Side::Full => Err(Error::Domain("splitting is estimated on a half-line".into())),
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProjectorOptions {
    pub horizon: usize,
    /// Number of steps covered by the family beyond the anchor.
    pub length: usize,
    pub gap_ratio: f64,
    pub sigma_reg: f64,
    pub tau_inv: f64,
}

impl Default for ProjectorOptions {
    fn default() -> Self {
        ProjectorOptions {
            horizon: DEFAULT_HORIZON,
            length: 20,
            gap_ratio: DEFAULT_GAP_RATIO,
            sigma_reg: SIGMA_REG,
            tau_inv: TAU_INV,
        }
    }
}

/// Invariant projectors P(n) on a contiguous range of times.
#[derive(Debug, Clone, Serialize)]
pub struct ProjectorFamily {
    pub side: Side,
    pub anchor: i64,
    pub first: i64,
    pub last: i64,
    pub rank: usize,
    #[serde(with = "serde_mat::vec")]
    pub projectors: Vec<RealMatrix>,
    #[serde(skip)]
    pub image_frames: Vec<RealMatrix>,
    #[serde(skip)]
    pub kernel_frames: Vec<RealMatrix>,
    pub rates: Vec<f64>,
    /// How the non-canonical half of the splitting was fixed at the anchor.
    pub complement_policy: &'static str,
    pub max_invariance_residual: f64,
    pub min_regularity: f64,
}

impl ProjectorFamily {
    pub fn contains(&self, n: i64) -> bool {
        n >= self.first && n <= self.last
    }

    fn idx(&self, n: i64) -> Result<usize> {
        if !self.contains(n) {
            return Err(Error::Domain(format!(
                "time {n} outside the projector window [{}, {}]",
                self.first, self.last
            )));
        }
        Ok((n - self.first) as usize)
    }

    pub fn at(&self, n: i64) -> Result<&RealMatrix> {
        Ok(&self.projectors[self.idx(n)?])
    }

    pub fn image(&self, n: i64) -> Result<&RealMatrix> {
        Ok(&self.image_frames[self.idx(n)?])
    }

    pub fn kernel(&self, n: i64) -> Result<&RealMatrix> {
        Ok(&self.kernel_frames[self.idx(n)?])
    }

    pub fn dim(&self) -> usize {
        self.projectors[0].nrows()
    }

    /// Family given by projector matrices; frames derived from them.
    pub fn from_matrices(side: Side, anchor: i64, first: i64, projectors: Vec<RealMatrix>) -> Result<Self> {
        if projectors.is_empty() {
            return Err(Error::Input("empty projector family".into()));
        }
        let d = projectors[0].nrows();
        let rank_f = projectors[0].trace();
        let rank = rank_f.round() as usize;
        if (rank_f - rank as f64).abs() > 0.01 {
            return Err(Error::Numeric(format!("projector trace {rank_f} is not an integer")));
        }
        let mut image_frames = Vec::new();
        let mut kernel_frames = Vec::new();
        for p in &projectors {
            if (p.trace() - rank as f64).abs() > 0.01 {
                return Err(Error::Numeric("projector rank is not constant".into()));
            }
            image_frames.push(range_basis(p, rank));
            kernel_frames.push(range_basis(&(RealMatrix::identity(d, d) - p), d - rank));
        }
        let last = first + projectors.len() as i64 - 1;
        Ok(ProjectorFamily {
            side,
            anchor,
            first,
            last,
            rank,
            projectors,
            image_frames,
            kernel_frames,
            rates: Vec::new(),
            complement_policy: "derived",
            max_invariance_residual: f64::NAN,
            min_regularity: f64::NAN,
        })
    }
}

fn finish_family(
    field: &DiscreteVectorField,
    lambda: &[f64],
    side: Side,
    anchor: i64,
    first: i64,
    image_frames: Vec<RealMatrix>,
    kernel_frames: Vec<RealMatrix>,
    rates: Vec<f64>,
    policy: &'static str,
    opts: &ProjectorOptions,
) -> Result<ProjectorFamily> {
    let mut projectors = Vec::with_capacity(image_frames.len());
    for (im, ker) in image_frames.iter().zip(&kernel_frames) {
        projectors.push(projector_from_frames(im, ker)?);
    }
    let rank = image_frames[0].ncols();
    let mut max_inv = 0.0_f64;
    let mut min_reg = f64::INFINITY;
    for i in 0..projectors.len().saturating_sub(1) {
        let n = first + i as i64;
        let a = field.at(lambda, n)?;
        let res = max_abs(&(&a * &projectors[i] - &projectors[i + 1] * &a));
        let scale = 1.0 + max_abs(&a) * max_abs(&projectors[i]).max(max_abs(&projectors[i + 1]));
        let rel = res / scale;
        max_inv = max_inv.max(rel);
        if rel > opts.tau_inv {
            return Err(Error::InvarianceViolation { n, residual: rel });
        }
        let sig = min_singular(&(&a * &kernel_frames[i]));
        min_reg = min_reg.min(sig);
        if sig < opts.sigma_reg {
            return Err(Error::IrregularSplitting { n, sigma: sig });
        }
    }
    Ok(ProjectorFamily {
        side,
        anchor,
        first,
        last: first + projectors.len() as i64 - 1,
        rank,
        projectors,
        image_frames,
        kernel_frames,
        rates,
        complement_policy: policy,
        max_invariance_residual: max_inv,
        min_regularity: min_reg,
    })
}

/// Invariant, regular projector family. Plus side: [anchor, anchor+length]; minus side:
/// [anchor-length, anchor]; full line: [anchor, anchor+length] with both halves canonical.
pub fn build_projector_family(
    field: &DiscreteVectorField,
    lambda: &[f64],
    side: Side,
    anchor: i64,
    opts: ProjectorOptions,
) -> Result<ProjectorFamily> {
    check_horizon(opts.horizon)?;
    let d = field.dim();
    let h = opts.horizon as i64;
    let len = opts.length as i64;
    let t = gap_threshold(opts.gap_ratio, opts.horizon);
    match side {
        Side::Plus => {
            let sw = adjoint_sweep(field, lambda, anchor + len + h, anchor, (anchor, anchor + len))?;
            let rates = sw.rates(anchor, anchor + h);
            let above = split_count(&rates, 0.0, t)?;
            let s = d - above;
            let mut images = Vec::new();
            let mut kernels = Vec::new();
            // Kernel: orthogonal complement at the anchor, pushed forward by the field.
            let mut k = sw.frame(anchor).columns(0, above).into_owned();
            for n in anchor..=anchor + len {
                images.push(sw.frame(n).columns(above, s).into_owned());
                kernels.push(k.clone());
                if n < anchor + len && above > 0 {
                    let m = field.at(lambda, n)? * &k;
                    let sig = min_singular(&m);
                    if sig < opts.sigma_reg {
                        return Err(Error::IrregularSplitting { n, sigma: sig });
                    }
                    k = orthonormalize(&m);
                }
            }
            finish_family(field, lambda, side, anchor, anchor, images, kernels, rates, "orthogonal-at-anchor", &opts)
        }
        Side::Minus => {
            let sw = forward_sweep(field, lambda, anchor - len - h, anchor, (anchor - len, anchor))?;
            let rates = sw.rates(anchor - h, anchor);
            let above = split_count(&rates, 0.0, t)?;
            let first = anchor - len;
            let mut images = vec![RealMatrix::zeros(d, 0); (len + 1) as usize];
            let mut kernels = Vec::new();
            for n in first..=anchor {
                kernels.push(sw.frame(n).columns(0, above).into_owned());
            }
            // Image: orthogonal complement at the anchor, pulled back through the adjoint.
            let mut y = sw.frame(anchor).columns(0, above).into_owned();
            images[len as usize] = complement(&y);
            for n in (first..anchor).rev() {
                if above > 0 {
                    let m = field.at(lambda, n)?.transpose() * &y;
                    let sig = min_singular(&m);
                    if sig < opts.sigma_reg {
                        return Err(Error::IrregularSplitting { n, sigma: sig });
                    }
                    y = orthonormalize(&m);
                }
                images[(n - first) as usize] = complement(&y);
            }
            finish_family(field, lambda, side, anchor, first, images, kernels, rates, "orthogonal-at-anchor", &opts)
        }
        Side::Full => {
            let last = anchor + len;
            let st = adjoint_sweep(field, lambda, last + h, anchor, (anchor, last))?;
            let un = forward_sweep(field, lambda, anchor - h, last, (anchor, last))?;
            let rp = st.rates(anchor, anchor + h);
            let rm = un.rates(anchor - h, anchor);
            let above_p = split_count(&rp, 0.0, t)?;
            let above_m = split_count(&rm, 0.0, t)?;
            if above_p != above_m {
                return Err(Error::NoDichotomy(format!(
                    "stable ranks differ on the two half-lines ({} vs {})",
                    d - above_p,
                    d - above_m
                )));
            }
            let mut images = Vec::new();
            let mut kernels = Vec::new();
            for n in anchor..=last {
                images.push(st.frame(n).columns(above_p, d - above_p).into_owned());
                kernels.push(un.frame(n).columns(0, above_m).into_owned());
                let mut b = RealMatrix::zeros(d, d);
                b.columns_mut(0, d - above_p).copy_from(images.last().unwrap());
                b.columns_mut(d - above_p, above_m).copy_from(kernels.last().unwrap());
                if min_singular(&b) < 1e-8 {
                    return Err(Error::NoDichotomy(format!(
                        "stable and unstable subspaces intersect at n = {n}"
                    )));
                }
            }
            let mut rates = rp;
            rates.extend(rm);
            finish_family(field, lambda, side, anchor, anchor, images, kernels, rates, "canonical", &opts)
        }
    }
}

/// Dichotomy constants fitted to sampled orbits.
#[derive(Debug, Clone, Serialize)]
pub struct EdWitness {
    pub k: f64,
    pub alpha: f64,
    pub alpha_stable: f64,
    pub alpha_unstable: f64,
    pub checked_pairs: usize,
    pub inverse_pairs: usize,
    pub inverse_skipped: usize,
    pub first: i64,
    pub last: i64,
    pub side: Side,
    pub rank: usize,
}

fn ls_slope_intercept(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let den = n * sxx - sx * sx;
    if den.abs() < 1e-300 {
        return None;
    }
    let a = (n * sxy - sx * sy) / den;
    Some((a, (sy - a * sx) / n))
}

/// Probe vectors: the frame columns plus two normalized combinations.
fn probes(frame: &RealMatrix) -> Vec<RealVector> {
    let k = frame.ncols();
    let mut out: Vec<RealVector> = (0..k).map(|j| frame.column(j).into_owned()).collect();
    if k > 1 {
        let s: RealVector = (0..k).map(|j| frame.column(j).into_owned()).sum();
        out.push(s.normalize());
        let a: RealVector = (0..k)
            .map(|j| frame.column(j).into_owned() * if j % 2 == 0 { 1.0 } else { -1.0 })
            .sum();
        out.push(a.normalize());
    }
    out
}

/// Fit alpha by least squares on log growth of the image and kernel frames, take the envelope
/// constant K,
/// and check the preimage form of the stable estimate with a 5% slack.
pub fn verify_ed(
    field: &DiscreteVectorField,
    lambda: &[f64],
    pf: &ProjectorFamily,
    horizon: usize,
) -> Result<EdWitness> {
    if horizon == 0 || pf.last <= pf.first {
        return Err(Error::Input("verification needs a window of at least two times".into()));
    }
    let h = horizon as i64;
    let mut mats = Vec::new();
    for n in pf.first..pf.last {
        mats.push(field.at(lambda, n)?);
    }
    let a_at = |n: i64| &mats[(n - pf.first) as usize];
    let mut stable_pts: Vec<(f64, f64)> = Vec::new();
    let mut unstable_pts: Vec<(f64, f64)> = Vec::new();
    for n in pf.first..pf.last {
        let end = (n + h).min(pf.last);
        // Largest forward growth over the image, in image coordinates so that rounding
        // errors along the kernel are not amplified.
        if pf.rank > 0 {
            let mut y = RealMatrix::identity(pf.rank, pf.rank);
            for k in n + 1..=end {
                y = pf.image(k)?.transpose() * a_at(k - 1) * pf.image(k - 1)? * y;
                let g = op_norm(&y);
                if !g.is_finite() {
                    return Err(Error::Numeric(format!("orbit overflow at k = {k}")));
                }
                stable_pts.push(((k - n) as f64, g.max(LOG_FLOOR).ln()));
            }
        }
    }
    // Smallest forward growth over the kernel, as the inverse of the largest backward growth
    // within the kernels: min |Phi(k, n) x| / |x| = 1 / |Phi(n, k)| on ker P(k).
    if pf.rank < pf.dim() {
        let mut pinv = Vec::new();
        for n in pf.first..pf.last {
            let ak = a_at(n) * pf.kernel(n)?;
            let p = ak
                .clone()
                .pseudo_inverse(1e-14 * op_norm(&ak).max(f64::MIN_POSITIVE))
                .map_err(|e| Error::Numeric(e.to_string()))?;
            pinv.push(pf.kernel(n)? * p);
        }
        for k in pf.first + 1..=pf.last {
            let mut z = pf.kernel(k)?.clone();
            for n in (pf.first.max(k - h)..k).rev() {
                z = &pinv[(n - pf.first) as usize] * z;
                let g = op_norm(&z);
                if !g.is_finite() || g == 0.0 {
                    return Err(Error::Numeric(format!("backward orbit degenerate at n = {n}")));
                }
                unstable_pts.push(((k - n) as f64, -g.max(LOG_FLOOR).ln()));
            }
        }
    }
    let fit = |pts: &[(f64, f64)]| -> Result<f64> {
        if pts.is_empty() {
            return Ok(f64::NAN);
        }
        let (a, _) = ls_slope_intercept(pts).ok_or_else(|| Error::Numeric("degenerate fit".into()))?;
        Ok(a)
    };
    let a_s = fit(&stable_pts)?;
    let a_u = fit(&unstable_pts)?;
    let alpha_s = if a_s.is_nan() { 0.0 } else { a_s.exp() };
    let alpha_u = if a_u.is_nan() { 0.0 } else { (-a_u).exp() };
    let alpha = alpha_s.max(alpha_u);
    if !(alpha < 1.0) || alpha == 0.0 {
        return Err(Error::NotAnEd(format!(
            "fitted rates give alpha = {alpha:.6} (stable {alpha_s:.6}, unstable {alpha_u:.6})"
        )));
    }
    let la = alpha.ln();
    let mut log_k = 0.0_f64;
    for &(j, lg) in &stable_pts {
        log_k = log_k.max(lg - j * la);
    }
    for &(j, lg) in &unstable_pts {
        log_k = log_k.max(-j * la - lg);
    }
    let k_const = log_k.exp();
    let checked = stable_pts.len() + unstable_pts.len();

    // Preimage form: the least-norm solution z of Phi(k, n) z = y, y in im P(k).
    let mut inv_pairs = 0;
    let mut skipped = 0;
    for n in pf.first..pf.last {
        let mut phi = RealMatrix::identity(pf.dim(), pf.dim());
        for k in n + 1..=(n + h).min(pf.last) {
            phi = a_at(k - 1) * phi;
            if pf.rank == 0 {
                continue;
            }
            let svd = phi.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if smin < 1e-12 * smax {
                skipped += 1;
                continue;
            }
            for y in probes(pf.image(k)?) {
                let z = svd.solve(&y, 0.0).map_err(|e| Error::Numeric(e.to_string()))?;
                let bound = (-((k - n) as f64) * la).exp() / (ED_SLACK * k_const);
                if z.norm() < bound * y.norm() {
                    return Err(Error::NotAnEd(format!(
                        "preimage estimate fails for (k, n) = ({k}, {n}): {:.3e} < {:.3e}",
                        z.norm(),
                        bound
                    )));
                }
                inv_pairs += 1;
            }
        }
    }
    Ok(EdWitness {
        k: k_const,
        alpha,
        alpha_stable: alpha_s,
        alpha_unstable: alpha_u,
        checked_pairs: checked,
        inverse_pairs: inv_pairs,
        inverse_skipped: skipped,
        first: pf.first,
        last: pf.last,
        side: pf.side,
        rank: pf.rank,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaVerdict {
    Ed,
    NoEd,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpectrumOptions {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub grid_size: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub gap_ratio: f64,
    pub anchor: i64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            gamma_min: 0.05,
            gamma_max: 20.0,
            grid_size: 64,
            horizon: 4096,
            burn_in: 1024,
            gap_ratio: DEFAULT_GAP_RATIO,
            anchor: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumResult {
    pub intervals: Vec<[f64; 2]>,
    pub grid: Vec<f64>,
    pub verdicts: Vec<GammaVerdict>,
    pub plus_rates: Vec<f64>,
    pub minus_rates: Vec<f64>,
    pub threshold: f64,
}

impl SpectrumResult {
    pub fn contains(&self, gamma: f64) -> bool {
        self.intervals.iter().any(|iv| gamma >= iv[0] && gamma <= iv[1])
    }
}

struct SpectrumData {
    d: usize,
    plus_rates: Vec<f64>,
    minus_rates: Vec<f64>,
    stable_frame: RealMatrix,
    unstable_frame: RealMatrix,
    threshold: f64,
}

impl SpectrumData {
    /// Scaling the field by 1/gamma shifts every rate by -ln(gamma) and leaves frames unchanged.
    fn verdict(&self, gamma: f64) -> GammaVerdict {
        let c = gamma.ln();
        let t = self.threshold;
        let dist = self
            .plus_rates
            .iter()
            .chain(&self.minus_rates)
            .map(|r| (r - c).abs())
            .fold(f64::INFINITY, f64::min);
        if dist < t / 2.0 {
            return GammaVerdict::NoEd;
        }
        let above_p = match split_count(&self.plus_rates, c, t) {
            Ok(a) => a,
            Err(_) => return GammaVerdict::Indeterminate,
        };
        let above_m = match split_count(&self.minus_rates, c, t) {
            Ok(a) => a,
            Err(_) => return GammaVerdict::Indeterminate,
        };
        if above_p != above_m {
            return GammaVerdict::NoEd;
        }
        let s = self.d - above_p;
        let mut b = RealMatrix::zeros(self.d, self.d);
        b.columns_mut(0, s).copy_from(&self.stable_frame.columns(above_p, s));
        b.columns_mut(s, above_m).copy_from(&self.unstable_frame.columns(0, above_m));
        if min_singular(&b) < 1e-8 {
            return GammaVerdict::NoEd;
        }
        if dist < t {
            GammaVerdict::Indeterminate
        } else {
            GammaVerdict::Ed
        }
    }
}

/// Dichotomy spectrum: the gamma > 0 for which gamma^{-1} A has no dichotomy on the line,
/// scanned on a log grid (augmented by the measured growth rates) and merged into intervals.
pub fn dichotomy_spectrum(field: &DiscreteVectorField, lambda: &[f64], opts: SpectrumOptions) -> Result<SpectrumResult> {
    if opts.grid_size < 16 {
        return Err(Error::Input(format!("grid size {} is below 16", opts.grid_size)));
    }
    if !(opts.gamma_min > 0.0 && opts.gamma_max > opts.gamma_min) {
        return Err(Error::Input("need 0 < gamma_min < gamma_max".into()));
    }
    check_horizon(opts.horizon)?;
    let d = field.dim();
    let k = opts.anchor;
    let n = opts.horizon as i64;
    let b = opts.burn_in as i64;
    let st = adjoint_sweep(field, lambda, k + n + b, k, (k, k))?;
    let un = forward_sweep(field, lambda, k - n - b, k, (k, k))?;
    let data = SpectrumData {
        d,
        plus_rates: st.rates(k, k + n),
        minus_rates: un.rates(k - n, k),
        stable_frame: st.frame(k).clone(),
        unstable_frame: un.frame(k).clone(),
        threshold: gap_threshold(opts.gap_ratio, opts.horizon),
    };
    let (lmin, lmax) = (opts.gamma_min.ln(), opts.gamma_max.ln());
    let g = opts.grid_size;
    let grid: Vec<f64> = (0..g).map(|i| (lmin + (lmax - lmin) * i as f64 / (g - 1) as f64).exp()).collect();
    let verdicts: Vec<GammaVerdict> = grid.iter().map(|&x| data.verdict(x)).collect();

    let mut crit: Vec<f64> = data
        .plus_rates
        .iter()
        .chain(&data.minus_rates)
        .copied()
        .filter(|r| *r > lmin && *r < lmax)
        .collect();
    crit.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut logs: Vec<f64> = grid.iter().map(|x| x.ln()).collect();
    logs.extend(crit.iter().copied());
    for w in crit.windows(2) {
        logs.push(0.5 * (w[0] + w[1]));
    }
    logs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    logs.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let pts: Vec<f64> = logs.iter().map(|x| x.exp()).collect();
    let failing: Vec<bool> = pts.iter().map(|&x| data.verdict(x) == GammaVerdict::NoEd).collect();

    // Boundary between a passing point `a` and failing point `b`.
    let refine = |mut a: f64, mut b: f64| -> f64 {
        for _ in 0..200 {
            if (b / a - 1.0).abs() < 1e-9 {
                break;
            }
            let m = (a * b).sqrt();
            if data.verdict(m) == GammaVerdict::NoEd {
                b = m;
            } else {
                a = m;
            }
        }
        b
    };
    let mut intervals = Vec::new();
    let mut i = 0;
    while i < pts.len() {
        if !failing[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < pts.len() && failing[i + 1] {
            i += 1;
        }
        let lo = if start == 0 { pts[0] } else { refine(pts[start - 1], pts[start]) };
        let hi = if i + 1 == pts.len() { pts[i] } else { refine(pts[i + 1], pts[i]) };
        intervals.push([lo, hi]);
        i += 1;
    }
    Ok(SpectrumResult {
        intervals,
        grid,
        verdicts,
        plus_rates: data.plus_rates,
        minus_rates: data.minus_rates,
        threshold: data.threshold,
    })
}

/// Eigenvalue moduli of the block-cyclic shift built from `mats`: exp of the mean log growth
/// per step under periodic orthogonal iteration.
fn periodic_moduli(mats: &[RealMatrix]) -> Vec<f64> {
    const PERIODS: usize = 40;
    let d = mats[0].nrows();
    let mut q = generic_basis(d);
    let mut logs = vec![0.0; d];
    for p in 0..PERIODS {
        for a in mats {
            let (qn, diag) = qr_positive(&(a * &q));
            q = qn;
            // The first periods only align the frame.
            if p >= PERIODS / 2 {
                for (l, r) in logs.iter_mut().zip(&diag) {
                    *l += r.abs().max(1e-300).ln();
                }
            }
        }
    }
    let steps = ((PERIODS - PERIODS / 2) * mats.len()) as f64;
    logs.iter().map(|l| (l / steps).exp()).collect()
}

/// Projector family from the spectral projector of the periodically closed, truncated weighted
/// shift (T phi)(n) = A_{n-1} phi(n-1) on times start .. start+truncation-1. A boundary layer of
/// width truncation/8 is discarded on both ends.
pub fn shift_operator_projector(
    field: &DiscreteVectorField,
    lambda: &[f64],
    truncation: usize,
    nodes: usize,
    start: i64,
) -> Result<ProjectorFamily> {
    if truncation < 16 {
        return Err(Error::Input(format!("truncation {truncation} is below 16")));
    }
    let d = field.dim();
    let nn = truncation;
    let mut t = RealMatrix::zeros(nn * d, nn * d);
    for i in 0..nn {
        let src = (i + nn - 1) % nn;
        let a = field.at(lambda, start + src as i64)?;
        t.view_mut((i * d, src * d), (d, d)).copy_from(&a);
    }
    // The eigenvalues of T are the truncation-th roots of those of the period map, so their
    // moduli follow from the periodic growth rates when the dense Schur iteration fails.
    let (verdict, gap) = match is_hyperbolic(&t, DEFAULT_MARGIN) {
        Ok(rep) => (rep.verdict, rep.gap),
        Err(Error::Numeric(_)) => {
            let mats = (0..nn).map(|i| field.at(lambda, start + i as i64)).collect::<Result<Vec<_>>>()?;
            let gap = periodic_moduli(&mats)
                .iter()
                .map(|m| (m - 1.0).abs())
                .fold(f64::INFINITY, f64::min);
            let v = if gap < DEFAULT_MARGIN { Hyperbolicity::Indeterminate } else { Hyperbolicity::Hyperbolic };
            (v, gap)
        }
        Err(e) => return Err(e),
    };
    if verdict != Hyperbolicity::Hyperbolic {
        return Err(Error::Indeterminate(format!(
            "truncated shift operator has spectrum within {gap:.3e} of the unit circle; \
             the field may have no dichotomy on the line or the truncation is too short"
        )));
    }
    let split = contour_with_gap(&t, nodes, gap)?;
    let layer = nn / 8;
    let mut projectors = Vec::new();
    for i in layer..nn - layer {
        projectors.push(split.stable.view((i * d, i * d), (d, d)).into_owned());
    }
    let first = start + layer as i64;
    ProjectorFamily::from_matrices(Side::Full, start + (nn / 2) as i64, first, projectors)
}

/// 1/c0 with c0 = sum_n ||G(n, m)|| the Green-kernel row sum of an autonomous hyperbolic matrix.
/// Any perturbation of sup norm below this keeps a dichotomy on the line.
pub fn robustness_margin(m: &RealMatrix) -> Result<f64> {
    let split = spectral_projector_contour(m, 64)?;
    let d = m.nrows();
    let mut c0 = 0.0;
    // Powers are taken in coordinates of the invariant subspaces so that rounding errors in
    // the projector are not amplified.
    for (proj, rank, forward) in [
        (&split.stable, split.stable_rank, true),
        (&split.unstable, d - split.stable_rank, false),
    ] {
        if rank == 0 {
            continue;
        }
        let b = range_basis(proj, rank);
        let c = b.transpose() * m * &b;
        let step = if forward {
            c
        } else {
            c.try_inverse().ok_or_else(|| Error::Numeric("singular unstable block".into()))?
        };
        let coords = b.transpose() * proj;
        let mut t = if forward { coords } else { &step * coords };
        for _ in 0..100_000 {
            let nrm = op_norm(&(&b * &t));
            c0 += nrm;
            if nrm < 1e-17 * c0.max(1.0) {
                break;
            }
            t = &step * t;
        }
    }
    Ok(1.0 / c0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(a: f64, b: f64) -> RealMatrix {
        RealMatrix::from_row_slice(2, 2, &[a, 0.0, 0.0, b])
    }

    #[test]
    fn splitting_of_diagonal_field() {
        let f = DiscreteVectorField::autonomous(diag(0.5, 2.0)).unwrap();
        let s = estimate_splitting(&f, &[0.0], Side::Plus, 0, SplitOptions::default()).unwrap();
        assert_eq!(s.stable_rank, 1);
        assert!(s.stable[(1, 0)].abs() < 1e-12);
        let m = estimate_splitting(&f, &[0.0], Side::Minus, 0, SplitOptions::default()).unwrap();
        assert_eq!(m.stable_rank, 1);
        assert!(m.unstable[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn neutral_field_has_no_dichotomy() {
        let f = DiscreteVectorField::autonomous(RealMatrix::identity(2, 2)).unwrap();
        let r = estimate_splitting(&f, &[0.0], Side::Plus, 0, SplitOptions::default());
        assert!(matches!(r, Err(Error::NoDichotomy(_))));
    }

    #[test]
    fn robustness_margin_of_symmetric_matrix() {
        // Row sum (1 + q)/(1 - q) for q Pi + (1/q)(I - Pi).
        let g = robustness_margin(&diag(0.5, 2.0)).unwrap();
        assert!((g - 1.0 / 3.0).abs() < 1e-12, "{g}");
    }
}
