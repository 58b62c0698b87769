//! Hyperbolicity tests and spectral projectors of single matrices.
//!
//! Two independent routes compute the projector onto the part of the spectrum inside the unit
//! circle: a trapezoid-rule contour integral of the resolvent and an eigenvector decomposition.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{max_abs, serde_mat, RealMatrix};

pub const DEFAULT_MARGIN: f64 = 1e-8;
pub const TAU_PROJ: f64 = 1e-8;
pub const TAU_IMAG: f64 = 1e-9;
pub const DEFAULT_NODES: usize = 64;
pub const MAX_NODES: usize = 1024;
pub const CONTOUR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyperbolicity {
    Hyperbolic,
    NotHyperbolic,
    Indeterminate,
}

#[derive(Debug, Clone, Serialize)]
pub struct HyperbolicityReport {
    pub verdict: Hyperbolicity,
    /// min over eigenvalues of | |z| - 1 |
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralSplit {
    #[serde(with = "serde_mat")]
    pub stable: RealMatrix,
    #[serde(with = "serde_mat")]
    pub unstable: RealMatrix,
    pub stable_rank: usize,
    pub gap: f64,
    pub imag_residue: f64,
    pub nodes: usize,
}

fn check_square(m: &RealMatrix) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::Input(format!("expected a nonempty square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if !crate::linalg::all_finite(m) {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    Ok(())
}

pub fn eigenvalues(m: &RealMatrix) -> Result<Vec<Complex64>> {
    check_square(m)?;
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("Schur decomposition did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Eigenvalue moduli numerically on the unit circle are "not hyperbolic"; those merely within
/// `margin` of it are "indeterminate".
pub fn is_hyperbolic(m: &RealMatrix, margin: f64) -> Result<HyperbolicityReport> {
    let ev = eigenvalues(m)?;
    let gap = ev.iter().map(|z| (z.norm() - 1.0).abs()).fold(f64::INFINITY, f64::min);
    let scale = m.norm().max(1.0);
    let on_circle = 64.0 * f64::EPSILON * scale;
    let verdict = if gap <= on_circle {
        Hyperbolicity::NotHyperbolic
    } else if gap < margin {
        Hyperbolicity::Indeterminate
    } else {
        Hyperbolicity::Hyperbolic
    };
    Ok(HyperbolicityReport { verdict, gap })
}

fn require_hyperbolic(m: &RealMatrix) -> Result<f64> {
    let rep = is_hyperbolic(m, DEFAULT_MARGIN)?;
    match rep.verdict {
        Hyperbolicity::Hyperbolic => Ok(rep.gap),
        Hyperbolicity::NotHyperbolic => {
            Err(Error::Domain(format!("matrix has an eigenvalue on the unit circle (gap {:.3e})", rep.gap)))
        }
        Hyperbolicity::Indeterminate => {
            Err(Error::Indeterminate(format!("eigenvalue within margin of the unit circle (gap {:.3e})", rep.gap)))
        }
    }
}

fn to_complex(m: &RealMatrix) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Sum over the trapezoid nodes `z_j = exp(2 pi i (j*stride + offset)/total)` of `z_j (z_j I - m)^{-1}`.
fn node_sum(mc: &DMatrix<Complex64>, total: usize, indices: impl Iterator<Item = usize>) -> Result<DMatrix<Complex64>> {
    let d = mc.nrows();
    let eye = DMatrix::<Complex64>::identity(d, d);
    let mut acc = DMatrix::<Complex64>::zeros(d, d);
    for j in indices {
        let theta = 2.0 * std::f64::consts::PI * (j as f64) / (total as f64);
        let z = Complex64::from_polar(1.0, theta);
        let a = &eye * z - mc;
        let inv = a
            .lu()
            .solve(&eye)
            .ok_or_else(|| Error::Numeric(format!("resolvent singular at contour node theta = {theta:.6}")))?;
        acc += inv * z;
    }
    Ok(acc)
}

fn finish_projector(m: &RealMatrix, pc: DMatrix<Complex64>, gap: f64, nodes: usize) -> Result<SpectralSplit> {
    let d = m.nrows();
    let p = pc.map(|z| z.re);
    let imag = pc.iter().fold(0.0_f64, |a, z| a.max(z.im.abs()));
    let pscale = max_abs(&p).max(1.0);
    if imag > TAU_IMAG * pscale {
        return Err(Error::Numeric(format!("projector imaginary residue {imag:.3e} exceeds tolerance")));
    }
    let idem = max_abs(&(&p * &p - &p));
    if idem > TAU_PROJ * pscale * pscale {
        return Err(Error::Numeric(format!("projector not idempotent: residual {idem:.3e}")));
    }
    let comm = max_abs(&(m * &p - &p * m));
    if comm > TAU_PROJ * pscale * max_abs(m).max(1.0) {
        return Err(Error::Numeric(format!("projector does not commute with the matrix: residual {comm:.3e}")));
    }
    let tr = p.trace();
    let rank = tr.round();
    if (tr - rank).abs() >= 0.01 || rank < -0.5 || rank > d as f64 + 0.5 {
        return Err(Error::Numeric(format!("projector trace {tr} is not close to an integer")));
    }
    let unstable = RealMatrix::identity(d, d) - &p;
    Ok(SpectralSplit { stable: p, unstable, stable_rank: rank as usize, gap, imag_residue: imag, nodes })
}

/// Riesz projector for the spectrum inside the unit circle by trapezoid quadrature on the
/// circle, doubling the node count until successive results agree.
pub fn spectral_projector_contour(m: &RealMatrix, nodes: usize) -> Result<SpectralSplit> {
    check_square(m)?;
    let gap = require_hyperbolic(m)?;
    contour_with_gap(m, nodes, gap)
}

/// The contour projector for a matrix whose distance `gap` from the unit circle was
/// established by other means (e.g. from the structure of a periodic operator).
pub fn contour_with_gap(m: &RealMatrix, nodes: usize, gap: f64) -> Result<SpectralSplit> {
    check_square(m)?;
    if !(gap >= DEFAULT_MARGIN) {
        return Err(Error::Indeterminate(format!("gap {gap:.3e} is below the hyperbolicity margin")));
    }
    let mc = to_complex(m);
    let mut n = nodes.max(8);
    let mut sum = node_sum(&mc, n, 0..n)?;
    let mut prev = &sum / Complex64::new(n as f64, 0.0);
    loop {
        if 2 * n > MAX_NODES.max(nodes) {
            return Err(Error::Numeric(format!("contour quadrature did not converge within {} nodes", n)));
        }
        // The refined rule reuses the old nodes; only the odd ones are new.
        let odd = node_sum(&mc, 2 * n, (0..n).map(|j| 2 * j + 1))?;
        sum += odd;
        n *= 2;
        let cur = &sum / Complex64::new(n as f64, 0.0);
        let diff = (&cur - &prev).iter().fold(0.0_f64, |a, z| a.max(z.norm()));
        if diff < CONTOUR_TOL {
            return finish_projector(m, cur, gap, n);
        }
        prev = cur;
    }
}

/// Projector assembled from eigenvectors; fails on defective or ill-conditioned eigenbases.
pub fn spectral_projector_eigen(m: &RealMatrix) -> Result<SpectralSplit> {
    check_square(m)?;
    let gap = require_hyperbolic(m)?;
    let d = m.nrows();
    let mut ev = eigenvalues(m)?;
    ev.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    let scale = m.norm().max(1.0);
    let cluster_tol = 1e-7 * scale;
    // Group numerically repeated eigenvalues.
    let mut clusters: Vec<(Complex64, usize)> = Vec::new();
    for z in ev {
        if let Some(last) = clusters.last_mut() {
            if (last.0 - z).norm() <= cluster_tol {
                let k = last.1 as f64;
                last.0 = (last.0 * k + z) / (k + 1.0);
                last.1 += 1;
                continue;
            }
        }
        clusters.push((z, 1));
    }
    let mc = to_complex(m);
    let eye = DMatrix::<Complex64>::identity(d, d);
    let mut v = DMatrix::<Complex64>::zeros(d, d);
    let mut stable_mask = vec![false; d];
    let mut col = 0;
    for (z, mult) in clusters {
        let shifted = &mc - &eye * z;
        let svd = shifted.svd(false, true);
        let vt = svd.v_t.ok_or_else(|| Error::Numeric("SVD failed".into()))?;
        let mut idx: Vec<usize> = (0..d).collect();
        idx.sort_by(|&a, &b| svd.singular_values[a].partial_cmp(&svd.singular_values[b]).unwrap());
        let worst = svd.singular_values[idx[mult - 1]];
        if worst > 1e-6 * scale {
            return Err(Error::Numeric(format!(
                "eigenvalue {z} is defective: geometric multiplicity below {mult}"
            )));
        }
        for &i in idx.iter().take(mult) {
            v.set_column(col, &vt.row(i).adjoint());
            stable_mask[col] = z.norm() < 1.0;
            col += 1;
        }
    }
    let sv = v.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin <= 1e-12 * smax {
        return Err(Error::Numeric(format!("eigenvector basis ill-conditioned (condition {:.3e})", smax / smin)));
    }
    let vinv = v.clone().try_inverse().ok_or_else(|| Error::Numeric("eigenvector basis singular".into()))?;
    let mut mask = DMatrix::<Complex64>::zeros(d, d);
    for (i, &s) in stable_mask.iter().enumerate() {
        if s {
            mask[(i, i)] = Complex64::new(1.0, 0.0);
        }
    }
    let pc = &v * mask * vinv;
    finish_projector(m, pc, gap, 0)
}
