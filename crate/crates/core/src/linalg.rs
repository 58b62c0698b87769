//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type RealMatrix = DMatrix<f64>;
pub type RealVector = DVector<f64>;

/// Singular values below `ZERO_REL * scale` count as zero.
pub const ZERO_REL: f64 = 1e-9;
/// Required separation between the zero and nonzero singular-value groups.
pub const RANK_GAP: f64 = 1e3;

pub fn max_abs(m: &RealMatrix) -> f64 {
    m.iter().fold(0.0_f64, |a, &x| a.max(x.abs()))
}

pub fn all_finite(m: &RealMatrix) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Sorted (descending) singular values.
pub fn singular_values(m: &RealMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Spectral norm.
pub fn op_norm(m: &RealMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn min_singular(m: &RealMatrix) -> f64 {
    if m.ncols() == 0 {
        return f64::INFINITY;
    }
    let s = singular_values(m);
    if m.nrows() < m.ncols() {
        return 0.0;
    }
    s.last().copied().unwrap_or(0.0)
}

/// Numerical rank with a gap test: values below `ZERO_REL*scale` are zero, and the smallest
/// nonzero value must sit at least `RANK_GAP` above that threshold.
pub fn gapped_rank(sv: &[f64], scale: f64) -> Result<usize> {
    let scale = scale.max(f64::MIN_POSITIVE);
    let zero = ZERO_REL * scale;
    let mut rank = 0;
    for &s in sv {
        if s > zero {
            if s < RANK_GAP * zero {
                return Err(Error::Indeterminate(format!(
                    "singular value {s:.3e} lies inside the rank gap band (scale {scale:.3e})"
                )));
            }
            rank += 1;
        }
    }
    Ok(rank)
}

/// Orthonormal basis (thin Q) of the columns of a full-column-rank matrix.
pub fn orthonormalize(m: &RealMatrix) -> RealMatrix {
    if m.ncols() == 0 {
        return RealMatrix::zeros(m.nrows(), 0);
    }
    let q = m.clone().qr().q();
    q.columns(0, m.ncols()).into_owned()
}

/// QR with a nonnegative diagonal in R; returns (Q, diag(R)).
pub fn qr_positive(m: &RealMatrix) -> (RealMatrix, Vec<f64>) {
    let k = m.ncols();
    let qr = m.clone().qr();
    let mut q = qr.q().columns(0, k).into_owned();
    let r = qr.r();
    let mut diag = Vec::with_capacity(k);
    for j in 0..k {
        let rjj = r[(j, j)];
        if rjj < 0.0 {
            let mut c = q.column_mut(j);
            c.neg_mut();
        }
        diag.push(rjj.abs());
    }
    (q, diag)
}

/// Orthonormal basis of the orthogonal complement of span(frame).
pub fn complement(frame: &RealMatrix) -> RealMatrix {
    let d = frame.nrows();
    let k = frame.ncols();
    if k == 0 {
        return RealMatrix::identity(d, d);
    }
    if k >= d {
        return RealMatrix::zeros(d, 0);
    }
    let mut aug = RealMatrix::zeros(d, k + d);
    aug.columns_mut(0, k).copy_from(frame);
    aug.columns_mut(k, d).copy_from(&RealMatrix::identity(d, d));
    let q = aug.qr().q();
    q.columns(k, d - k).into_owned()
}

/// Orthonormal basis of the column space of a matrix of known rank (left singular vectors).
pub fn range_basis(m: &RealMatrix, rank: usize) -> RealMatrix {
    let d = m.nrows();
    if rank == 0 {
        return RealMatrix::zeros(d, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let mut out = RealMatrix::zeros(d, rank);
    for (c, &i) in idx.iter().take(rank).enumerate() {
        out.set_column(c, &u.column(i));
    }
    out
}

/// Right null-space basis: right singular vectors for the `nullity` smallest singular values.
pub fn null_basis(m: &RealMatrix, nullity: usize) -> RealMatrix {
    let n = m.ncols();
    if nullity == 0 {
        return RealMatrix::zeros(n, 0);
    }
    // Pad to at least square so that V is complete.
    let padded = if m.nrows() < n {
        let mut p = RealMatrix::zeros(n, n);
        p.rows_mut(0, m.nrows()).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[a].partial_cmp(&svd.singular_values[b]).unwrap());
    let mut out = RealMatrix::zeros(n, nullity);
    for (c, &i) in idx.iter().take(nullity).enumerate() {
        out.set_column(c, &vt.row(i).transpose());
    }
    out
}

/// Projector with the given image along the given kernel.
pub fn projector_from_frames(image: &RealMatrix, kernel: &RealMatrix) -> Result<RealMatrix> {
    let d = image.nrows();
    let k = image.ncols();
    if k + kernel.ncols() != d {
        return Err(Error::Numeric(format!(
            "image and kernel dimensions {} + {} do not add up to {d}",
            k,
            kernel.ncols()
        )));
    }
    if k == 0 {
        return Ok(RealMatrix::zeros(d, d));
    }
    if k == d {
        return Ok(RealMatrix::identity(d, d));
    }
    let mut b = RealMatrix::zeros(d, d);
    b.columns_mut(0, k).copy_from(image);
    b.columns_mut(k, d - k).copy_from(kernel);
    let smin = min_singular(&b);
    if smin < 1e-12 * op_norm(&b).max(1.0) {
        return Err(Error::Numeric(format!(
            "image and kernel are not complementary (smallest singular value {smin:.3e})"
        )));
    }
    let binv = b.try_inverse().ok_or_else(|| Error::Numeric("singular frame matrix".into()))?;
    Ok(image * binv.rows(0, k))
}

/// Deterministic generic orthonormal basis used to start orthogonal iterations.
pub fn generic_basis(d: usize) -> RealMatrix {
    let g = RealMatrix::from_fn(d, d, |i, j| {
        let x = 1.0 + 1.618_033_988 * (i as f64 + 1.0) + std::f64::consts::E * ((j as f64 + 1.0).powf(1.5));
        x.sin() + if i == j { 0.5 } else { 0.0 }
    });
    let (q, _) = qr_positive(&g);
    q
}

/// Solve `a * x = y` for `x` restricted to span(basis); returns `basis * c`.
pub fn restricted_solve(a: &RealMatrix, basis: &RealMatrix, y: &RealVector) -> Result<RealVector> {
    if basis.ncols() == 0 {
        return Ok(RealVector::zeros(a.ncols()));
    }
    let ab = a * basis;
    let svd = ab.clone().svd(true, true);
    let c = svd
        .solve(y, 1e-14 * op_norm(&ab).max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(basis * c)
}

/// Principal-angle cosines between two orthonormal frames of equal rank.
pub fn principal_cosines(a: &RealMatrix, b: &RealMatrix) -> Vec<f64> {
    singular_values(&(a.transpose() * b))
}

pub(crate) mod serde_mat {
    //! Matrices serialize as nested row arrays.
    use super::RealMatrix;
    use serde::Serializer;
    use serde::ser::SerializeSeq;

    pub fn rows(m: &RealMatrix) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    pub fn serialize<S: Serializer>(m: &RealMatrix, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(m.nrows()))?;
        for r in rows(m) {
            seq.serialize_element(&r)?;
        }
        seq.end()
    }

    pub mod vec {
        use super::RealMatrix;
        use serde::Serializer;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(ms: &[RealMatrix], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(ms.len()))?;
            for m in ms {
                seq.serialize_element(&super::rows(m))?;
            }
            seq.end()
        }
    }
}

pub(crate) mod serde_vecs {
    use super::RealVector;
    use serde::Serializer;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(vs: &[RealVector], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(vs.len()))?;
        for v in vs {
            let row: Vec<f64> = v.iter().copied().collect();
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}

pub fn mat_rows(m: &RealMatrix) -> Vec<Vec<f64>> {
    serde_mat::rows(m)
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<RealMatrix> {
    let r = rows.len();
    if r == 0 {
        return Err(Error::Input("empty matrix".into()));
    }
    let c = rows[0].len();
    if rows.iter().any(|x| x.len() != c) {
        return Err(Error::Input("ragged matrix rows".into()));
    }
    let m = RealMatrix::from_fn(r, c, |i, j| rows[i][j]);
    if !all_finite(&m) {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_orthogonal() {
        let f = orthonormalize(&RealMatrix::from_row_slice(3, 1, &[1.0, 2.0, 2.0]));
        let c = complement(&f);
        assert_eq!(c.ncols(), 2);
        assert!(max_abs(&(f.transpose() * &c)) < 1e-14);
        assert!(max_abs(&(c.transpose() * &c - RealMatrix::identity(2, 2))) < 1e-14);
    }

    #[test]
    fn oblique_projector() {
        let im = RealMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let ker = orthonormalize(&RealMatrix::from_row_slice(2, 1, &[1.0, 1.0]));
        let p = projector_from_frames(&im, &ker).unwrap();
        assert!(max_abs(&(&p * &p - &p)) < 1e-14);
        assert!((p[(0, 1)] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank_gap_band_is_indeterminate() {
        assert_eq!(gapped_rank(&[1.0, 1e-3, 1e-14], 1.0).unwrap(), 2);
        assert!(gapped_rank(&[1.0, 1e-8], 1.0).is_err());
    }
}
