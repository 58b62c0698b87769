//! Seeded generators of hyperbolic matrices and asymptotically hyperbolic fields.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::field::{DiscreteVectorField, FieldKind};
use crate::linalg::{min_singular, RealMatrix};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> RealMatrix {
    // Box-Muller keeps the dependency list to rand alone.
    RealMatrix::from_fn(r, c, |_, _| {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let v: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    })
}

/// Invertible matrix with condition number at most about `max_cond`.
pub fn well_conditioned<R: Rng>(rng: &mut R, d: usize, max_cond: f64) -> RealMatrix {
    loop {
        let g = gaussian_matrix(rng, d, d);
        let s = crate::linalg::singular_values(&g);
        if s[d - 1] > 0.0 && s[0] / s[d - 1] <= max_cond {
            return g;
        }
    }
}

/// Matrix with a prescribed number of eigenvalues of modulus in [0.1, 0.9] (the rest in
/// [1.1, 10]), complex pairs included, conjugated by a well-conditioned basis.
/// Returns the matrix and the moduli of its eigenvalues.
pub fn hyperbolic_matrix<R: Rng>(rng: &mut R, d: usize, stable: usize) -> (RealMatrix, Vec<f64>) {
    let mut block = RealMatrix::zeros(d, d);
    let mut moduli = Vec::with_capacity(d);
    let mut i = 0;
    while i < d {
        let is_stable = i < stable;
        let rho = if is_stable { rng.gen_range(0.1..0.9) } else { rng.gen_range(1.1..10.0) };
        let room = if is_stable { stable - i } else { d - i };
        if room >= 2 && rng.gen_bool(0.4) {
            let th: f64 = rng.gen_range(0.2..3.0);
            block[(i, i)] = rho * th.cos();
            block[(i, i + 1)] = -rho * th.sin();
            block[(i + 1, i)] = rho * th.sin();
            block[(i + 1, i + 1)] = rho * th.cos();
            moduli.extend([rho, rho]);
            i += 2;
        } else {
            block[(i, i)] = if rng.gen_bool(0.5) { rho } else { -rho };
            moduli.push(rho);
            i += 1;
        }
    }
    let v = well_conditioned(rng, d, 20.0);
    let vi = v.clone().try_inverse().expect("well-conditioned basis is invertible");
    (&v * block * vi, moduli)
}

/// A random field: A_minus for n < first, random invertible matrices on [first, last],
/// A_plus for n > last. Also returns the stable ranks (s_minus, s_plus).
pub fn asymptotic_field<R: Rng>(
    rng: &mut R,
    d: usize,
    first: i64,
    last: i64,
) -> Result<(DiscreteVectorField, usize, usize)> {
    let s_minus = rng.gen_range(0..=d);
    let s_plus = rng.gen_range(0..=d);
    let (am, _) = hyperbolic_matrix(rng, d, s_minus);
    let (ap, _) = hyperbolic_matrix(rng, d, s_plus);
    let mut middle = Vec::new();
    for _ in first..=last {
        loop {
            let m = RealMatrix::identity(d, d) + gaussian_matrix(rng, d, d) * 0.3;
            if min_singular(&m) > 0.2 {
                middle.push(m);
                break;
            }
        }
    }
    let field = DiscreteVectorField::from_fn(d, (first, last), FieldKind::Tabulated, move |_, n| {
        Ok(if n < first {
            am.clone()
        } else if n > last {
            ap.clone()
        } else {
            middle[(n - first) as usize].clone()
        })
    })?;
    Ok((field, s_minus, s_plus))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixcore::eigenvalues;

    #[test]
    fn prescribed_moduli() {
        let mut r = rng(7);
        for d in 1..6 {
            for s in 0..=d {
                let (m, mut moduli) = hyperbolic_matrix(&mut r, d, s);
                let mut got: Vec<f64> = eigenvalues(&m).unwrap().iter().map(|z| z.norm()).collect();
                got.sort_by(f64::total_cmp);
                moduli.sort_by(f64::total_cmp);
                for (a, b) in got.iter().zip(&moduli) {
                    assert!((a - b).abs() < 1e-8 * b.max(1.0), "{got:?} vs {moduli:?}");
                }
                assert_eq!(got.iter().filter(|x| **x < 1.0).count(), s);
            }
        }
    }
}
