//! Stable and unstable vector bundles over a parameter loop, the first Stiefel-Whitney class,
//! and the index bundle class (virtual rank, difference of first Stiefel-Whitney numbers).

use rayon::prelude::*;
use serde::Serialize;

use crate::dichotomy::{build_projector_family, verify_ed, EdWitness, ProjectorOptions, Side};
use crate::error::{Error, Result};
use crate::field::{DiscreteVectorField, ParameterLoop, SampledBundle};
use crate::linalg::{min_singular, qr_positive, range_basis, serde_mat, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Image,
    Kernel,
}

/// Class in KO(S^1) = Z + Z/2: virtual rank and the difference of first Stiefel-Whitney numbers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KoClassDesk {
    pub virtual_rank: i64,
    pub delta_w1: u8,
    pub rank_plus: usize,
    pub rank_minus: usize,
    pub w1_plus: u8,
    pub w1_minus: u8,
    pub provenance: Vec<String>,
}

/// Image or kernel frames of a projector at every loop sample.
pub fn bundle_from_projectors(base: &ParameterLoop, projectors: &[RealMatrix], part: Part) -> Result<SampledBundle> {
    if projectors.len() != base.len() {
        return Err(Error::Input(format!("{} projectors for {} samples", projectors.len(), base.len())));
    }
    let d = projectors[0].nrows();
    let rank_of = |p: &RealMatrix| -> Result<usize> {
        let t = p.trace();
        let r = t.round();
        if (t - r).abs() > 0.01 || r < -0.5 {
            return Err(Error::Numeric(format!("projector trace {t} is not an integer")));
        }
        Ok(r as usize)
    };
    let r0 = rank_of(&projectors[0])?;
    let mut frames = Vec::with_capacity(base.len());
    for (i, p) in projectors.iter().enumerate() {
        let r = rank_of(p)?;
        if r != r0 {
            return Err(Error::NotABundle(format!("projector rank changes from {r0} to {r} at sample {i}")));
        }
        frames.push(match part {
            Part::Image => range_basis(p, r),
            Part::Kernel => range_basis(&(RealMatrix::identity(d, d) - p), d - r),
        });
    }
    SampledBundle::new(base.clone(), frames)
}

/// Transport a frame once around the loop (project onto the next fibre, re-orthonormalize with
/// a positive triangular factor) and read w1 off the sign of the monodromy determinant.
pub fn first_stiefel_whitney(bundle: &SampledBundle) -> Result<u8> {
    let k = bundle.rank();
    if k == 0 || k == bundle.ambient() {
        return Ok(0);
    }
    let n = bundle.base().len();
    let mut g = bundle.frame(0).clone();
    for i in 0..n {
        let next = bundle.frame(i + 1);
        let c = next.transpose() * &g;
        let s = min_singular(&c);
        if s < 1e-8 {
            return Err(Error::NotABundle(format!("frame transport degenerates between samples {i} and {}", (i + 1) % n)));
        }
        let (q, _) = qr_positive(&(next * c));
        g = q;
    }
    let monodromy = bundle.frame(0).transpose() * g;
    Ok(if monodromy.determinant() < 0.0 { 1 } else { 0 })
}

/// Per-sample output of the half-line analysis.
#[derive(Debug, Clone, Serialize)]
pub struct SampleDichotomy {
    pub lambda: Vec<f64>,
    #[serde(with = "serde_mat")]
    pub plus_projector: RealMatrix,
    #[serde(with = "serde_mat")]
    pub minus_projector: RealMatrix,
    pub plus: EdWitness,
    pub minus: EdWitness,
}

#[derive(Debug, Clone)]
pub struct BundlePair {
    pub anchor_plus: i64,
    pub anchor_minus: i64,
    /// im P+(anchor_plus)
    pub stable: SampledBundle,
    /// ker P-(anchor_minus)
    pub unstable: SampledBundle,
    /// im P-(anchor_minus), the orthogonal complement of `unstable`
    pub minus_image: SampledBundle,
    pub samples: Vec<SampleDichotomy>,
}

/// Half-line dichotomies at every loop sample (in parallel, collected in loop order).
pub fn stable_unstable_bundles(
    field: &DiscreteVectorField,
    base: &ParameterLoop,
    anchor_plus: i64,
    anchor_minus: i64,
    opts: ProjectorOptions,
    verify_horizon: usize,
) -> Result<BundlePair> {
    if anchor_minus > anchor_plus {
        return Err(Error::Input("minus anchor must not exceed the plus anchor".into()));
    }
    let results: Vec<Result<SampleDichotomy>> = base
        .samples()
        .par_iter()
        .map(|l| {
            let plus = build_projector_family(field, l, Side::Plus, anchor_plus, opts)?;
            let minus = build_projector_family(field, l, Side::Minus, anchor_minus, opts)?;
            let wp = verify_ed(field, l, &plus, verify_horizon)?;
            let wm = verify_ed(field, l, &minus, verify_horizon)?;
            Ok(SampleDichotomy {
                lambda: l.clone(),
                plus_projector: plus.at(anchor_plus)?.clone(),
                minus_projector: minus.at(anchor_minus)?.clone(),
                plus: wp,
                minus: wm,
            })
        })
        .collect();
    let samples = results.into_iter().collect::<Result<Vec<_>>>()?;
    let pp: Vec<RealMatrix> = samples.iter().map(|s| s.plus_projector.clone()).collect();
    let mp: Vec<RealMatrix> = samples.iter().map(|s| s.minus_projector.clone()).collect();
    Ok(BundlePair {
        anchor_plus,
        anchor_minus,
        stable: bundle_from_projectors(base, &pp, Part::Image)?,
        unstable: bundle_from_projectors(base, &mp, Part::Kernel)?,
        minus_image: bundle_from_projectors(base, &mp, Part::Image)?,
        samples,
    })
}

/// [im P+(anchor_plus)] - [im P-(anchor_minus)] at desk scale.
pub fn index_bundle_class(pair: &BundlePair) -> Result<KoClassDesk> {
    let rp = pair.stable.rank();
    let rm = pair.minus_image.rank();
    let w1p = first_stiefel_whitney(&pair.stable)?;
    let w1m = first_stiefel_whitney(&pair.minus_image)?;
    Ok(KoClassDesk {
        virtual_rank: rp as i64 - rm as i64,
        delta_w1: (w1p + w1m) % 2,
        rank_plus: rp,
        rank_minus: rm,
        w1_plus: w1p,
        w1_minus: w1m,
        provenance: vec![
            format!("stable bundle at n = {} over {} samples", pair.anchor_plus, pair.stable.base().len()),
            format!("minus-side image bundle at n = {}", pair.anchor_minus),
            "w1 by frame transport with orientation-preserving re-orthonormalization".into(),
        ],
    })
}

/// Index bundle class of a field over a loop.
pub fn class_of_field(
    field: &DiscreteVectorField,
    base: &ParameterLoop,
    anchor_plus: i64,
    anchor_minus: i64,
    opts: ProjectorOptions,
    verify_horizon: usize,
) -> Result<(KoClassDesk, BundlePair)> {
    let pair = stable_unstable_bundles(field, base, anchor_plus, anchor_minus, opts, verify_horizon)?;
    Ok((index_bundle_class(&pair)?, pair))
}
