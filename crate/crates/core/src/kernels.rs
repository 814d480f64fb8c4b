//! Pluggable similarity kernels and their induced Fréchet-mean rules.
//!
//! A kernel supplies three things: a similarity score, a dissimilarity, and
//! the generalized centroid minimizing summed divergence under its geometry
//! (normalized sum for cosine, per-channel normalized sums for dual-cosine,
//! arithmetic mean for squared Euclidean, coordinate-wise median for
//! Manhattan). Kernels are stateless; everything here is safe to call from
//! any number of workers.
//!
//! Squared-Euclidean and Manhattan expose similarities on the negated
//! distance scale (`sigma = -d`), so acceptance thresholds for those kernels
//! are interpreted on that scale rather than in [0, 1].

use std::fmt;

use crate::error::{FascError, Result};
use crate::spectra::{canonical_order, Dataset};
use crate::{real, Real};

/// Per-channel cosine scores for a polarity-split pair, combined with `min`
/// so the least concordant channel governs the result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualCosineScore<F> {
    pub pos: F,
    pub neg: F,
    pub combined: F,
}

/// Similarity oracle selected by name: `cosine | dual-cosine | sqeuclidean |
/// manhattan`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Cosine,
    DualCosine { split_index: usize },
    SqEuclidean,
    Manhattan,
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Cosine => write!(f, "cosine"),
            Kernel::DualCosine { .. } => write!(f, "dual-cosine"),
            Kernel::SqEuclidean => write!(f, "sqeuclidean"),
            Kernel::Manhattan => write!(f, "manhattan"),
        }
    }
}

impl Kernel {
    /// Resolve a kernel name; `split` must be present for `dual-cosine`.
    pub fn from_name(name: &str, split: Option<usize>) -> Result<Kernel> {
        match name {
            "cosine" => Ok(Kernel::Cosine),
            "dual-cosine" => match split {
                Some(split_index) => Ok(Kernel::DualCosine { split_index }),
                None => Err(FascError::config(
                    "kernel dual-cosine requires a polarity split",
                )),
            },
            "sqeuclidean" => Ok(Kernel::SqEuclidean),
            "manhattan" => Ok(Kernel::Manhattan),
            other => Err(FascError::config(format!("unknown kernel: {other:?}"))),
        }
    }

    /// Bounded kernels score within [-1, 1]; thresholds live on that scale.
    pub fn is_bounded(&self) -> bool {
        matches!(self, Kernel::Cosine | Kernel::DualCosine { .. })
    }

    pub fn is_symmetric(&self) -> bool {
        true
    }

    /// Whether the kernel corresponds to a Bregman divergence (required by
    /// the similarity-first objective).
    pub fn has_bregman(&self) -> bool {
        matches!(self, Kernel::SqEuclidean)
    }

    pub fn similarity<F: Real>(&self, u: &[F], v: &[F]) -> Result<F> {
        check_dims(u.len(), v.len())?;
        Ok(match *self {
            Kernel::Cosine => cosine_unchecked(u, v),
            Kernel::DualCosine { split_index } => {
                dual_cosine_unchecked(u, v, split_index).combined
            }
            Kernel::SqEuclidean => -sq_euclidean_unchecked(u, v),
            Kernel::Manhattan => -manhattan_unchecked(u, v),
        })
    }

    /// Angular distance for the cosine family; plain distances otherwise.
    pub fn dissimilarity<F: Real>(&self, u: &[F], v: &[F]) -> Result<F> {
        check_dims(u.len(), v.len())?;
        Ok(match *self {
            Kernel::Cosine => clamp_unit(cosine_unchecked(u, v)).acos(),
            Kernel::DualCosine { split_index } => {
                clamp_unit(dual_cosine_unchecked(u, v, split_index).combined).acos()
            }
            Kernel::SqEuclidean => sq_euclidean_unchecked(u, v),
            Kernel::Manhattan => manhattan_unchecked(u, v),
        })
    }

    pub fn bregman_divergence<F: Real>(&self, x: &[F], c: &[F]) -> Result<F> {
        match self {
            Kernel::SqEuclidean => sq_euclidean_divergence(x, c),
            _ => Err(FascError::config(format!(
                "kernel {self} has no Bregman divergence"
            ))),
        }
    }

    /// Generalized centroid of `members` under this kernel's geometry.
    ///
    /// Cosine-family means of an all-zero (degenerate) membership come back
    /// as the zero vector, the degenerate-flagged representative.
    pub fn frechet_mean<F: Real>(&self, members: &[&[F]]) -> Result<Vec<F>> {
        if members.is_empty() {
            return Err(FascError::Invariant(
                "frechet_mean of empty membership".into(),
            ));
        }
        let dim = members[0].len();
        for m in members {
            check_dims(dim, m.len())?;
        }
        let mut acc = vec![F::zero(); dim];
        for m in members {
            for (a, &v) in acc.iter_mut().zip(m.iter()) {
                *a += v;
            }
        }
        Ok(match *self {
            Kernel::Cosine => {
                normalize_slice(&mut acc);
                acc
            }
            Kernel::DualCosine { split_index } => {
                normalize_slice(&mut acc[..split_index]);
                normalize_slice(&mut acc[split_index..]);
                acc
            }
            Kernel::SqEuclidean => {
                let n = F::from_usize(members.len()).unwrap();
                for a in acc.iter_mut() {
                    *a = *a / n;
                }
                acc
            }
            Kernel::Manhattan => coordinate_median(members, dim),
        })
    }
}

fn check_dims(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(FascError::DimensionMismatch { left, right });
    }
    Ok(())
}

fn clamp_unit<F: Real>(x: F) -> F {
    // absorbs rounding before acos; keeps the angular map NaN-free
    x.max(-F::one()).min(F::one())
}

fn norm<F: Real>(v: &[F]) -> F {
    v.iter().map(|&x| x * x).fold(F::zero(), |a, b| a + b).sqrt()
}

/// Scale a slice to unit length in place; all-zero slices are left as-is.
pub(crate) fn normalize_slice<F: Real>(v: &mut [F]) {
    let n = norm(v);
    if n > F::zero() {
        for x in v.iter_mut() {
            *x = *x / n;
        }
    }
}

fn dot<F: Real>(u: &[F], v: &[F]) -> F {
    u.iter()
        .zip(v.iter())
        .map(|(&a, &b)| a * b)
        .fold(F::zero(), |a, b| a + b)
}

fn cosine_unchecked<F: Real>(u: &[F], v: &[F]) -> F {
    let nu = norm(u);
    let nv = norm(v);
    if nu == F::zero() || nv == F::zero() {
        return F::zero();
    }
    dot(u, v) / (nu * nv)
}

/// Cosine of the l2-normalized vectors; 0 if either vector is all-zero.
pub fn cosine<F: Real>(u: &[F], v: &[F]) -> Result<F> {
    check_dims(u.len(), v.len())?;
    Ok(cosine_unchecked(u, v))
}

fn dual_cosine_unchecked<F: Real>(u: &[F], v: &[F], split: usize) -> DualCosineScore<F> {
    let pos = cosine_unchecked(&u[..split], &v[..split]);
    let neg = cosine_unchecked(&u[split..], &v[split..]);
    DualCosineScore {
        pos,
        neg,
        combined: pos.min(neg),
    }
}

/// Per-channel cosines on the polarity subvectors; a degenerate (all-zero)
/// channel contributes zero, and the combined score is the channel minimum.
pub fn dual_cosine<F: Real>(u: &[F], v: &[F], split: usize) -> Result<DualCosineScore<F>> {
    check_dims(u.len(), v.len())?;
    if split == 0 || split >= u.len() {
        return Err(FascError::config(format!(
            "split index {split} out of range for dim {}",
            u.len()
        )));
    }
    Ok(dual_cosine_unchecked(u, v, split))
}

/// Angular form of the dual-cosine score: `arccos(combined)`, in [0, pi].
/// Equals the maximum of the two polarity-specific angles.
pub fn dual_cosine_dissimilarity<F: Real>(u: &[F], v: &[F], split: usize) -> Result<F> {
    Ok(clamp_unit(dual_cosine(u, v, split)?.combined).acos())
}

fn sq_euclidean_unchecked<F: Real>(x: &[F], c: &[F]) -> F {
    x.iter()
        .zip(c.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .fold(F::zero(), |a, b| a + b)
}

/// Squared Euclidean distance, the Bregman divergence behind the SF-mode
/// objective.
pub fn sq_euclidean_divergence<F: Real>(x: &[F], c: &[F]) -> Result<F> {
    check_dims(x.len(), c.len())?;
    Ok(sq_euclidean_unchecked(x, c))
}

fn manhattan_unchecked<F: Real>(x: &[F], c: &[F]) -> F {
    x.iter()
        .zip(c.iter())
        .map(|(&a, &b)| (a - b).abs())
        .fold(F::zero(), |a, b| a + b)
}

/// Exact L1 Fréchet mean: the coordinate-wise median, taking the lower
/// median on even counts so the result is deterministic.
fn coordinate_median<F: Real>(members: &[&[F]], dim: usize) -> Vec<F> {
    let mut out = vec![F::zero(); dim];
    let mut column: Vec<F> = Vec::with_capacity(members.len());
    for (d, o) in out.iter_mut().enumerate() {
        column.clear();
        column.extend(members.iter().map(|m| m[d]));
        column.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        *o = column[(column.len() - 1) / 2];
    }
    out
}

// ---------------------------------------------------------------------------
// Prepared samples and the batched scoring path
// ---------------------------------------------------------------------------

/// A sample in kernel space: sparse entries sorted by dimension, already
/// normalized where the kernel calls for it.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec<F> {
    pub entries: Vec<(u32, F)>,
}

/// Dataset view the engine iterates on: samples in canonical order, prepared
/// for the kernel once up front. Cosine-family preparation scales each
/// sample (per channel for dual-cosine) to unit length so the similarity is
/// a plain dot product against unit representatives; the other kernels keep
/// raw intensities.
#[derive(Debug, Clone)]
pub struct PreparedDataset<F> {
    pub kernel: Kernel,
    pub dim: usize,
    /// canonical position -> original dataset position
    pub order: Vec<usize>,
    /// sample ids, canonical order
    pub ids: Vec<u64>,
    pub samples: Vec<SparseVec<F>>,
    /// per-sample squared norm of the prepared entries (squared-Euclidean
    /// expansion term); empty for other kernels
    pub sq_norms: Vec<F>,
}

impl<F: Real> PreparedDataset<F> {
    pub fn new(dataset: &Dataset<F>, kernel: Kernel) -> Result<Self> {
        if let Kernel::DualCosine { split_index } = kernel {
            if split_index == 0 || split_index >= dataset.dim {
                return Err(FascError::config(format!(
                    "split index {split_index} invalid for dim {}",
                    dataset.dim
                )));
            }
        }
        let order = canonical_order(dataset);
        let ids = order.iter().map(|&i| dataset.spectra[i].id).collect();
        let samples: Vec<SparseVec<F>> = order
            .iter()
            .map(|&i| prepare_spectrum(kernel, dataset.spectra[i].entries()))
            .collect();
        let sq_norms = if kernel == Kernel::SqEuclidean {
            samples
                .iter()
                .map(|s| {
                    s.entries
                        .iter()
                        .map(|&(_, v)| v * v)
                        .fold(F::zero(), |a, b| a + b)
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(PreparedDataset {
            kernel,
            dim: dataset.dim,
            order,
            ids,
            samples,
            sq_norms,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dense_sample(&self, canonical_idx: usize) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim];
        for &(d, v) in &self.samples[canonical_idx].entries {
            out[d as usize] = v;
        }
        out
    }
}

fn prepare_spectrum<F: Real>(kernel: Kernel, entries: &[(u32, F)]) -> SparseVec<F> {
    let mut entries = entries.to_vec();
    match kernel {
        Kernel::Cosine => {
            let n = entries
                .iter()
                .map(|&(_, v)| v * v)
                .fold(F::zero(), |a, b| a + b)
                .sqrt();
            if n > F::zero() {
                for e in entries.iter_mut() {
                    e.1 = e.1 / n;
                }
            }
        }
        Kernel::DualCosine { split_index } => {
            let split = split_index as u32;
            let mut npos = F::zero();
            let mut nneg = F::zero();
            for &(d, v) in &entries {
                if d < split {
                    npos += v * v;
                } else {
                    nneg += v * v;
                }
            }
            let npos = npos.sqrt();
            let nneg = nneg.sqrt();
            for e in entries.iter_mut() {
                let n = if e.0 < split { npos } else { nneg };
                if n > F::zero() {
                    e.1 = e.1 / n;
                }
            }
        }
        Kernel::SqEuclidean | Kernel::Manhattan => {}
    }
    SparseVec { entries }
}

/// Frozen representatives packed dimension-major (`D x K`) so that scoring a
/// sparse sample is a contiguous pass over K per nonzero entry. The packing
/// fixes the per-pair reduction order, which keeps scores bit-identical for
/// any batch size and worker count.
#[derive(Debug, Clone)]
pub struct CentroidMatrix<F> {
    pub k: usize,
    pub dim: usize,
    dim_major: Vec<F>,
    /// per-cluster squared norms (squared-Euclidean kernel)
    sq_norms: Vec<F>,
    /// per-cluster L1 norms (Manhattan kernel)
    l1_norms: Vec<F>,
    kernel: Kernel,
}

impl<F: Real> CentroidMatrix<F> {
    pub fn from_representatives<'a>(
        kernel: Kernel,
        dim: usize,
        reps: impl ExactSizeIterator<Item = &'a [F]>,
    ) -> Self
    where
        F: 'a,
    {
        let k = reps.len();
        let mut dim_major = vec![F::zero(); dim * k];
        let mut sq_norms = vec![F::zero(); k];
        let mut l1_norms = vec![F::zero(); k];
        for (j, rep) in reps.enumerate() {
            debug_assert_eq!(rep.len(), dim);
            let mut sq = F::zero();
            let mut l1 = F::zero();
            for (d, &v) in rep.iter().enumerate() {
                dim_major[d * k + j] = v;
                sq += v * v;
                l1 += v.abs();
            }
            sq_norms[j] = sq;
            l1_norms[j] = l1;
        }
        CentroidMatrix {
            k,
            dim,
            dim_major,
            sq_norms,
            l1_norms,
            kernel,
        }
    }

    /// Similarity of one prepared sample against every representative.
    /// `out` has length K; `scratch` is reused across calls and is resized
    /// as needed (dual-cosine keeps its second channel there).
    pub fn scores_into(
        &self,
        sample: &SparseVec<F>,
        sample_sq_norm: F,
        out: &mut [F],
        scratch: &mut Vec<F>,
    ) {
        debug_assert_eq!(out.len(), self.k);
        let k = self.k;
        match self.kernel {
            Kernel::Cosine => {
                out.fill(F::zero());
                for &(d, v) in &sample.entries {
                    let row = &self.dim_major[d as usize * k..(d as usize + 1) * k];
                    for (o, &c) in out.iter_mut().zip(row.iter()) {
                        *o += v * c;
                    }
                }
            }
            Kernel::DualCosine { split_index } => {
                let split = split_index as u32;
                out.fill(F::zero());
                scratch.clear();
                scratch.resize(k, F::zero());
                for &(d, v) in &sample.entries {
                    let row = &self.dim_major[d as usize * k..(d as usize + 1) * k];
                    let target: &mut [F] = if d < split { out } else { &mut scratch[..] };
                    for (o, &c) in target.iter_mut().zip(row.iter()) {
                        *o += v * c;
                    }
                }
                for (o, &n) in out.iter_mut().zip(scratch.iter()) {
                    *o = o.min(n);
                }
            }
            Kernel::SqEuclidean => {
                // -(||x||^2 - 2 x.c + ||c||^2), clamped so exact matches stay at 0
                out.fill(F::zero());
                for &(d, v) in &sample.entries {
                    let row = &self.dim_major[d as usize * k..(d as usize + 1) * k];
                    for (o, &c) in out.iter_mut().zip(row.iter()) {
                        *o += v * c;
                    }
                }
                let two = real::<F>(2.0);
                for (o, &csq) in out.iter_mut().zip(self.sq_norms.iter()) {
                    let dist = (sample_sq_norm - two * *o + csq).max(F::zero());
                    *o = -dist;
                }
            }
            Kernel::Manhattan => {
                // -( sum_{d in nz(x)} (|x_d - c_d| - |c_d|) + ||c||_1 )
                out.fill(F::zero());
                for &(d, v) in &sample.entries {
                    let row = &self.dim_major[d as usize * k..(d as usize + 1) * k];
                    for (o, &c) in out.iter_mut().zip(row.iter()) {
                        *o += (v - c).abs() - c.abs();
                    }
                }
                for (o, &l1) in out.iter_mut().zip(self.l1_norms.iter()) {
                    *o = -(*o + l1);
                }
            }
        }
    }

    /// Same score a full block computation would produce for one pair.
    pub fn score_one(&self, sample: &SparseVec<F>, sample_sq_norm: F, j: usize) -> F {
        debug_assert!(j < self.k);
        match self.kernel {
            Kernel::Cosine => {
                let mut acc = F::zero();
                for &(d, v) in &sample.entries {
                    acc += v * self.dim_major[d as usize * self.k + j];
                }
                acc
            }
            Kernel::DualCosine { split_index } => {
                let split = split_index as u32;
                let mut pos = F::zero();
                let mut neg = F::zero();
                for &(d, v) in &sample.entries {
                    let c = self.dim_major[d as usize * self.k + j];
                    if d < split {
                        pos += v * c;
                    } else {
                        neg += v * c;
                    }
                }
                pos.min(neg)
            }
            Kernel::SqEuclidean => {
                let mut acc = F::zero();
                for &(d, v) in &sample.entries {
                    acc += v * self.dim_major[d as usize * self.k + j];
                }
                let two = real::<F>(2.0);
                -(sample_sq_norm - two * acc + self.sq_norms[j]).max(F::zero())
            }
            Kernel::Manhattan => {
                let mut acc = F::zero();
                for &(d, v) in &sample.entries {
                    let c = self.dim_major[d as usize * self.k + j];
                    acc += (v - c).abs() - c.abs();
                }
                -(acc + self.l1_norms[j])
            }
        }
    }

    pub fn bytes(&self) -> usize {
        (self.dim_major.len() + self.sq_norms.len() + self.l1_norms.len())
            * std::mem::size_of::<F>()
    }
}
