//! Reference baselines for the comparisons: ART2A (order-dependent online
//! clustering) and spherical k-means (cosine Lloyd iterations).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{FascError, Result};
use crate::kernels::{CentroidMatrix, Kernel, PreparedDataset, SparseVec};
use crate::spectra::Dataset;
use crate::Real;

#[derive(Debug, Clone)]
pub struct Art2aResult<F> {
    /// Per-sample prototype index in the dataset's own order; -1 for
    /// skipped (all-zero) samples.
    pub assignments: Vec<i64>,
    /// Unit-norm prototypes.
    pub prototypes: Vec<Vec<F>>,
    pub supports: Vec<usize>,
    pub skipped: usize,
}

/// One sequential ART2A pass in the given visiting order: best prototype by
/// cosine; at or above vigilance the winner moves by a convex step and is
/// renormalized, otherwise a new prototype is minted while the budget
/// lasts, and past the budget the sample falls back to the best match.
///
/// The sequential prototype updates are the point: the final partition
/// depends on the arrival order.
pub fn art2a_run<F: Real>(
    dataset: &Dataset<F>,
    vigilance: F,
    eta: F,
    k_max: usize,
    order: &[usize],
) -> Result<Art2aResult<F>> {
    if !(vigilance > F::zero() && vigilance <= F::one()) {
        return Err(FascError::config(format!(
            "vigilance must be in (0, 1], got {vigilance}"
        )));
    }
    if !(eta > F::zero() && eta <= F::one()) {
        return Err(FascError::config(format!(
            "eta must be in (0, 1], got {eta}"
        )));
    }
    if k_max == 0 {
        return Err(FascError::config("k_max must be >= 1"));
    }
    if order.len() != dataset.len() {
        return Err(FascError::DimensionMismatch {
            left: order.len(),
            right: dataset.len(),
        });
    }
    let dim = dataset.dim;
    let mut assignments = vec![-1i64; dataset.len()];
    let mut prototypes: Vec<Vec<F>> = Vec::new();
    let mut supports: Vec<usize> = Vec::new();
    let mut skipped = 0usize;

    for &i in order {
        let spectrum = &dataset.spectra[i];
        if spectrum.is_degenerate() {
            skipped += 1;
            continue;
        }
        let mut x = spectrum.to_dense(dim);
        crate::kernels::normalize_slice(&mut x);

        let mut best = None;
        let mut best_sim = F::neg_infinity();
        for (j, p) in prototypes.iter().enumerate() {
            let s = dot(&x, p);
            if s > best_sim {
                best_sim = s;
                best = Some(j);
            }
        }
        match best {
            Some(j) if best_sim >= vigilance => {
                let p = &mut prototypes[j];
                for (pv, xv) in p.iter_mut().zip(x.iter()) {
                    *pv = (F::one() - eta) * *pv + eta * *xv;
                }
                crate::kernels::normalize_slice(p);
                supports[j] += 1;
                assignments[i] = j as i64;
            }
            Some(j) if prototypes.len() >= k_max => {
                // budget exhausted: assign-to-best fallback without learning
                supports[j] += 1;
                assignments[i] = j as i64;
            }
            _ => {
                prototypes.push(x);
                supports.push(1);
                assignments[i] = (prototypes.len() - 1) as i64;
            }
        }
    }
    Ok(Art2aResult {
        assignments,
        prototypes,
        supports,
        skipped,
    })
}

fn dot<F: Real>(u: &[F], v: &[F]) -> F {
    u.iter()
        .zip(v.iter())
        .map(|(&a, &b)| a * b)
        .fold(F::zero(), |a, b| a + b)
}

#[derive(Debug, Clone)]
pub struct KMeansResult<F> {
    /// Per-sample cluster in the dataset's own order; every sample is
    /// assigned.
    pub assignments: Vec<i64>,
    pub centroids: Vec<Vec<F>>,
    pub iterations: usize,
    pub converged: bool,
}

/// Spherical k-means: k-means++-style seeding from a seeded generator over
/// the canonical sample order, Lloyd iterations with cosine assignment and
/// normalized-mean updates, empty clusters reseeded from the farthest
/// sample. Deterministic given the seed.
pub fn spherical_kmeans<F: Real>(
    dataset: &Dataset<F>,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KMeansResult<F>> {
    let n = dataset.len();
    if k == 0 || k > n {
        return Err(FascError::config(format!(
            "k must be in 1..={n}, got {k}"
        )));
    }
    let prepared = PreparedDataset::new(dataset, Kernel::Cosine)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // seeding: first centroid uniform, then weight d^2 with d = 1 - best cos
    let mut centroids: Vec<Vec<F>> = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    let mut best_sim = vec![F::neg_infinity(); n];
    let first = rng.gen_range(0..n);
    centroids.push(unit_sample(&prepared, first));
    chosen[first] = true;
    while centroids.len() < k {
        let newest = centroids.last().unwrap();
        for i in 0..n {
            let s = sparse_dot(&prepared.samples[i], newest);
            if s > best_sim[i] {
                best_sim[i] = s;
            }
        }
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                if chosen[i] {
                    0.0
                } else {
                    let d = (1.0 - best_sim[i].to_f64().unwrap()).max(0.0);
                    d * d
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                r -= w;
                if r <= 0.0 {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| weights.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // all remaining samples coincide with a centroid
            (0..n)
                .find(|&i| !chosen[i])
                .expect("k <= n leaves an unchosen sample")
        };
        chosen[pick] = true;
        centroids.push(unit_sample(&prepared, pick));
    }

    let mut assignments: Vec<i64> = vec![-1; n];
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..max_iters {
        iterations += 1;
        let matrix = CentroidMatrix::from_representatives(
            Kernel::Cosine,
            prepared.dim,
            centroids.iter().map(|c| c.as_slice()),
        );
        let mut next: Vec<i64> = vec![0; n];
        let mut best: Vec<F> = vec![F::zero(); n];
        next.par_iter_mut()
            .zip(best.par_iter_mut())
            .enumerate()
            .for_each(|(i, (slot, best_out))| {
                let mut scores = vec![F::zero(); k];
                let mut scratch = Vec::new();
                matrix.scores_into(&prepared.samples[i], F::zero(), &mut scores, &mut scratch);
                let mut best_j = 0usize;
                for (j, &s) in scores.iter().enumerate() {
                    if s > scores[best_j] {
                        best_j = j;
                    }
                }
                *slot = best_j as i64;
                *best_out = scores[best_j];
            });

        // normalized member sums, accumulated in canonical order
        let mut sums = vec![vec![F::zero(); prepared.dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in next.iter().enumerate() {
            let s = &mut sums[a as usize];
            for &(d, v) in &prepared.samples[i].entries {
                s[d as usize] += v;
            }
            counts[a as usize] += 1;
        }
        // reseed empty clusters from the farthest samples
        let mut empties: Vec<usize> = (0..k).filter(|&j| counts[j] == 0).collect();
        if !empties.is_empty() {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_unstable_by(|&a, &b| {
                best[a]
                    .partial_cmp(&best[b])
                    .unwrap()
                    .then_with(|| a.cmp(&b))
            });
            for (slot, &far) in empties.drain(..).zip(order.iter()) {
                sums[slot] = prepared.dense_sample(far);
                counts[slot] = 1;
                next[far] = slot as i64;
            }
        }
        let mut new_centroids = Vec::with_capacity(k);
        for mut s in sums {
            crate::kernels::normalize_slice(&mut s);
            new_centroids.push(s);
        }

        let stable = next == assignments && new_centroids == centroids;
        assignments = next;
        centroids = new_centroids;
        if stable {
            converged = true;
            break;
        }
    }

    // map back to the dataset's own sample order
    let mut by_original = vec![-1i64; n];
    for (canon, &orig) in prepared.order.iter().enumerate() {
        by_original[orig] = assignments[canon];
    }
    Ok(KMeansResult {
        assignments: by_original,
        centroids,
        iterations,
        converged,
    })
}

fn unit_sample<F: Real>(prepared: &PreparedDataset<F>, i: usize) -> Vec<F> {
    // cosine preparation already unit-scales nonzero samples
    prepared.dense_sample(i)
}

fn sparse_dot<F: Real>(s: &SparseVec<F>, dense: &[F]) -> F {
    s.entries
        .iter()
        .map(|&(d, v)| v * dense[d as usize])
        .fold(F::zero(), |a, b| a + b)
}
