//! Phase 1: assignment against frozen representatives, then outlier
//! promotion.
//!
//! Each sample's scores, candidate set, and selected cluster depend only on
//! that sample and the frozen state, so the batch partitioning and the
//! worker count cannot change any result bit. Workers share the packed
//! representative matrix read-only and write disjoint slices of the
//! assignment vector; promotion runs single-threaded afterwards.

use rayon::prelude::*;

use crate::error::{FascError, Result};
use crate::kernels::{CentroidMatrix, Kernel, PreparedDataset};
use crate::state::{singleton_cluster, ClusterState, FascConfig, OUTLIER};
use crate::Real;

/// Dense `len x k` block of similarity scores for one batch.
#[derive(Debug, Clone)]
pub struct AffinityBlock<F> {
    /// Canonical index of the first sample in the batch.
    pub start: usize,
    pub len: usize,
    pub k: usize,
    /// Row-major scores; row i holds sample `start + i` against every
    /// cluster.
    pub scores: Vec<F>,
}

impl<F: Real> AffinityBlock<F> {
    pub fn row(&self, i: usize) -> &[F] {
        &self.scores[i * self.k..(i + 1) * self.k]
    }
}

/// Score one batch against the frozen representatives. With `k = 0` the
/// block has zero columns and every sample in it stays an outlier.
pub fn compute_affinities<F: Real>(
    prepared: &PreparedDataset<F>,
    start: usize,
    len: usize,
    state: &ClusterState<F>,
    kernel: Kernel,
) -> AffinityBlock<F> {
    let matrix = CentroidMatrix::from_representatives(
        kernel,
        prepared.dim,
        state
            .clusters
            .iter()
            .filter(|c| c.alive)
            .map(|c| c.representative.as_slice())
            .collect::<Vec<_>>()
            .into_iter(),
    );
    let mut block = AffinityBlock {
        start,
        len,
        k: matrix.k,
        scores: vec![F::zero(); len * matrix.k],
    };
    let mut scratch = Vec::new();
    for i in 0..len {
        let idx = start + i;
        let sq = prepared.sq_norms.get(idx).copied().unwrap_or_else(F::zero);
        matrix.scores_into(
            &prepared.samples[idx],
            sq,
            &mut block.scores[i * matrix.k..(i + 1) * matrix.k],
            &mut scratch,
        );
    }
    block
}

/// Clusters whose score clears the acceptance threshold. An empty result
/// leaves the sample a provisional outlier.
pub fn candidate_set<F: Real>(scores_row: &[F], tau_intra: F) -> Vec<usize> {
    scores_row
        .iter()
        .enumerate()
        .filter(|&(_, &s)| s >= tau_intra)
        .map(|(j, _)| j)
        .collect()
}

/// Similarity-first selection: best score, ties to the lowest index.
pub fn select_sf<F: Real>(scores_row: &[F], candidates: &[usize]) -> usize {
    debug_assert!(!candidates.is_empty(), "select_sf on empty candidate set");
    let mut best = candidates[0];
    for &j in &candidates[1..] {
        if scores_row[j] > scores_row[best] {
            best = j;
        }
    }
    best
}

/// Density-augmented selection: best `score + lambda * phi(support)` with
/// supports frozen at their prior-iteration values; ties to the lowest
/// index.
pub fn select_dass<F: Real>(
    scores_row: &[F],
    candidates: &[usize],
    supports: &[usize],
    lambda: F,
    phi: crate::state::SupportWeight,
) -> usize {
    debug_assert!(!candidates.is_empty(), "select_dass on empty candidate set");
    let value = |j: usize| scores_row[j] + lambda * phi.eval::<F>(supports[j]);
    let mut best = candidates[0];
    let mut best_value = value(best);
    for &j in &candidates[1..] {
        let v = value(j);
        if v > best_value {
            best = j;
            best_value = v;
        }
    }
    best
}

/// Per-sample results of one assignment pass.
#[derive(Debug)]
pub struct AssignOutcome<F> {
    /// Highest raw similarity per sample against the frozen representatives
    /// (negative infinity when there are no clusters). Drives promotion
    /// ordering.
    pub best_scores: Vec<F>,
    /// Peak per-batch scratch footprint in bytes (scores block plus the
    /// dual-cosine channel buffer).
    pub scratch_bytes: usize,
}

/// Reassign every sample from the frozen representatives and supports.
/// Mutates only the assignment vector.
pub fn assign_all<F: Real>(
    prepared: &PreparedDataset<F>,
    state: &mut ClusterState<F>,
    config: &FascConfig<F>,
    kernel: Kernel,
) -> AssignOutcome<F> {
    let n = prepared.len();
    debug_assert!(state.clusters.iter().all(|c| c.alive));
    let reps: Vec<&[F]> = state
        .clusters
        .iter()
        .map(|c| c.representative.as_slice())
        .collect();
    let supports: Vec<usize> = state.clusters.iter().map(|c| c.support).collect();
    let k = reps.len();
    let matrix = CentroidMatrix::from_representatives(kernel, prepared.dim, reps.into_iter());

    let mut best_scores = vec![F::neg_infinity(); n];
    if k == 0 {
        state.assignments.iter_mut().for_each(|a| *a = OUTLIER);
        return AssignOutcome {
            best_scores,
            scratch_bytes: 0,
        };
    }

    let batch = config.batch_size.max(1);
    let scratch_bytes = batch.min(n) * k * std::mem::size_of::<F>()
        + if matches!(kernel, Kernel::DualCosine { .. }) {
            k * std::mem::size_of::<F>()
        } else {
            0
        };

    state
        .assignments
        .par_chunks_mut(batch)
        .zip(best_scores.par_chunks_mut(batch))
        .enumerate()
        .for_each(|(chunk_no, (assign_chunk, best_chunk))| {
            let start = chunk_no * batch;
            let len = assign_chunk.len();
            let mut scores = vec![F::zero(); len * k];
            let mut scratch: Vec<F> = Vec::new();
            for i in 0..len {
                let idx = start + i;
                let sq = prepared.sq_norms.get(idx).copied().unwrap_or_else(F::zero);
                matrix.scores_into(
                    &prepared.samples[idx],
                    sq,
                    &mut scores[i * k..(i + 1) * k],
                    &mut scratch,
                );
            }
            for i in 0..len {
                let row = &scores[i * k..(i + 1) * k];
                let mut best_sim = F::neg_infinity();
                let mut chosen: i32 = OUTLIER;
                let mut chosen_value = F::neg_infinity();
                for (j, &s) in row.iter().enumerate() {
                    if s > best_sim {
                        best_sim = s;
                    }
                    if s >= config.tau_intra {
                        let v = match config.rule {
                            crate::state::AssignmentRule::Sf => s,
                            crate::state::AssignmentRule::Dass => {
                                s + config.lambda * config.support_weight.eval::<F>(supports[j])
                            }
                        };
                        if v > chosen_value {
                            chosen_value = v;
                            chosen = j as i32;
                        }
                    }
                }
                assign_chunk[i] = chosen;
                best_chunk[i] = best_sim;
            }
        });

    AssignOutcome {
        best_scores,
        scratch_bytes,
    }
}

/// Promote outliers to singleton clusters until the capacity for this
/// iteration is reached, most novel first (lowest best score, ties in
/// canonical order). Promoted samples join their own singleton immediately
/// but do not compete for other samples until the next iteration.
pub fn promote_outliers<F: Real>(
    prepared: &PreparedDataset<F>,
    state: &mut ClusterState<F>,
    config: &FascConfig<F>,
    kernel: Kernel,
    best_scores: &[F],
) -> usize {
    let cap = config.capacity.k_at(state.iteration);
    let active = state.active_k();
    if active >= cap {
        return 0;
    }
    let mut free = cap - active;
    let mut outliers: Vec<usize> = state
        .assignments
        .iter()
        .enumerate()
        .filter(|&(_, &a)| a == OUTLIER)
        .map(|(i, _)| i)
        .collect();
    if outliers.is_empty() {
        return 0;
    }
    outliers.sort_unstable_by(|&a, &b| {
        best_scores[a]
            .partial_cmp(&best_scores[b])
            .expect("scores are never NaN")
            .then_with(|| a.cmp(&b))
    });
    let mut promoted = 0;
    for idx in outliers {
        if free == 0 {
            break;
        }
        let cluster_idx = state.clusters.len() as i32;
        state
            .clusters
            .push(singleton_cluster(kernel, prepared, idx, state.iteration));
        state.assignments[idx] = cluster_idx;
        free -= 1;
        promoted += 1;
    }
    promoted
}

/// Convenience wrapper for contract checks: errors instead of panicking on
/// an empty candidate set.
pub fn select_rule<F: Real>(
    config: &FascConfig<F>,
    scores_row: &[F],
    candidates: &[usize],
    supports: &[usize],
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(FascError::Invariant(
            "selection rule called with empty candidate set".into(),
        ));
    }
    Ok(match config.rule {
        crate::state::AssignmentRule::Sf => select_sf(scores_row, candidates),
        crate::state::AssignmentRule::Dass => select_dass(
            scores_row,
            candidates,
            supports,
            config.lambda,
            config.support_weight,
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{Dataset, Spectrum};
    use crate::state::{initialize, AssignmentRule, SupportWeight};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dataset_from(rows: Vec<Vec<f64>>, dim: usize) -> Dataset<f64> {
        let spectra = rows
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                let entries = row
                    .into_iter()
                    .enumerate()
                    .filter(|&(_, v)| v != 0.0)
                    .map(|(d, v)| (d as u32, v))
                    .collect();
                Spectrum::new(i as u64, entries, dim).unwrap()
            })
            .collect();
        Dataset::new(dim, spectra, None, None).unwrap()
    }

    fn random_dataset(n: usize, dim: usize, seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(0.0..2.0)).collect())
            .collect();
        dataset_from(rows, dim)
    }

    #[test]
    fn affinity_block_matches_pairwise_calls() {
        let ds = dataset_from(
            vec![vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 1.0]],
            3,
        );
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let mut cfg = FascConfig::<f64>::new(3);
        cfg.seed_budget = 2;
        let mut state = initialize(&prepared, &cfg, Kernel::Cosine).unwrap();
        // hand a third representative to the state
        state
            .clusters
            .push(crate::state::singleton_cluster(Kernel::Cosine, &prepared, 0, 0));
        let block = compute_affinities(&prepared, 0, 2, &state, Kernel::Cosine);
        assert_eq!(block.k, 3);
        for i in 0..2 {
            let x = prepared.dense_sample(i);
            for (j, c) in state.clusters.iter().enumerate() {
                let expect = crate::kernels::cosine(&x, &c.representative).unwrap();
                assert_relative_eq!(block.row(i)[j], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn affinity_identity_row() {
        let ds = dataset_from(vec![vec![1.0, 2.0, 3.0]], 3);
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let mut cfg = FascConfig::<f64>::new(1);
        cfg.seed_budget = 1;
        let state = initialize(&prepared, &cfg, Kernel::Cosine).unwrap();
        let block = compute_affinities(&prepared, 0, 1, &state, Kernel::Cosine);
        assert_relative_eq!(block.row(0)[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn affinity_with_no_clusters_is_empty() {
        let ds = random_dataset(4, 3, 1);
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let mut cfg = FascConfig::<f64>::new(4);
        cfg.seed_budget = 0;
        let mut state = initialize(&prepared, &cfg, Kernel::Cosine).unwrap();
        let block = compute_affinities(&prepared, 0, 4, &state, Kernel::Cosine);
        assert_eq!(block.k, 0);
        let out = assign_all(&prepared, &mut state, &cfg, Kernel::Cosine);
        assert!(state.assignments.iter().all(|&a| a == OUTLIER));
        assert!(out.best_scores.iter().all(|s| s.is_infinite()));
    }

    #[test]
    fn candidate_set_boundary_behaviour() {
        assert_eq!(candidate_set(&[0.9, 0.6], 0.7), vec![0]);
        assert_eq!(candidate_set(&[0.69, 0.69], 0.7), Vec::<usize>::new());
        assert_eq!(candidate_set(&[0.7, 0.7], 0.7), vec![0, 1]);
    }

    #[test]
    fn select_sf_rules() {
        assert_eq!(select_sf(&[0.8, 0.9], &[0, 1]), 1);
        assert_eq!(select_sf(&[0.8, 0.8], &[0, 1]), 0); // tie -> lowest index
        assert_eq!(select_sf(&[0.1, 0.2, 0.5], &[2]), 2);
    }

    #[test]
    fn select_dass_prefers_density() {
        // sigma (0.80, 0.75), supports (10, 100), lambda 1, phi(n)=n
        let got = select_dass(&[0.80, 0.75], &[0, 1], &[10, 100], 1.0, SupportWeight::Linear);
        assert_eq!(got, 1);
    }

    #[test]
    fn select_dass_reduces_to_sf() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let row: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
            let candidates: Vec<usize> = (0..5).collect();
            // equal supports: the density term is constant
            let equal = vec![7usize; 5];
            assert_eq!(
                select_dass(&row, &candidates, &equal, 1.0, SupportWeight::Linear),
                select_sf(&row, &candidates)
            );
            // lambda = 0: density ignored entirely
            let supports: Vec<usize> = (0..5).map(|_| rng.gen_range(0..100)).collect();
            assert_eq!(
                select_dass(&row, &candidates, &supports, 0.0, SupportWeight::Linear),
                select_sf(&row, &candidates)
            );
        }
    }

    #[test]
    fn assign_all_matches_scalar_oracle() {
        let ds = random_dataset(40, 6, 7);
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let mut cfg = FascConfig::<f64>::new(4);
        cfg.seed_budget = 4;
        cfg.tau_intra = 0.5;
        cfg.rule = AssignmentRule::Dass;
        let mut state = initialize(&prepared, &cfg, Kernel::Cosine).unwrap();
        let supports: Vec<usize> = state.clusters.iter().map(|c| c.support).collect();

        assign_all(&prepared, &mut state, &cfg, Kernel::Cosine);

        // brute force: per-sample sequential evaluation through the public ops
        for i in 0..prepared.len() {
            let block = compute_affinities(&prepared, i, 1, &state, Kernel::Cosine);
            let row = block.row(0);
            let cands = candidate_set(row, cfg.tau_intra);
            let expect = if cands.is_empty() {
                OUTLIER
            } else {
                select_rule(&cfg, row, &cands, &supports).unwrap() as i32
            };
            assert_eq!(state.assignments[i], expect, "sample {i}");
        }
    }

    #[test]
    fn assign_all_batch_size_invariant_bit_exact() {
        let ds = random_dataset(64, 8, 9);
        for kernel in [Kernel::Cosine, Kernel::SqEuclidean, Kernel::Manhattan] {
            let prepared = PreparedDataset::new(&ds, kernel).unwrap();
            let mut cfg = FascConfig::<f64>::new(6);
            cfg.seed_budget = 6;
            if !kernel.is_bounded() {
                cfg.tau_intra = -1e6;
                cfg.tau_inter = -1e6;
            }
            let base_state = initialize(&prepared, &cfg, kernel).unwrap();
            let mut reference: Option<(Vec<i32>, Vec<f64>)> = None;
            for batch in [1usize, 7, 64] {
                let mut state = base_state.clone();
                let mut c = cfg.clone();
                c.batch_size = batch;
                let out = assign_all(&prepared, &mut state, &c, kernel);
                match &reference {
                    None => reference = Some((state.assignments.clone(), out.best_scores.clone())),
                    Some((a, s)) => {
                        assert_eq!(a, &state.assignments, "batch {batch} kernel {kernel}");
                        assert_eq!(s, &out.best_scores, "batch {batch} kernel {kernel}");
                    }
                }
            }
        }
    }

    #[test]
    fn assign_all_worker_count_invariant() {
        let ds = random_dataset(96, 8, 10);
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let mut cfg = FascConfig::<f64>::new(6);
        cfg.seed_budget = 6;
        cfg.batch_size = 8;
        let base_state = initialize(&prepared, &cfg, Kernel::Cosine).unwrap();
        let mut reference: Option<Vec<i32>> = None;
        for workers in [1usize, 4, 8] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .unwrap();
            let mut state = base_state.clone();
            pool.install(|| assign_all(&prepared, &mut state, &cfg, Kernel::Cosine));
            match &reference {
                None => reference = Some(state.assignments.clone()),
                Some(a) => assert_eq!(a, &state.assignments, "workers {workers}"),
            }
        }
    }

    #[test]
    fn assign_all_never_mutates_frozen_structure() {
        let ds = random_dataset(30, 5, 11);
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let mut cfg = FascConfig::<f64>::new(4);
        cfg.seed_budget = 4;
        let mut state = initialize(&prepared, &cfg, Kernel::Cosine).unwrap();
        let frozen = state.clusters.clone();
        assign_all(&prepared, &mut state, &cfg, Kernel::Cosine);
        assert_eq!(frozen, state.clusters);
    }

    #[test]
    fn assigned_samples_clear_tau_against_frozen_reps() {
        let ds = random_dataset(50, 6, 13);
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let mut cfg = FascConfig::<f64>::new(5);
        cfg.seed_budget = 5;
        cfg.tau_intra = 0.6;
        let mut state = initialize(&prepared, &cfg, Kernel::Cosine).unwrap();
        assign_all(&prepared, &mut state, &cfg, Kernel::Cosine);
        for i in 0..prepared.len() {
            let a = state.assignments[i];
            if a != OUTLIER {
                let x = prepared.dense_sample(i);
                let sim =
                    crate::kernels::cosine(&x, &state.clusters[a as usize].representative).unwrap();
                assert!(sim >= cfg.tau_intra - 1e-12, "sample {i}: {sim}");
            }
        }
    }

    #[test]
    fn promotion_ordering_and_capacity() {
        let ds = random_dataset(10, 4, 15);
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let mut cfg = FascConfig::<f64>::new(3);
        cfg.seed_budget = 2;
        let mut state = initialize(&prepared, &cfg, Kernel::Cosine).unwrap();
        state.iteration = 1;

        // three outliers with engineered best scores, one free slot
        let mut best = vec![1.0; 10];
        state.assignments.iter_mut().for_each(|a| *a = 0);
        state.assignments[3] = OUTLIER;
        state.assignments[5] = OUTLIER;
        state.assignments[7] = OUTLIER;
        best[3] = 0.5;
        best[5] = 0.1;
        best[7] = 0.3;

        let promoted = promote_outliers(&prepared, &mut state, &cfg, Kernel::Cosine, &best);
        assert_eq!(promoted, 1);
        assert_eq!(state.assignments[5], 2, "most novel outlier is promoted");
        assert!(state.clusters[2].newly_promoted);
        assert_eq!(state.clusters[2].support, 1);
        assert_eq!(state.active_k(), 3);

        // at capacity: no-op
        let promoted = promote_outliers(&prepared, &mut state, &cfg, Kernel::Cosine, &best);
        assert_eq!(promoted, 0);

        // no outliers: no-op
        state.assignments.iter_mut().for_each(|a| *a = 0);
        let mut cfg_big = cfg.clone();
        cfg_big.capacity = crate::state::CapacitySchedule::Constant { k_max: 10 };
        let promoted = promote_outliers(&prepared, &mut state, &cfg_big, Kernel::Cosine, &best);
        assert_eq!(promoted, 0);
    }
}
