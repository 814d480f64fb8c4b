//! Phase 3: objectives, convergence monitors, the limit-cycle guard, and
//! the run loop driving Phases 1-3.
//!
//! Termination is threefold: convergence (monitors under tolerance, no
//! structural edits, and the structural state exactly reproducing the
//! previous iteration, which makes the fixed-point compactness and
//! separation properties literal), a detected limit cycle (a recurring
//! state digest; the cycle is replayed once and the best-objective state
//! returned), or the iteration cap (best-objective state seen).

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FascError, Result};
use crate::kernels::{CentroidMatrix, Kernel, PreparedDataset};
use crate::phase1::{assign_all, promote_outliers};
use crate::phase2::{dissolve_small, merge_pass, recompute_representatives, renumber};
use crate::spectra::Dataset;
use crate::state::{initialize, state_hash, AssignmentRule, ClusterState, FascConfig, OUTLIER};
use crate::Real;

/// One per-iteration convergence record. Times are deliberately excluded so
/// trace files are byte-identical across reruns; wall clocks live on
/// [`RunResult::iter_seconds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub k_active: usize,
    pub outlier_count: usize,
    pub s_centroid: f64,
    pub s_structure: f64,
    pub objective: f64,
    /// Hex digest of the structural state.
    pub state_hash: String,
    pub structural_edits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Termination {
    Converged,
    LimitCycle { period: usize },
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct RunResult<F> {
    pub state: ClusterState<F>,
    /// Sample ids in canonical order; `state.assignments[i]` belongs to
    /// `ids[i]`.
    pub ids: Vec<u64>,
    pub trace: Vec<TraceRecord>,
    pub termination: Termination,
    /// Objective of the returned state (the potential under DASS, the
    /// Bregman objective under SF when available).
    pub objective: f64,
    pub iterations: usize,
    /// Wall-clock seconds per iteration, aligned with `trace`.
    pub iter_seconds: Vec<f64>,
    /// Peak batch-scoped scratch footprint plus the packed representative
    /// matrix, in bytes: the streaming working set.
    pub working_set_bytes: usize,
}

impl<F: Real> RunResult<F> {
    /// (id, cluster) pairs sorted by id; -1 marks outliers.
    pub fn assignments_by_id(&self) -> Vec<(u64, i32)> {
        let mut out: Vec<(u64, i32)> = self
            .ids
            .iter()
            .copied()
            .zip(self.state.assignments.iter().copied())
            .collect();
        out.sort_unstable_by_key(|&(id, _)| id);
        out
    }

    /// Member id sets per cluster, each sorted, the whole list sorted; the
    /// partition as a set of sets, convenient for exact comparisons.
    pub fn partition_as_sets(&self) -> Vec<Vec<u64>> {
        let k = self.state.clusters.len();
        let mut sets: Vec<Vec<u64>> = vec![Vec::new(); k];
        for (i, &a) in self.state.assignments.iter().enumerate() {
            if a != OUTLIER {
                sets[a as usize].push(self.ids[i]);
            }
        }
        for s in sets.iter_mut() {
            s.sort_unstable();
        }
        sets.sort();
        sets
    }
}

/// Bounded potential driving the DASS dynamics: summed member similarity
/// plus the pairwise support bonus `sum_j C(n_j, 2)`. Outliers contribute
/// nothing.
pub fn potential_psi<F: Real>(
    prepared: &PreparedDataset<F>,
    state: &ClusterState<F>,
    kernel: Kernel,
) -> F {
    let reps: Vec<&[F]> = state
        .clusters
        .iter()
        .map(|c| c.representative.as_slice())
        .collect();
    if reps.is_empty() {
        return F::zero();
    }
    let matrix = CentroidMatrix::from_representatives(kernel, prepared.dim, reps.into_iter());
    let mut sim_sum = F::zero();
    for (i, &a) in state.assignments.iter().enumerate() {
        if a == OUTLIER {
            continue;
        }
        let sq = prepared.sq_norms.get(i).copied().unwrap_or_else(F::zero);
        sim_sum += matrix.score_one(&prepared.samples[i], sq, a as usize);
    }
    let mut pair_bonus = 0u64;
    for c in state.clusters.iter().filter(|c| c.alive) {
        pair_bonus += (c.support as u64) * (c.support as u64 - if c.support > 0 { 1 } else { 0 }) / 2;
    }
    sim_sum + F::from_u64(pair_bonus).unwrap()
}

/// Bregman objective for the similarity-first rule: summed divergence of
/// assigned samples from their representatives.
pub fn lyapunov<F: Real>(
    prepared: &PreparedDataset<F>,
    state: &ClusterState<F>,
    kernel: Kernel,
) -> Result<F> {
    if !kernel.has_bregman() {
        return Err(FascError::config(format!(
            "SF objective requires a Bregman kernel, got {kernel}"
        )));
    }
    let mut sum = F::zero();
    for (i, &a) in state.assignments.iter().enumerate() {
        if a == OUTLIER {
            continue;
        }
        let x = prepared.dense_sample(i);
        sum += kernel.bregman_divergence(&x, &state.clusters[a as usize].representative)?;
    }
    Ok(sum)
}

fn cos_f64(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

/// Representatives and supports of the live clusters ordered by descending
/// support (index tie-break): the view the monitors compare across
/// iterations.
fn monitor_view<F: Real>(state: &ClusterState<F>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let alive: Vec<&crate::state::Cluster<F>> =
        state.clusters.iter().filter(|c| c.alive).collect();
    let mut order: Vec<usize> = (0..alive.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        alive[b]
            .support
            .cmp(&alive[a].support)
            .then_with(|| a.cmp(&b))
    });
    let supports = order
        .iter()
        .map(|&i| alive[i].support as f64)
        .collect();
    let reps = order
        .iter()
        .map(|&i| {
            alive[i]
                .representative
                .iter()
                .map(|v| v.to_f64().unwrap())
                .collect()
        })
        .collect();
    (supports, reps)
}

/// Inter-iteration similarity monitors: cosine of the descending-sorted
/// support vectors and cosine of the support-aligned flattened
/// representative matrices, shorter sides zero-padded. Empty states yield
/// zeros.
pub fn monitor_similarities<F: Real>(
    prev: &ClusterState<F>,
    current: &ClusterState<F>,
) -> (f64, f64) {
    let (sup_a, reps_a) = monitor_view(prev);
    let (sup_b, reps_b) = monitor_view(current);
    if sup_a.is_empty() || sup_b.is_empty() {
        return (0.0, 0.0);
    }
    let k = sup_a.len().max(sup_b.len());
    let pad = |v: &[f64]| {
        let mut out = v.to_vec();
        out.resize(k, 0.0);
        out
    };
    let s_centroid = cos_f64(&pad(&sup_a), &pad(&sup_b));

    let dim = reps_a[0].len();
    let flatten = |reps: &[Vec<f64>]| {
        let mut out = Vec::with_capacity(k * dim);
        for r in reps {
            out.extend_from_slice(r);
        }
        out.resize(k * dim, 0.0);
        out
    };
    let s_structure = cos_f64(&flatten(&reps_a), &flatten(&reps_b));
    (s_centroid, s_structure)
}

/// Objective used for trace records, limit-cycle selection, and the
/// max-iterations fallback. DASS maximizes the potential; SF minimizes the
/// Bregman objective when the kernel has one and otherwise falls back to
/// the potential.
fn objective<F: Real>(
    prepared: &PreparedDataset<F>,
    state: &ClusterState<F>,
    kernel: Kernel,
    rule: AssignmentRule,
) -> (f64, bool) {
    match rule {
        AssignmentRule::Sf if kernel.has_bregman() => (
            lyapunov(prepared, state, kernel)
                .expect("bregman kernel checked")
                .to_f64()
                .unwrap(),
            false,
        ),
        _ => (potential_psi(prepared, state, kernel).to_f64().unwrap(), true),
    }
}

fn better(maximize: bool, candidate: f64, incumbent: f64) -> bool {
    if maximize {
        candidate > incumbent
    } else {
        candidate < incumbent
    }
}

struct IterationOutcome {
    edits: usize,
    scratch_bytes: usize,
}

fn run_iteration<F: Real>(
    prepared: &PreparedDataset<F>,
    state: &mut ClusterState<F>,
    config: &FascConfig<F>,
    kernel: Kernel,
) -> IterationOutcome {
    let outcome = assign_all(prepared, state, config, kernel);
    let mut edits = 0;
    if !config.disable_structural_edits {
        edits += promote_outliers(prepared, state, config, kernel, &outcome.best_scores);
    }
    recompute_representatives(prepared, state, kernel);
    if !config.disable_structural_edits {
        edits += merge_pass(prepared, state, kernel, config.tau_inter);
        edits += dissolve_small(state, config);
        renumber(state);
    }
    IterationOutcome {
        edits,
        scratch_bytes: outcome.scratch_bytes,
    }
}

/// Run the engine to termination on a dataset.
pub fn run<F: Real>(
    dataset: &Dataset<F>,
    config: &FascConfig<F>,
    kernel: Kernel,
) -> Result<RunResult<F>> {
    config.validate(kernel)?;
    let prepared = PreparedDataset::new(dataset, kernel)?;
    run_prepared(&prepared, config, kernel)
}

/// Run on an already prepared dataset (shared by callers that reuse the
/// canonical view across runs).
pub fn run_prepared<F: Real>(
    prepared: &PreparedDataset<F>,
    config: &FascConfig<F>,
    kernel: Kernel,
) -> Result<RunResult<F>> {
    config.validate(kernel)?;
    let mut state = initialize(prepared, config, kernel)?;
    let maximize = !(config.rule == AssignmentRule::Sf && kernel.has_bregman());

    let mut hash_history: HashMap<u64, usize> = HashMap::new();
    hash_history.insert(state_hash(&state), 0);

    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut iter_seconds: Vec<f64> = Vec::new();
    let (mut best_objective, _) = objective(prepared, &state, kernel, config.rule);
    let mut best_state = state.clone();
    let mut working_set = 0usize;

    let mut prev = state.clone();
    let mut t = 0usize;
    while t < config.max_iterations {
        t += 1;
        let started = Instant::now();
        state.iteration = t;
        let outcome = run_iteration(prepared, &mut state, config, kernel);
        working_set = working_set.max(outcome.scratch_bytes);

        let (s_centroid, s_structure) = monitor_similarities(&prev, &state);
        let (obj, _) = objective(prepared, &state, kernel, config.rule);
        let digest = state_hash(&state);
        iter_seconds.push(started.elapsed().as_secs_f64());
        trace.push(TraceRecord {
            t,
            k_active: state.active_k(),
            outlier_count: state.outlier_count(),
            s_centroid,
            s_structure,
            objective: obj,
            state_hash: format!("{digest:016x}"),
            structural_edits: outcome.edits,
        });
        if better(maximize, obj, best_objective) {
            best_objective = obj;
            best_state = state.clone();
        }

        let tol = config.tolerance.to_f64().unwrap();
        if outcome.edits == 0
            && (1.0 - s_centroid) < tol
            && (1.0 - s_structure) < tol
            && state.same_structure(&prev)
        {
            return Ok(finish(
                prepared,
                state,
                trace,
                Termination::Converged,
                obj,
                iter_seconds,
                working_set,
            ));
        }

        if let Some(&t_first) = hash_history.get(&digest) {
            let period = t - t_first;
            // replay the cycle once, tracking the best-objective state in it
            let mut cycle_best = (obj, state.clone());
            prev = state.clone();
            for _ in 1..period {
                t += 1;
                let started = Instant::now();
                state.iteration = t;
                let outcome = run_iteration(prepared, &mut state, config, kernel);
                let (s_centroid, s_structure) = monitor_similarities(&prev, &state);
                let (obj_e, _) = objective(prepared, &state, kernel, config.rule);
                let digest = state_hash(&state);
                iter_seconds.push(started.elapsed().as_secs_f64());
                trace.push(TraceRecord {
                    t,
                    k_active: state.active_k(),
                    outlier_count: state.outlier_count(),
                    s_centroid,
                    s_structure,
                    objective: obj_e,
                    state_hash: format!("{digest:016x}"),
                    structural_edits: outcome.edits,
                });
                if better(maximize, obj_e, cycle_best.0) {
                    cycle_best = (obj_e, state.clone());
                }
                prev = state.clone();
            }
            return Ok(finish(
                prepared,
                cycle_best.1,
                trace,
                Termination::LimitCycle { period },
                cycle_best.0,
                iter_seconds,
                working_set,
            ));
        }
        hash_history.insert(digest, t);
        prev = state.clone();
    }

    Ok(finish(
        prepared,
        best_state,
        trace,
        Termination::MaxIterations,
        best_objective,
        iter_seconds,
        working_set,
    ))
}

fn finish<F: Real>(
    prepared: &PreparedDataset<F>,
    state: ClusterState<F>,
    trace: Vec<TraceRecord>,
    termination: Termination,
    objective: f64,
    iter_seconds: Vec<f64>,
    scratch_bytes: usize,
) -> RunResult<F> {
    let reps: Vec<&[F]> = state
        .clusters
        .iter()
        .map(|c| c.representative.as_slice())
        .collect();
    let matrix_bytes = if reps.is_empty() {
        0
    } else {
        CentroidMatrix::from_representatives(prepared.kernel, prepared.dim, reps.into_iter())
            .bytes()
    };
    let iterations = trace.len();
    RunResult {
        state,
        ids: prepared.ids.clone(),
        trace,
        termination,
        objective,
        iterations,
        iter_seconds,
        working_set_bytes: scratch_bytes + matrix_bytes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::{Dataset, Spectrum};
    use crate::state::{CapacitySchedule, Cluster};
    use approx::assert_relative_eq;
    use rand::seq::SliceRandom;
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

    fn cluster(rep: Vec<f64>, acc: Vec<f64>, support: usize) -> Cluster<f64> {
        Cluster {
            representative: rep,
            accumulator: acc,
            support,
            born_iteration: 0,
            newly_promoted: false,
            alive: true,
        }
    }

    #[test]
    fn psi_of_singletons_is_k() {
        let ds = dataset_from(vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![3.0, 3.0]], 2);
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let clusters = (0..3)
            .map(|i| {
                let dense = prepared.dense_sample(i);
                let rep = Kernel::Cosine.frechet_mean(&[dense.as_slice()]).unwrap();
                cluster(rep, dense, 1)
            })
            .collect();
        let state = ClusterState {
            clusters,
            assignments: vec![0, 1, 2],
            iteration: 1,
        };
        let psi = potential_psi(&prepared, &state, Kernel::Cosine);
        assert_relative_eq!(psi, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn psi_counts_pair_bonus() {
        // one cluster of 3 identical unit vectors: 3 * 1 + C(3,2) = 6
        let ds = dataset_from(vec![vec![2.0, 0.0]; 3], 2);
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let state = ClusterState {
            clusters: vec![cluster(vec![1.0, 0.0], vec![3.0, 0.0], 3)],
            assignments: vec![0, 0, 0],
            iteration: 1,
        };
        let psi = potential_psi(&prepared, &state, Kernel::Cosine);
        assert_relative_eq!(psi, 6.0, epsilon = 1e-9);
    }

    #[test]
    fn psi_of_empty_state_is_zero() {
        let ds = dataset_from(vec![vec![1.0, 0.0]], 2);
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let state = ClusterState::<f64> {
            clusters: vec![],
            assignments: vec![OUTLIER],
            iteration: 0,
        };
        assert_eq!(potential_psi(&prepared, &state, Kernel::Cosine), 0.0);
    }

    #[test]
    fn lyapunov_values_and_error() {
        let ds = dataset_from(vec![vec![0.0, 0.0], vec![2.0, 0.0]], 2);
        let prepared = PreparedDataset::new(&ds, Kernel::SqEuclidean).unwrap();
        // centroid (1, 0): one member at 0, one at 2 -> divergences 1 + 1
        let state = ClusterState {
            clusters: vec![cluster(vec![1.0, 0.0], vec![2.0, 0.0], 2)],
            assignments: vec![0, 0],
            iteration: 1,
        };
        let l = lyapunov(&prepared, &state, Kernel::SqEuclidean).unwrap();
        assert_relative_eq!(l, 2.0, epsilon = 1e-12);

        // members equal to the centroid
        let state0 = ClusterState {
            clusters: vec![cluster(vec![0.0, 0.0], vec![0.0, 0.0], 1)],
            assignments: vec![0, OUTLIER],
            iteration: 1,
        };
        assert_eq!(
            lyapunov(&prepared, &state0, Kernel::SqEuclidean).unwrap(),
            0.0
        );

        assert!(lyapunov(&prepared, &state, Kernel::Cosine).is_err());
    }

    fn state_with_supports(supports: &[usize], dim: usize) -> ClusterState<f64> {
        ClusterState {
            clusters: supports
                .iter()
                .enumerate()
                .map(|(i, &s)| {
                    let mut rep = vec![0.0; dim];
                    rep[i % dim] = 1.0;
                    cluster(rep.clone(), rep, s)
                })
                .collect(),
            assignments: vec![],
            iteration: 0,
        }
    }

    #[test]
    fn monitors_on_identical_states() {
        let s = state_with_supports(&[4, 2, 1], 3);
        let (sc, ss) = monitor_similarities(&s, &s);
        assert_relative_eq!(sc, 1.0, epsilon = 1e-12);
        assert_relative_eq!(ss, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn monitor_sorts_supports() {
        let a = state_with_supports(&[3, 1], 2);
        let b = state_with_supports(&[1, 3], 2);
        let (sc, _) = monitor_similarities(&a, &b);
        assert_relative_eq!(sc, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn monitor_zero_pads_on_k_change() {
        let a = state_with_supports(&[4], 2);
        let b = state_with_supports(&[4, 4], 2);
        let (sc, _) = monitor_similarities(&a, &b);
        assert_relative_eq!(sc, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
    }

    #[test]
    fn monitor_empty_state_is_zero() {
        let a = state_with_supports(&[], 2);
        let b = state_with_supports(&[3], 2);
        assert_eq!(monitor_similarities(&a, &b), (0.0, 0.0));
    }

    fn two_bundles(n_per: usize, seed: u64) -> Dataset<f64> {
        // tight cones around two orthogonal directions in 6 dims
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for i in 0..(2 * n_per) {
            let base = if i % 2 == 0 { 0 } else { 3 };
            let mut row = vec![0.0; 6];
            row[base] = 10.0;
            row[base + 1] = rng.gen_range(0.0..1.0);
            row[base + 2] = rng.gen_range(0.0..1.0);
            rows.push(row);
        }
        dataset_from(rows, 6)
    }

    #[test]
    fn run_two_bundles_converges_to_two_clusters() {
        let ds = two_bundles(40, 5);
        let mut cfg = crate::state::FascConfig::<f64>::new(10);
        cfg.tau_intra = 0.7;
        cfg.tau_inter = 0.7;
        let result = run(&ds, &cfg, Kernel::Cosine).unwrap();
        assert_eq!(result.termination, Termination::Converged);
        assert_eq!(result.state.active_k(), 2);
        assert_eq!(result.state.outlier_count(), 0);

        // brute-force verification: the partition splits exactly by bundle
        let sets = result.partition_as_sets();
        let evens: Vec<u64> = (0..80u64).filter(|i| i % 2 == 0).collect();
        let odds: Vec<u64> = (0..80u64).filter(|i| i % 2 == 1).collect();
        assert!(sets.contains(&evens));
        assert!(sets.contains(&odds));
    }

    #[test]
    fn run_identical_vectors_single_cluster_fast() {
        let spectra = (0..16)
            .map(|i| Spectrum::new(i as u64, vec![(0u32, 1.5), (2u32, 0.5)], 4).unwrap())
            .collect();
        let ds = Dataset::new(4, spectra, None, None).unwrap();
        let cfg = crate::state::FascConfig::<f64>::new(8);
        let result = run(&ds, &cfg, Kernel::Cosine).unwrap();
        assert_eq!(result.termination, Termination::Converged);
        assert_eq!(result.state.active_k(), 1);
        assert!(result.iterations <= 3, "took {}", result.iterations);
    }

    /// Two-state oscillator: a heavy pair at 48 degrees with satellites at
    /// 88 and 2 degrees. Capacity 2 admits one satellite at a time; the
    /// merged representative tilts toward the absorbed satellite, which
    /// expels it and promotes the other on the next pass.
    pub(crate) fn oscillator_dataset() -> Dataset<f64> {
        let ang = |deg: f64| {
            let r = deg.to_radians();
            vec![r.cos(), r.sin()]
        };
        dataset_from(vec![ang(48.0), ang(48.0), ang(88.0), ang(2.0)], 2)
    }

    pub(crate) fn oscillator_config() -> crate::state::FascConfig<f64> {
        let mut cfg = crate::state::FascConfig::<f64>::new(2);
        cfg.capacity = CapacitySchedule::Constant { k_max: 2 };
        cfg.seed_budget = 0;
        cfg.tau_intra = 0.93;
        cfg.tau_inter = 0.05;
        cfg.min_support = 1;
        cfg.max_iterations = 60;
        cfg
    }

    #[test]
    fn run_oscillator_hits_limit_cycle_and_returns_best_state() {
        let ds = oscillator_dataset();
        let cfg = oscillator_config();
        let result = run(&ds, &cfg, Kernel::Cosine).unwrap();
        let period = match result.termination {
            Termination::LimitCycle { period } => period,
            other => panic!("expected a limit cycle, got {other:?}"),
        };
        assert!(period >= 2, "period {period}");

        // exhaustive check: the returned objective is the maximum over the
        // recorded cycle states (the replayed tail of the trace)
        let tail: Vec<f64> = result.trace[result.trace.len() - period..]
            .iter()
            .map(|r| r.objective)
            .collect();
        let max_tail = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(result.objective, max_tail, epsilon = 1e-12);

        // the better state holds the heavy pair plus the 88-degree satellite
        let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();
        let psi = potential_psi(&prepared, &result.state, Kernel::Cosine);
        assert_relative_eq!(psi, result.objective, epsilon = 1e-12);
        let sets = result.partition_as_sets();
        assert!(sets.contains(&vec![0, 1, 2]), "partition {sets:?}");
    }

    #[test]
    fn run_permutation_invariance_small() {
        let ds = two_bundles(25, 8);
        let mut cfg = crate::state::FascConfig::<f64>::new(6);
        cfg.tau_intra = 0.7;
        cfg.tau_inter = 0.7;
        let base = run(&ds, &cfg, Kernel::Cosine).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..3 {
            let mut perm: Vec<usize> = (0..ds.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled = ds.permuted(&perm);
            let got = run(&shuffled, &cfg, Kernel::Cosine).unwrap();
            assert_eq!(base.partition_as_sets(), got.partition_as_sets());
            assert_eq!(base.trace, got.trace);
        }
    }

    #[test]
    fn converged_runs_satisfy_fixed_point_properties() {
        for seed in [1u64, 2, 3] {
            let ds = two_bundles(30, seed);
            let mut cfg = crate::state::FascConfig::<f64>::new(8);
            cfg.tau_intra = 0.7;
            cfg.tau_inter = 0.7;
            let result = run(&ds, &cfg, Kernel::Cosine).unwrap();
            assert_eq!(result.termination, Termination::Converged);
            let prepared = PreparedDataset::new(&ds, Kernel::Cosine).unwrap();

            // compactness against the final representatives, exact
            for (i, &a) in result.state.assignments.iter().enumerate() {
                if a != OUTLIER {
                    let x = prepared.dense_sample(i);
                    let s = crate::kernels::cosine(
                        &x,
                        &result.state.clusters[a as usize].representative,
                    )
                    .unwrap();
                    assert!(s >= cfg.tau_intra, "sample {i} at {s}");
                }
            }
            // separation, exact
            let live: Vec<&Cluster<f64>> =
                result.state.clusters.iter().filter(|c| c.alive).collect();
            for i in 0..live.len() {
                for j in i + 1..live.len() {
                    let s = crate::kernels::cosine(
                        &live[i].representative,
                        &live[j].representative,
                    )
                    .unwrap();
                    assert!(s < cfg.tau_inter, "pair ({i},{j}) at {s}");
                }
            }
        }
    }

    #[test]
    fn psi_stays_bounded_along_the_trace() {
        let ds = two_bundles(20, 9);
        let n = ds.len() as f64;
        let mut cfg = crate::state::FascConfig::<f64>::new(6);
        cfg.tau_intra = 0.7;
        cfg.tau_inter = 0.7;
        let result = run(&ds, &cfg, Kernel::Cosine).unwrap();
        let bound = n + n * (n - 1.0) / 2.0; // N * sigma_max + C(N, 2)
        for rec in &result.trace {
            assert!(rec.objective <= bound + 1e-9, "t={} psi={}", rec.t, rec.objective);
        }
    }

    #[test]
    fn max_iterations_returns_best_objective_state() {
        let ds = oscillator_dataset();
        let mut cfg = oscillator_config();
        // stop before the cycle detector has a chance to fire twice
        cfg.max_iterations = 3;
        let result = run(&ds, &cfg, Kernel::Cosine).unwrap();
        if result.termination == Termination::MaxIterations {
            let best_traced = result
                .trace
                .iter()
                .map(|r| r.objective)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(result.objective >= best_traced - 1e-12);
        }
    }
}
