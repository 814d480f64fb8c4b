//! External validity metrics for labeled benchmarks: ARI, NMI, the
//! majority-vote mapping protocol, and blending-pair analysis.
//!
//! Provisional outliers (`-1`) are treated as one extra predicted class in
//! the pairwise metrics. The labeled evaluation report carries two flavors
//! of ARI/NMI: over the majority-vote mapped labels of assigned samples
//! only (the core-manifold protocol the headline numbers use) and over all
//! samples with the outlier penalty class included.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{FascError, Result};
use crate::kernels::Kernel;
use crate::state::{ClusterState, OUTLIER};
use crate::Real;

/// Contingency counts between two labelings, with marginals.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    pub n: usize,
    /// Distinct labels of the first labeling, ascending.
    pub row_keys: Vec<i64>,
    /// Distinct labels of the second labeling, ascending.
    pub col_keys: Vec<i64>,
    /// Dense counts, row-major `rows x cols`.
    pub counts: Vec<u64>,
    pub row_sums: Vec<u64>,
    pub col_sums: Vec<u64>,
}

impl ContingencyTable {
    pub fn build(a: &[i64], b: &[i64]) -> Result<ContingencyTable> {
        if a.len() != b.len() {
            return Err(FascError::DimensionMismatch {
                left: a.len(),
                right: b.len(),
            });
        }
        let mut row_keys: Vec<i64> = a.to_vec();
        row_keys.sort_unstable();
        row_keys.dedup();
        let mut col_keys: Vec<i64> = b.to_vec();
        col_keys.sort_unstable();
        col_keys.dedup();
        let row_of: HashMap<i64, usize> =
            row_keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let col_of: HashMap<i64, usize> =
            col_keys.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        let (rows, cols) = (row_keys.len(), col_keys.len());
        let mut counts = vec![0u64; rows * cols];
        for (&x, &y) in a.iter().zip(b.iter()) {
            counts[row_of[&x] * cols + col_of[&y]] += 1;
        }
        let mut row_sums = vec![0u64; rows];
        let mut col_sums = vec![0u64; cols];
        for r in 0..rows {
            for c in 0..cols {
                row_sums[r] += counts[r * cols + c];
                col_sums[c] += counts[r * cols + c];
            }
        }
        Ok(ContingencyTable {
            n: a.len(),
            row_keys,
            col_keys,
            counts,
            row_sums,
            col_sums,
        })
    }
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Chance-corrected pairwise agreement between two labelings. 1 for
/// identical partitions, about 0 for independent ones; may go negative.
pub fn adjusted_rand_index(truth: &[i64], predicted: &[i64]) -> Result<f64> {
    let table = ContingencyTable::build(truth, predicted)?;
    if table.n < 2 {
        return Ok(1.0);
    }
    let sum_cells: f64 = table.counts.iter().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = table.row_sums.iter().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = table.col_sums.iter().map(|&c| comb2(c)).sum();
    let total = comb2(table.n as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        // both partitions trivial; identical iff the cell structure is diagonal
        return Ok(if sum_cells == max_index { 1.0 } else { 0.0 });
    }
    Ok((sum_cells - expected) / denom)
}

/// `2 I(Y; C) / (H(Y) + H(C))` in [0, 1]. When either labeling has zero
/// entropy the formula is 0/0; the convention here is 1 for identical
/// partitions and 0 otherwise.
pub fn normalized_mutual_information(truth: &[i64], predicted: &[i64]) -> Result<f64> {
    let table = ContingencyTable::build(truth, predicted)?;
    if table.n == 0 {
        return Ok(1.0);
    }
    let n = table.n as f64;
    let h = |sums: &[u64]| -> f64 {
        sums.iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_truth = h(&table.row_sums);
    let h_pred = h(&table.col_sums);
    if h_truth == 0.0 || h_pred == 0.0 {
        let identical = partitions_identical(truth, predicted);
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    let cols = table.col_keys.len();
    let mut mi = 0.0;
    for r in 0..table.row_keys.len() {
        for c in 0..cols {
            let count = table.counts[r * cols + c];
            if count == 0 {
                continue;
            }
            let pij = count as f64 / n;
            let ratio = (count as f64 * n) / (table.row_sums[r] as f64 * table.col_sums[c] as f64);
            mi += pij * ratio.ln();
        }
    }
    Ok(2.0 * mi / (h_truth + h_pred))
}

fn partitions_identical(a: &[i64], b: &[i64]) -> bool {
    // identical as partitions, up to label names
    let mut fwd: HashMap<i64, i64> = HashMap::new();
    let mut bwd: HashMap<i64, i64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b.iter()) {
        if *fwd.entry(x).or_insert(y) != y || *bwd.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Majority-vote mapping of clusters onto ground-truth classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MappedPartition {
    /// Majority class per cluster index (ties to the smaller class id).
    pub cluster_to_class: Vec<i64>,
    /// Per-sample mapped labels; outliers carry the penalty class -1.
    pub mapped_labels: Vec<i64>,
    /// Fraction of assigned samples whose majority-mapped label matches the
    /// truth ("core purity").
    pub core_purity: f64,
    /// Fraction over all samples, outliers counted wrong.
    pub all_accuracy: f64,
    pub assigned: usize,
    pub correct: usize,
    /// Set when there were no clusters to map (purity reported as 0).
    pub undefined: bool,
}

/// Map each cluster to its majority ground-truth label and score the
/// result. `num_clusters` covers clusters that may have no members.
pub fn majority_vote_map(
    true_labels: &[u32],
    assignments: &[i32],
    num_clusters: usize,
) -> Result<MappedPartition> {
    if true_labels.len() != assignments.len() {
        return Err(FascError::DimensionMismatch {
            left: true_labels.len(),
            right: assignments.len(),
        });
    }
    let n = true_labels.len();
    let mut votes: Vec<HashMap<u32, u64>> = vec![HashMap::new(); num_clusters];
    for (&label, &a) in true_labels.iter().zip(assignments.iter()) {
        if a != OUTLIER {
            *votes[a as usize].entry(label).or_insert(0) += 1;
        }
    }
    let cluster_to_class: Vec<i64> = votes
        .iter()
        .map(|v| {
            v.iter()
                .map(|(&class, &count)| (count, std::cmp::Reverse(class)))
                .max()
                .map(|(_, std::cmp::Reverse(class))| class as i64)
                .unwrap_or(-1)
        })
        .collect();
    let mut assigned = 0usize;
    let mut correct = 0usize;
    let mapped_labels: Vec<i64> = true_labels
        .iter()
        .zip(assignments.iter())
        .map(|(&label, &a)| {
            if a == OUTLIER {
                -1
            } else {
                assigned += 1;
                let mapped = cluster_to_class[a as usize];
                if mapped == label as i64 {
                    correct += 1;
                }
                mapped
            }
        })
        .collect();
    let undefined = num_clusters == 0;
    Ok(MappedPartition {
        cluster_to_class,
        mapped_labels,
        core_purity: if assigned > 0 {
            correct as f64 / assigned as f64
        } else {
            0.0
        },
        all_accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
        assigned,
        correct,
        undefined,
    })
}

/// Centroid pairs at or above a similarity threshold, plus the data behind
/// the blending figure: the full pairwise similarity matrix and per-cluster
/// population fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlendingReport {
    /// `(j, k, similarity)` with `j < k`, every pair at or above threshold.
    pub pairs: Vec<(usize, usize, f64)>,
    /// Row-major `k x k` similarity matrix (diagonal 1-ish, by the kernel).
    pub similarity: Vec<f64>,
    pub k: usize,
    /// Cluster support over the total sample count.
    pub population_fractions: Vec<f64>,
}

pub fn blending_pairs<F: Real>(
    state: &ClusterState<F>,
    kernel: Kernel,
    threshold: F,
) -> BlendingReport {
    let live: Vec<&crate::state::Cluster<F>> =
        state.clusters.iter().filter(|c| c.alive).collect();
    let k = live.len();
    let n: usize = live.iter().map(|c| c.support).sum::<usize>() + state.outlier_count();
    let mut similarity = vec![0.0f64; k * k];
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let s = kernel
                .similarity(&live[i].representative, &live[j].representative)
                .expect("live representatives share one dimension")
                .to_f64()
                .unwrap();
            similarity[i * k + j] = s;
            if j > i && s >= threshold.to_f64().unwrap() {
                pairs.push((i, j, s));
            }
        }
    }
    let population_fractions = live
        .iter()
        .map(|c| {
            if n > 0 {
                c.support as f64 / n as f64
            } else {
                0.0
            }
        })
        .collect();
    BlendingReport {
        pairs,
        similarity,
        k,
        population_fractions,
    }
}

/// The metrics-report JSON emitted by the evaluation command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// ARI of mapped labels vs truth over assigned samples (core protocol).
    pub ari: f64,
    /// NMI of mapped labels vs truth over assigned samples.
    pub nmi: f64,
    /// ARI over all samples, outliers as one extra predicted class.
    pub ari_all: f64,
    /// NMI over all samples, outliers as one extra predicted class.
    pub nmi_all: f64,
    pub core_purity: f64,
    pub all_accuracy: f64,
    #[serde(rename = "K_active")]
    pub k_active: usize,
    pub outlier_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blending_pairs: Option<Vec<(usize, usize, f64)>>,
    pub purity_undefined: bool,
}

/// Score a labeled run: majority-vote mapping, core and penalty-class
/// ARI/NMI, purity, and outlier bookkeeping.
pub fn evaluate_labeled(
    true_labels: &[u32],
    assignments: &[i32],
    num_clusters: usize,
) -> Result<EvaluationReport> {
    let mapping = majority_vote_map(true_labels, assignments, num_clusters)?;
    let n = true_labels.len();

    // core protocol: assigned samples only, cluster ids replaced by their
    // majority class
    let mut core_truth = Vec::with_capacity(mapping.assigned);
    let mut core_mapped = Vec::with_capacity(mapping.assigned);
    for (i, &a) in assignments.iter().enumerate() {
        if a != OUTLIER {
            core_truth.push(true_labels[i] as i64);
            core_mapped.push(mapping.mapped_labels[i]);
        }
    }
    let (ari, nmi) = if core_truth.is_empty() {
        (0.0, 0.0)
    } else {
        (
            adjusted_rand_index(&core_truth, &core_mapped)?,
            normalized_mutual_information(&core_truth, &core_mapped)?,
        )
    };

    // penalty-class variant: everything scored, raw cluster ids, outliers
    // as their own predicted class
    let all_truth: Vec<i64> = true_labels.iter().map(|&l| l as i64).collect();
    let all_pred: Vec<i64> = assignments.iter().map(|&a| a as i64).collect();
    let ari_all = adjusted_rand_index(&all_truth, &all_pred)?;
    let nmi_all = normalized_mutual_information(&all_truth, &all_pred)?;

    let outliers = assignments.iter().filter(|&&a| a == OUTLIER).count();
    Ok(EvaluationReport {
        ari,
        nmi,
        ari_all,
        nmi_all,
        core_purity: mapping.core_purity,
        all_accuracy: mapping.all_accuracy,
        k_active: num_clusters,
        outlier_fraction: if n > 0 { outliers as f64 / n as f64 } else { 0.0 },
        blending_pairs: None,
        purity_undefined: mapping.undefined,
    })
}
