//! Phase 2: consolidation and structural edits.
//!
//! Representatives are recomputed from full memberships, overlapping
//! clusters merge (anchors in descending support, repeated to a fixed point
//! so no live pair stays above `tau_inter`), under-supported clusters
//! dissolve back into the outlier pool, and indices are renumbered
//! consecutively. Structural edits are single-threaded; accumulation visits
//! members in canonical order so results do not depend on anything but the
//! state.

use crate::kernels::{Kernel, PreparedDataset};
use crate::state::{ClusterState, FascConfig, OUTLIER};
use crate::Real;

/// Clusters absorbed into one anchor in a single merge step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergePlan {
    pub anchor: usize,
    pub absorbed: Vec<usize>,
}

/// Derive a representative from the member accumulator under the kernel's
/// geometry. Manhattan has no accumulable form and is handled from member
/// lists by the callers.
fn representative_from_accumulator<F: Real>(
    kernel: Kernel,
    accumulator: &[F],
    support: usize,
) -> Vec<F> {
    let mut rep = accumulator.to_vec();
    match kernel {
        Kernel::Cosine => crate::kernels::normalize_slice(&mut rep),
        Kernel::DualCosine { split_index } => {
            crate::kernels::normalize_slice(&mut rep[..split_index]);
            crate::kernels::normalize_slice(&mut rep[split_index..]);
        }
        Kernel::SqEuclidean => {
            let n = F::from_usize(support).unwrap();
            if support > 0 {
                for v in rep.iter_mut() {
                    *v = *v / n;
                }
            }
        }
        Kernel::Manhattan => unreachable!("manhattan representatives come from member lists"),
    }
    rep
}

fn manhattan_representative<F: Real>(
    prepared: &PreparedDataset<F>,
    members: &[usize],
) -> Vec<F> {
    // coordinate-wise lower median over sparse members: zeros are implicit
    let dim = prepared.dim;
    let n = members.len();
    let mut nonzeros: Vec<Vec<F>> = vec![Vec::new(); dim];
    for &i in members {
        for &(d, v) in &prepared.samples[i].entries {
            nonzeros[d as usize].push(v);
        }
    }
    let mut rep = vec![F::zero(); dim];
    for (d, col) in nonzeros.iter_mut().enumerate() {
        let zeros = n - col.len();
        let pick = (n - 1) / 2; // lower median
        if pick >= zeros {
            col.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            rep[d] = col[pick - zeros];
        }
    }
    rep
}

/// Rebuild every cluster's accumulator, support, and representative from the
/// final Phase 1 assignments. Emptied clusters keep their old representative
/// and drop to support 0; dissolution removes them later.
pub fn recompute_representatives<F: Real>(
    prepared: &PreparedDataset<F>,
    state: &mut ClusterState<F>,
    kernel: Kernel,
) {
    let dim = prepared.dim;
    for c in state.clusters.iter_mut().filter(|c| c.alive) {
        c.accumulator.clear();
        c.accumulator.resize(dim, F::zero());
        c.support = 0;
    }
    for (i, &a) in state.assignments.iter().enumerate() {
        if a == OUTLIER {
            continue;
        }
        let c = &mut state.clusters[a as usize];
        for &(d, v) in &prepared.samples[i].entries {
            c.accumulator[d as usize] += v;
        }
        c.support += 1;
    }
    if kernel == Kernel::Manhattan {
        let members = state.memberships();
        for (j, c) in state.clusters.iter_mut().enumerate() {
            if c.alive && c.support > 0 {
                c.representative = manhattan_representative(prepared, &members[j]);
            }
        }
    } else {
        for c in state.clusters.iter_mut() {
            if c.alive && c.support > 0 {
                c.representative = representative_from_accumulator(kernel, &c.accumulator, c.support);
            }
        }
    }
}

/// Merge every live pair at or above `tau_inter`, anchors in descending
/// support (ties to the lower index), repeating whole passes until no pair
/// qualifies. Absorbed clusters die and their members are reassigned to the
/// final surviving anchor. Returns the number of clusters absorbed.
pub fn merge_pass<F: Real>(
    prepared: &PreparedDataset<F>,
    state: &mut ClusterState<F>,
    kernel: Kernel,
    tau_inter: F,
) -> usize {
    let k = state.clusters.len();
    if k < 2 {
        return 0;
    }
    // members only maintained where the representative is not accumulable
    let mut members: Vec<Vec<usize>> = if kernel == Kernel::Manhattan {
        state.memberships()
    } else {
        Vec::new()
    };
    let mut root: Vec<usize> = (0..k).collect();
    let mut absorbed_total = 0;

    loop {
        let mut order: Vec<usize> = (0..k).filter(|&j| state.clusters[j].alive).collect();
        order.sort_unstable_by(|&a, &b| {
            state.clusters[b]
                .support
                .cmp(&state.clusters[a].support)
                .then_with(|| a.cmp(&b))
        });
        let mut merged_this_pass = 0;
        for &anchor in &order {
            if !state.clusters[anchor].alive {
                continue;
            }
            let matches: Vec<usize> = (0..k)
                .filter(|&j| j != anchor && state.clusters[j].alive)
                .filter(|&j| {
                    kernel
                        .similarity(
                            &state.clusters[anchor].representative,
                            &state.clusters[j].representative,
                        )
                        .expect("representatives share the dataset dimension")
                        >= tau_inter
                })
                .collect();
            if matches.is_empty() {
                continue;
            }
            for &j in &matches {
                let (acc, support) = {
                    let c = &state.clusters[j];
                    (c.accumulator.clone(), c.support)
                };
                let a = &mut state.clusters[anchor];
                for (dst, src) in a.accumulator.iter_mut().zip(acc.iter()) {
                    *dst += *src;
                }
                a.support += support;
                state.clusters[j].alive = false;
                root[j] = anchor;
                if kernel == Kernel::Manhattan {
                    let moved = std::mem::take(&mut members[j]);
                    members[anchor].extend(moved);
                }
            }
            let a = &state.clusters[anchor];
            state.clusters[anchor].representative = if kernel == Kernel::Manhattan {
                members[anchor].sort_unstable();
                manhattan_representative(prepared, &members[anchor])
            } else {
                representative_from_accumulator(kernel, &a.accumulator, a.support)
            };
            merged_this_pass += matches.len();
        }
        absorbed_total += merged_this_pass;
        if merged_this_pass == 0 {
            break;
        }
    }

    if absorbed_total > 0 {
        // resolve absorption chains, then remap memberships in one pass
        let resolve = |mut j: usize| {
            while root[j] != j {
                j = root[j];
            }
            j
        };
        for a in state.assignments.iter_mut() {
            if *a != OUTLIER {
                *a = resolve(*a as usize) as i32;
            }
        }
    }
    absorbed_total
}

/// Dissolve live clusters below the minimum support, newly promoted
/// singletons exempt; their members revert to the outlier pool. Clears the
/// promotion flags for the next iteration. Returns the number dissolved.
pub fn dissolve_small<F: Real>(state: &mut ClusterState<F>, config: &FascConfig<F>) -> usize {
    let mut dissolved = 0;
    let mut dead: Vec<bool> = vec![false; state.clusters.len()];
    for (j, c) in state.clusters.iter_mut().enumerate() {
        if c.alive && !c.newly_promoted && c.support < config.min_support {
            c.alive = false;
            dead[j] = true;
            dissolved += 1;
        }
    }
    if dissolved > 0 {
        for a in state.assignments.iter_mut() {
            if *a != OUTLIER && dead[*a as usize] {
                *a = OUTLIER;
            }
        }
    }
    for c in state.clusters.iter_mut() {
        if c.alive {
            c.newly_promoted = false;
        }
    }
    dissolved
}

/// Drop dead clusters and reindex the survivors 0..K-1 preserving relative
/// order; the assignment vector is remapped in place. The partition as a
/// set of sample sets is unchanged.
pub fn renumber<F: Real>(state: &mut ClusterState<F>) {
    let mut map: Vec<i32> = Vec::with_capacity(state.clusters.len());
    let mut next = 0i32;
    for c in &state.clusters {
        if c.alive {
            map.push(next);
            next += 1;
        } else {
            map.push(OUTLIER);
        }
    }
    if next as usize == state.clusters.len() {
        return; // already consecutive
    }
    for a in state.assignments.iter_mut() {
        if *a != OUTLIER {
            debug_assert!(map[*a as usize] != OUTLIER, "assignment points at dead cluster");
            *a = map[*a as usize];
        }
    }
    state.clusters.retain(|c| c.alive);
}
