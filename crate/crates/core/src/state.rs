//! Clustering state: clusters, assignments, configuration, deterministic
//! stratified seeding, the canonical state digest, and checkpoint I/O.
//!
//! The assignment vector is indexed in canonical sample order (the order the
//! engine iterates in); `-1` marks a provisional outlier. Between iterations
//! every cluster is alive and indices are consecutive; the `alive` flag only
//! goes false transiently inside Phase 2, until `renumber` compacts.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::{quantize, StableHasher};
use crate::error::{FascError, Result};
use crate::kernels::{Kernel, PreparedDataset};
use crate::{real, Real};

/// Representative quantization grid for the state digest. Coarse enough to
/// absorb float noise across deterministic reductions, fine enough to see
/// real drift.
const HASH_QUANTUM: f64 = 1e-6;

pub const OUTLIER: i32 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<F> {
    /// Representative in prepared-sample space, dense over D.
    pub representative: Vec<F>,
    /// Member sum in prepared space; representatives derive from it for the
    /// accumulable kernels, and merges add accumulators instead of touching
    /// memberships twice.
    pub accumulator: Vec<F>,
    /// Member count as of the last consolidation (frozen during Phase 1).
    pub support: usize,
    pub born_iteration: usize,
    /// Newly promoted singletons are exempt from the next dissolution.
    pub newly_promoted: bool,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState<F> {
    pub clusters: Vec<Cluster<F>>,
    /// Per-sample cluster index in canonical order; -1 = provisional outlier.
    pub assignments: Vec<i32>,
    pub iteration: usize,
}

impl<F: Real> ClusterState<F> {
    pub fn active_k(&self) -> usize {
        self.clusters.iter().filter(|c| c.alive).count()
    }

    pub fn outlier_count(&self) -> usize {
        self.assignments.iter().filter(|&&a| a == OUTLIER).count()
    }

    /// Member indices per cluster, each list ascending (canonical order).
    pub fn memberships(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.clusters.len()];
        for (i, &a) in self.assignments.iter().enumerate() {
            if a != OUTLIER {
                out[a as usize].push(i);
            }
        }
        out
    }

    /// Exact structural equality on the parts that drive the dynamics:
    /// supports and representative values of live clusters, in order.
    pub fn same_structure(&self, other: &ClusterState<F>) -> bool {
        let a: Vec<&Cluster<F>> = self.clusters.iter().filter(|c| c.alive).collect();
        let b: Vec<&Cluster<F>> = other.clusters.iter().filter(|c| c.alive).collect();
        a.len() == b.len()
            && a.iter().zip(b.iter()).all(|(x, y)| {
                x.support == y.support && x.representative == y.representative
            })
    }
}

/// Assignment rule for Phase 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentRule {
    /// Best similarity alone (`sf`).
    Sf,
    /// Similarity plus a support-density bonus (`dass`).
    Dass,
}

impl AssignmentRule {
    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "sf" => Ok(AssignmentRule::Sf),
            "dass" => Ok(AssignmentRule::Dass),
            other => Err(FascError::config(format!("unknown rule: {other:?}"))),
        }
    }
}

/// Non-decreasing support weight `phi` in the density-augmented rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportWeight {
    Linear,
    Log,
    Const,
}

impl SupportWeight {
    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(SupportWeight::Linear),
            "log" => Ok(SupportWeight::Log),
            "const" => Ok(SupportWeight::Const),
            other => Err(FascError::config(format!("unknown phi: {other:?}"))),
        }
    }

    pub fn eval<F: Real>(&self, support: usize) -> F {
        match self {
            SupportWeight::Linear => F::from_usize(support).unwrap(),
            SupportWeight::Log => F::from_usize(support).unwrap().ln_1p(),
            SupportWeight::Const => F::one(),
        }
    }
}

/// Active-cluster capacity per iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CapacitySchedule {
    Constant { k_max: usize },
    /// Explicit per-iteration caps; the last value repeats.
    PerIteration { caps: Vec<usize> },
}

impl CapacitySchedule {
    pub fn k_at(&self, iteration: usize) -> usize {
        match self {
            CapacitySchedule::Constant { k_max } => *k_max,
            CapacitySchedule::PerIteration { caps } => {
                caps[iteration.min(caps.len().saturating_sub(1))]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Serialize + serde::de::DeserializeOwned")]
pub struct FascConfig<F> {
    /// Assignment acceptance threshold.
    pub tau_intra: F,
    /// Merge threshold on representative pairs.
    pub tau_inter: F,
    /// Minimum support: smaller clusters dissolve (newly promoted exempt).
    pub min_support: usize,
    pub capacity: CapacitySchedule,
    pub rule: AssignmentRule,
    /// Density weight in the DASS rule.
    pub lambda: F,
    pub support_weight: SupportWeight,
    /// Seed cluster count at initialization.
    pub seed_budget: usize,
    pub batch_size: usize,
    pub max_iterations: usize,
    /// Convergence tolerance on the inter-iteration monitors.
    pub tolerance: F,
    /// Used only by baselines and synthetic data; the engine itself draws no
    /// random numbers.
    pub rng_seed: u64,
    /// Diagnostic switch: skip promotion/merge/dissolve so assign/update
    /// passes can be observed alone.
    #[serde(default)]
    pub disable_structural_edits: bool,
}

impl<F: Real> FascConfig<F> {
    /// Defaults: thresholds 0.8, DASS with linear phi and lambda 1, Z = 1,
    /// seed budget min(k_max, 8), batch 4096, 200 iterations, tol 1e-3.
    pub fn new(k_max: usize) -> Self {
        FascConfig {
            tau_intra: real(0.8),
            tau_inter: real(0.8),
            min_support: 1,
            capacity: CapacitySchedule::Constant { k_max },
            rule: AssignmentRule::Dass,
            lambda: F::one(),
            support_weight: SupportWeight::Linear,
            seed_budget: k_max.min(8),
            batch_size: 4096,
            max_iterations: 200,
            tolerance: real(1e-3),
            rng_seed: 0,
            disable_structural_edits: false,
        }
    }

    pub fn validate(&self, kernel: Kernel) -> Result<()> {
        if kernel.is_bounded() {
            for (name, tau) in [("tau_intra", self.tau_intra), ("tau_inter", self.tau_inter)] {
                if !(tau > F::zero() && tau <= F::one()) {
                    return Err(FascError::config(format!(
                        "{name} must be in (0, 1] for bounded kernel {kernel}, got {tau}"
                    )));
                }
            }
        } else {
            for (name, tau) in [("tau_intra", self.tau_intra), ("tau_inter", self.tau_inter)] {
                if !tau.is_finite() {
                    return Err(FascError::config(format!("{name} must be finite, got {tau}")));
                }
            }
        }
        if self.min_support < 1 {
            return Err(FascError::config("min_support must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(FascError::config("batch_size must be >= 1"));
        }
        if self.max_iterations < 1 {
            return Err(FascError::config("max_iterations must be >= 1"));
        }
        if !(self.lambda >= F::zero() && self.lambda.is_finite()) {
            return Err(FascError::config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.tolerance >= F::zero()) {
            return Err(FascError::config("tolerance must be >= 0"));
        }
        let k0 = self.capacity.k_at(0);
        if self.seed_budget > k0 {
            return Err(FascError::config(format!(
                "seed_budget {} exceeds initial capacity {k0}",
                self.seed_budget
            )));
        }
        Ok(())
    }
}

/// Representative of a single-member cluster, via the kernel's Fréchet rule.
pub(crate) fn singleton_cluster<F: Real>(
    kernel: Kernel,
    prepared: &PreparedDataset<F>,
    sample_idx: usize,
    born_iteration: usize,
) -> Cluster<F> {
    let dense = prepared.dense_sample(sample_idx);
    let representative = kernel
        .frechet_mean(&[dense.as_slice()])
        .expect("singleton membership is non-empty");
    Cluster {
        representative,
        accumulator: dense,
        support: 1,
        born_iteration,
        newly_promoted: true,
        alive: true,
    }
}

/// Stratified deterministic seeding: `seed_budget` singletons taken at
/// evenly spaced positions of the canonical order, everything else an
/// outlier. With a zero budget the state starts empty and grows by
/// promotion.
pub fn initialize<F: Real>(
    prepared: &PreparedDataset<F>,
    config: &FascConfig<F>,
    kernel: Kernel,
) -> Result<ClusterState<F>> {
    let n = prepared.len();
    if n == 0 {
        return Err(FascError::config("empty dataset"));
    }
    let s0 = config.seed_budget.min(n);
    let mut clusters = Vec::with_capacity(s0);
    let mut assignments = vec![OUTLIER; n];
    for k in 0..s0 {
        let pos = k * n / s0.max(1);
        clusters.push(singleton_cluster(kernel, prepared, pos, 0));
        assignments[pos] = k as i32;
    }
    Ok(ClusterState {
        clusters,
        assignments,
        iteration: 0,
    })
}

/// 64-bit digest of the structural state: the support vector sorted
/// descending and the representatives quantized at 1e-6, both visited in the
/// sorted-support permutation (index tie-break). Equal states hash equal;
/// the limit-cycle guard keys on recurrence of this value.
pub fn state_hash<F: Real>(state: &ClusterState<F>) -> u64 {
    let mut alive: Vec<&Cluster<F>> = state.clusters.iter().filter(|c| c.alive).collect();
    let mut order: Vec<usize> = (0..alive.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        alive[b]
            .support
            .cmp(&alive[a].support)
            .then_with(|| a.cmp(&b))
    });
    let mut h = StableHasher::new();
    h.write_u64(alive.len() as u64);
    for &i in &order {
        h.write_u64(alive[i].support as u64);
    }
    for &i in &order {
        for &v in &alive[i].representative {
            h.write_i128(quantize(v.to_f64().unwrap(), HASH_QUANTUM));
        }
    }
    alive.clear();
    h.finish()
}

// ---------------------------------------------------------------------------
// Checkpoint I/O
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    t: usize,
    k: usize,
    d: usize,
    n: usize,
    kernel: String,
    split_index: Option<usize>,
    config: FascConfig<f64>,
    supports: Vec<usize>,
    born: Vec<usize>,
    newly_promoted: Vec<bool>,
}

/// Everything a checkpoint restores: the state, the kernel, the config, and
/// the id layout of the assignment vector.
#[derive(Debug)]
pub struct Checkpoint<F> {
    pub state: ClusterState<F>,
    pub kernel: Kernel,
    pub config: FascConfig<f64>,
    pub dim: usize,
    pub ids: Vec<u64>,
}

fn config_to_f64<F: Real>(c: &FascConfig<F>) -> FascConfig<f64> {
    FascConfig {
        tau_intra: c.tau_intra.to_f64().unwrap(),
        tau_inter: c.tau_inter.to_f64().unwrap(),
        min_support: c.min_support,
        capacity: c.capacity.clone(),
        rule: c.rule,
        lambda: c.lambda.to_f64().unwrap(),
        support_weight: c.support_weight,
        seed_budget: c.seed_budget,
        batch_size: c.batch_size,
        max_iterations: c.max_iterations,
        tolerance: c.tolerance.to_f64().unwrap(),
        rng_seed: c.rng_seed,
        disable_structural_edits: c.disable_structural_edits,
    }
}

/// JSON header line, then little-endian binary sections: representatives
/// (K*D f64), accumulators (K*D f64), assignments (N i32), ids (N u64).
/// Floats are stored bit-exactly, so save/load round-trips exactly.
pub fn save_checkpoint<F: Real>(
    path: impl AsRef<Path>,
    state: &ClusterState<F>,
    kernel: Kernel,
    config: &FascConfig<F>,
    dim: usize,
    ids: &[u64],
) -> Result<()> {
    let alive: Vec<&Cluster<F>> = state.clusters.iter().filter(|c| c.alive).collect();
    let header = CheckpointHeader {
        version: 1,
        t: state.iteration,
        k: alive.len(),
        d: dim,
        n: state.assignments.len(),
        kernel: kernel.to_string(),
        split_index: match kernel {
            Kernel::DualCosine { split_index } => Some(split_index),
            _ => None,
        },
        config: config_to_f64(config),
        supports: alive.iter().map(|c| c.support).collect(),
        born: alive.iter().map(|c| c.born_iteration).collect(),
        newly_promoted: alive.iter().map(|c| c.newly_promoted).collect(),
    };
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, &header).map_err(|e| FascError::Invariant(e.to_string()))?;
    w.write_all(b"\n")?;
    for c in &alive {
        for &v in &c.representative {
            w.write_all(&v.to_f64().unwrap().to_le_bytes())?;
        }
    }
    for c in &alive {
        for &v in &c.accumulator {
            w.write_all(&v.to_f64().unwrap().to_le_bytes())?;
        }
    }
    for &a in &state.assignments {
        w.write_all(&a.to_le_bytes())?;
    }
    for &id in ids {
        w.write_all(&id.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<F: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<F>> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut header_line = Vec::new();
    {
        use std::io::BufRead;
        r.read_until(b'\n', &mut header_line)?;
    }
    let header: CheckpointHeader = serde_json::from_slice(&header_line)
        .map_err(|e| FascError::parse(1, format!("bad checkpoint header: {e}")))?;
    if header.version != 1 {
        return Err(FascError::parse(1, format!("unsupported checkpoint version {}", header.version)));
    }
    let kernel = Kernel::from_name(&header.kernel, header.split_index)?;

    let mut read_f64_vec = |len: usize| -> Result<Vec<F>> {
        let mut buf = vec![0u8; len * 8];
        r.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| real(f64::from_le_bytes(c.try_into().unwrap())))
            .collect())
    };
    let mut clusters = Vec::with_capacity(header.k);
    for j in 0..header.k {
        clusters.push(Cluster {
            representative: read_f64_vec(header.d)?,
            accumulator: Vec::new(),
            support: header.supports[j],
            born_iteration: header.born[j],
            newly_promoted: header.newly_promoted[j],
            alive: true,
        });
    }
    for c in clusters.iter_mut() {
        c.accumulator = read_f64_vec(header.d)?;
    }
    let mut buf = vec![0u8; header.n * 4];
    r.read_exact(&mut buf)?;
    let assignments: Vec<i32> = buf
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut buf = vec![0u8; header.n * 8];
    r.read_exact(&mut buf)?;
    let ids: Vec<u64> = buf
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    Ok(Checkpoint {
        state: ClusterState {
            clusters,
            assignments,
            iteration: header.t,
        },
        kernel,
        config: header.config,
        dim: header.d,
        ids,
    })
}
