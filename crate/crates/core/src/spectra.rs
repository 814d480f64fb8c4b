//! Sparse spectrum data model and ingestion.
//!
//! Three on-disk formats are supported:
//! - dense CSV, header `id,f0,...,f{D-1}[,label]`
//! - sparse triplet CSV, rows `sample_id,dim,intensity`, with a sidecar
//!   JSON header `{"d": D, "n": N, "split_index": p?}` at `<path>.json`
//! - IDX images/labels (big-endian, magic `0x00000803` / `0x00000801`)
//!
//! Intensities are kept as read; normalization is a kernel concern. All-zero
//! spectra are retained and reported as degenerate rather than dropped.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::digest::{quantize, StableHasher};
use crate::error::{FascError, Result};
use crate::Real;

/// Absolute quantization grid used when hashing spectrum content.
const CONTENT_QUANTUM: f64 = 1e-9;

/// One sample: a sparse non-negative feature vector with a stable id.
///
/// Entries are sorted by dimension and hold strictly positive intensities;
/// a spectrum with no entries is degenerate (all-zero) but still a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<F> {
    pub id: u64,
    entries: Vec<(u32, F)>,
}

impl<F: Real> Spectrum<F> {
    /// Build a spectrum, validating indices and intensities against `dim`.
    /// Zero intensities are accepted and elided; negatives and non-finite
    /// values are rejected.
    pub fn new(id: u64, mut entries: Vec<(u32, F)>, dim: usize) -> Result<Self> {
        entries.sort_unstable_by_key(|&(d, _)| d);
        let mut kept: Vec<(u32, F)> = Vec::with_capacity(entries.len());
        let mut last_dim: Option<u32> = None;
        for (d, v) in entries {
            if d as usize >= dim {
                return Err(FascError::parse(
                    0,
                    format!("dimension out of range: {d} >= {dim} (sample {id})"),
                ));
            }
            if !v.is_finite() {
                return Err(FascError::parse(
                    0,
                    format!("non-finite intensity at dim {d} (sample {id})"),
                ));
            }
            if v < F::zero() {
                return Err(FascError::parse(
                    0,
                    format!("negative intensity at dim {d} (sample {id})"),
                ));
            }
            if last_dim == Some(d) {
                return Err(FascError::parse(
                    0,
                    format!("duplicate dimension {d} (sample {id})"),
                ));
            }
            last_dim = Some(d);
            if v > F::zero() {
                kept.push((d, v));
            }
        }
        Ok(Spectrum { id, entries: kept })
    }

    pub fn entries(&self) -> &[(u32, F)] {
        &self.entries
    }

    /// All-zero spectra carry no direction; kernels give them a zero score.
    pub fn is_degenerate(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<F> {
        let mut out = vec![F::zero(); dim];
        for &(d, v) in &self.entries {
            out[d as usize] = v;
        }
        out
    }

    fn content_hash(&self) -> u64 {
        let mut h = StableHasher::new();
        h.write_u64(self.entries.len() as u64);
        for &(d, v) in &self.entries {
            h.write_u32(d);
            h.write_i128(quantize(v.to_f64().unwrap(), CONTENT_QUANTUM));
        }
        h.finish()
    }

    fn content_cmp(&self, other: &Self) -> std::cmp::Ordering {
        let key = |&(d, v): &(u32, F)| (d, quantize(v.to_f64().unwrap(), CONTENT_QUANTUM));
        self.entries
            .iter()
            .map(key)
            .cmp(other.entries.iter().map(key))
    }
}

/// Dimension index `p` splitting a vector into a positive channel `[0, p)`
/// and a negative channel `[p, D)`. Absent for single-channel data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolaritySplit {
    pub split_index: usize,
}

/// An ordered collection of spectra plus optional polarity split and
/// per-sample ground-truth labels. Read-only after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<F> {
    pub dim: usize,
    pub spectra: Vec<Spectrum<F>>,
    pub split: Option<PolaritySplit>,
    pub labels: Option<Vec<u32>>,
}

impl<F: Real> Dataset<F> {
    pub fn new(
        dim: usize,
        spectra: Vec<Spectrum<F>>,
        split: Option<PolaritySplit>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        if let Some(s) = split {
            if s.split_index == 0 || s.split_index >= dim {
                return Err(FascError::config(format!(
                    "split_index {} out of range (0, {})",
                    s.split_index, dim
                )));
            }
        }
        if let Some(ref l) = labels {
            if l.len() != spectra.len() {
                return Err(FascError::config(format!(
                    "label count {} != sample count {}",
                    l.len(),
                    spectra.len()
                )));
            }
        }
        let mut seen = HashMap::with_capacity(spectra.len());
        for s in &spectra {
            if seen.insert(s.id, ()).is_some() {
                return Err(FascError::config(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Dataset {
            dim,
            spectra,
            split,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.spectra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spectra.is_empty()
    }

    /// Return a copy with the spectra (and labels) visited in `perm` order.
    /// Sample ids travel with their spectra.
    pub fn permuted(&self, perm: &[usize]) -> Dataset<F> {
        Dataset {
            dim: self.dim,
            spectra: perm.iter().map(|&i| self.spectra[i].clone()).collect(),
            split: self.split,
            labels: self
                .labels
                .as_ref()
                .map(|l| perm.iter().map(|&i| l[i]).collect()),
        }
    }
}

/// Content-derived total order over the samples, returned as positions into
/// `dataset.spectra`. The key is (quantized-content hash, lexicographic
/// entry comparison, id), so the induced sequence of spectra is identical
/// for any arrival order of the same multiset.
pub fn canonical_order<F: Real>(dataset: &Dataset<F>) -> Vec<usize> {
    let hashes: Vec<u64> = dataset.spectra.iter().map(|s| s.content_hash()).collect();
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.sort_unstable_by(|&a, &b| {
        hashes[a]
            .cmp(&hashes[b])
            .then_with(|| dataset.spectra[a].content_cmp(&dataset.spectra[b]))
            .then_with(|| dataset.spectra[a].id.cmp(&dataset.spectra[b].id))
    });
    idx
}

// ---------------------------------------------------------------------------
// Dense CSV
// ---------------------------------------------------------------------------

fn parse_scalar<F: Real>(field: &str, line: usize) -> Result<F> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| FascError::parse(line, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(FascError::parse(line, format!("non-finite value: {field:?}")));
    }
    F::from_f64(v).ok_or_else(|| FascError::parse(line, format!("unrepresentable value: {field:?}")))
}

/// Load `id,f0,...,f{D-1}[,label]`. D is inferred from the header; a trailing
/// `label` column is captured when present.
pub fn load_dense_csv<F: Real>(path: impl AsRef<Path>, split_index: Option<usize>) -> Result<Dataset<F>> {
    let file = fs::File::open(path.as_ref())?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| FascError::parse(1, "empty file, expected header"))??;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "id" {
        return Err(FascError::parse(1, "header must start with `id` and one feature column"));
    }
    let has_label = *cols.last().unwrap() == "label";
    let dim = cols.len() - 1 - usize::from(has_label);
    if dim == 0 {
        return Err(FascError::parse(1, "no feature columns"));
    }

    let mut spectra = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let lineno = lineno + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(FascError::parse(
                lineno,
                format!("row width mismatch at line {lineno}: {} fields, expected {}", fields.len(), cols.len()),
            ));
        }
        let id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| FascError::parse(lineno, format!("bad id: {:?}", fields[0])))?;
        let mut entries = Vec::new();
        for (d, field) in fields[1..1 + dim].iter().enumerate() {
            let v: F = parse_scalar(field, lineno)?;
            if v != F::zero() {
                entries.push((d as u32, v));
            }
        }
        let spectrum = Spectrum::new(id, entries, dim)
            .map_err(|e| FascError::parse(lineno, e.to_string()))?;
        spectra.push(spectrum);
        if has_label {
            let lab: u32 = fields[cols.len() - 1]
                .trim()
                .parse()
                .map_err(|_| FascError::parse(lineno, format!("bad label: {:?}", fields.last().unwrap())))?;
            labels.push(lab);
        }
    }
    Dataset::new(
        dim,
        spectra,
        split_index.map(|p| PolaritySplit { split_index: p }),
        has_label.then_some(labels),
    )
}

pub fn save_dense_csv<F: Real>(dataset: &Dataset<F>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    out.push_str("id");
    for d in 0..dataset.dim {
        out.push_str(&format!(",f{d}"));
    }
    if dataset.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, s) in dataset.spectra.iter().enumerate() {
        out.push_str(&s.id.to_string());
        let dense = s.to_dense(dataset.dim);
        for v in dense {
            out.push(',');
            out.push_str(&v.to_string());
        }
        if let Some(ref l) = dataset.labels {
            out.push(',');
            out.push_str(&l[i].to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Sparse triplets
// ---------------------------------------------------------------------------

/// Sidecar header stored at `<triplet path>.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SparseHeader {
    pub d: usize,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_index: Option<usize>,
}

/// Load rows `sample_id,dim,intensity`. Samples appear in first-appearance
/// order; missing dims are implicit zeros. A zero-intensity row registers
/// its sample id without adding an entry (that is how all-zero spectra
/// survive the round trip).
pub fn load_sparse_triplets<F: Real>(
    path: impl AsRef<Path>,
    dim: usize,
    split_index: Option<usize>,
) -> Result<Dataset<F>> {
    let file = fs::File::open(path.as_ref())?;
    let mut order: Vec<u64> = Vec::new();
    let mut per_sample: HashMap<u64, Vec<(u32, F)>> = HashMap::new();
    let mut seen_dims: HashMap<u64, Vec<u32>> = HashMap::new();

    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(FascError::parse(lineno, format!("expected 3 fields, got {}", fields.len())));
        }
        let id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| FascError::parse(lineno, format!("bad sample_id: {:?}", fields[0])))?;
        let d: u32 = fields[1]
            .trim()
            .parse()
            .map_err(|_| FascError::parse(lineno, format!("bad dim: {:?}", fields[1])))?;
        if d as usize >= dim {
            return Err(FascError::parse(lineno, format!("dimension out of range: {d} >= {dim}")));
        }
        let v: F = parse_scalar(fields[2], lineno)?;
        if v < F::zero() {
            return Err(FascError::parse(lineno, format!("negative intensity: {:?}", fields[2])));
        }
        if !per_sample.contains_key(&id) {
            order.push(id);
            per_sample.insert(id, Vec::new());
            seen_dims.insert(id, Vec::new());
        }
        let dims = seen_dims.get_mut(&id).unwrap();
        if dims.contains(&d) {
            return Err(FascError::parse(lineno, format!("duplicate (sample_id, dim) = ({id}, {d})")));
        }
        dims.push(d);
        if v > F::zero() {
            per_sample.get_mut(&id).unwrap().push((d, v));
        }
    }

    let spectra = order
        .into_iter()
        .map(|id| Spectrum::new(id, per_sample.remove(&id).unwrap(), dim))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(dim, spectra, split_index.map(|p| PolaritySplit { split_index: p }), None)
}

/// Load a sparse triplet file using its sidecar header for `D`, `N`, and the
/// optional split.
pub fn load_sparse_with_sidecar<F: Real>(path: impl AsRef<Path>) -> Result<Dataset<F>> {
    let path = path.as_ref();
    let sidecar = sidecar_path(path);
    let header: SparseHeader = serde_json::from_str(&fs::read_to_string(&sidecar)?)
        .map_err(|e| FascError::parse(1, format!("bad sidecar {}: {e}", sidecar.display())))?;
    let ds = load_sparse_triplets(path, header.d, header.split_index)?;
    if ds.len() != header.n {
        return Err(FascError::parse(
            0,
            format!("sidecar declares n={}, file has {}", header.n, ds.len()),
        ));
    }
    Ok(ds)
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    std::path::PathBuf::from(s)
}

pub fn save_sparse_triplets<F: Real>(dataset: &Dataset<F>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for s in &dataset.spectra {
        if s.is_degenerate() {
            // marker row keeps all-zero samples visible in the triplet format
            out.push_str(&format!("{},0,0\n", s.id));
        }
        for &(d, v) in s.entries() {
            out.push_str(&format!("{},{},{}\n", s.id, d, v));
        }
    }
    fs::write(path, out)?;
    let header = SparseHeader {
        d: dataset.dim,
        n: dataset.len(),
        split_index: dataset.split.map(|s| s.split_index),
    };
    let mut f = fs::File::create(sidecar_path(path))?;
    f.write_all(serde_json::to_string_pretty(&header).unwrap().as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_be_bytes(buf))
}

/// Load an IDX image file (optionally with its label file) as a dataset with
/// `D = rows * cols` and raw pixel intensities. Ids are positions 0..N-1.
pub fn load_idx_images<F: Real>(
    images_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
) -> Result<Dataset<F>> {
    let mut r = BufReader::new(fs::File::open(images_path.as_ref())?);
    let magic = read_be_u32(&mut r)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(FascError::parse(0, format!("bad IDX image magic {magic:#010x}")));
    }
    let n = read_be_u32(&mut r)? as usize;
    let rows = read_be_u32(&mut r)? as usize;
    let cols = read_be_u32(&mut r)? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(FascError::parse(0, "zero-sized images"));
    }

    let mut pixels = vec![0u8; n * dim];
    r.read_exact(&mut pixels)
        .map_err(|_| FascError::parse(0, "truncated IDX image payload"))?;

    let labels = match labels_path {
        Some(p) => {
            let mut lr = BufReader::new(fs::File::open(p)?);
            let magic = read_be_u32(&mut lr)?;
            if magic != IDX_LABELS_MAGIC {
                return Err(FascError::parse(0, format!("bad IDX label magic {magic:#010x}")));
            }
            let ln = read_be_u32(&mut lr)? as usize;
            if ln != n {
                return Err(FascError::parse(0, format!("count mismatch: {n} images, {ln} labels")));
            }
            let mut lab = vec![0u8; ln];
            lr.read_exact(&mut lab)
                .map_err(|_| FascError::parse(0, "truncated IDX label payload"))?;
            Some(lab.into_iter().map(u32::from).collect())
        }
        None => None,
    };

    let mut spectra = Vec::with_capacity(n);
    for i in 0..n {
        let img = &pixels[i * dim..(i + 1) * dim];
        let entries: Vec<(u32, F)> = img
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p != 0)
            .map(|(d, &p)| (d as u32, F::from_u8(p).unwrap()))
            .collect();
        spectra.push(Spectrum::new(i as u64, entries, dim)?);
    }
    Dataset::new(dim, spectra, None, labels)
}
