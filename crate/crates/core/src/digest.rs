//! Stable 64-bit digests built from truncated SHA-256.
//!
//! Content ordering and the limit-cycle guard both require digests that are
//! identical across runs, platforms, and crate versions, and that make
//! accidental collisions a non-concern. `DefaultHasher` guarantees neither.

use sha2::{Digest, Sha256};

pub(crate) struct StableHasher {
    inner: Sha256,
}

impl StableHasher {
    pub(crate) fn new() -> Self {
        StableHasher {
            inner: Sha256::new(),
        }
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        self.inner.update(bytes);
    }

    pub(crate) fn write_u32(&mut self, v: u32) {
        self.write(&v.to_le_bytes());
    }

    pub(crate) fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    pub(crate) fn write_i128(&mut self, v: i128) {
        self.write(&v.to_le_bytes());
    }

    pub(crate) fn finish(self) -> u64 {
        let out = self.inner.finalize();
        u64::from_le_bytes(out[..8].try_into().expect("sha256 yields >= 8 bytes"))
    }
}

/// Quantize a float onto an absolute grid before hashing so I/O round-trip
/// noise below `quantum` cannot split equal content into distinct digests.
pub(crate) fn quantize(value: f64, quantum: f64) -> i128 {
    (value / quantum).round() as i128
}
