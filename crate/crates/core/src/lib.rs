//! FASC: a deterministic, metric-agnostic, streaming-batch clustering engine.
//!
//! The engine alternates three phases until a fixed point (or a detected
//! limit cycle): batched assignment against a frozen representative set,
//! consolidation (Fréchet-mean centroid updates, threshold merges, minimum
//! support dissolution), and convergence monitoring over hashed state
//! history. Assignment admission is gated by `tau_intra`, inter-cluster
//! separation is enforced by `tau_inter`, and samples that fail admission
//! stay in a provisional outlier pool eligible for later promotion.
//!
//! The crate also ships the reference baselines used for comparisons
//! (ART2A online clustering and spherical k-means), external validity
//! metrics (ARI, NMI, majority-vote purity, blending analysis), a
//! synthetic-data generator, and a scaling harness.
//!
//! All core math is generic over the scalar type through [`Real`];
//! concrete `f64` (and `f32`) aliases are exported at the crate root.

pub mod baselines;
pub mod benchmark;
mod digest;
pub mod error;
pub mod kernels;
pub mod metrics;
pub mod phase1;
pub mod phase2;
pub mod phase3;
pub mod spectra;
pub mod state;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub use error::{FascError, Result};
pub use kernels::Kernel;

/// Scalar type the engine computes with. Implemented for `f32` and `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Send + Sync + Display + Debug + 'static
{
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Send
        + Sync
        + Display
        + Debug
        + 'static
{
}

pub(crate) fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("finite f64 converts to any Real")
}

pub type Dataset64 = spectra::Dataset<f64>;
pub type Dataset32 = spectra::Dataset<f32>;
pub type Spectrum64 = spectra::Spectrum<f64>;
pub type Spectrum32 = spectra::Spectrum<f32>;
pub type FascConfig64 = state::FascConfig<f64>;
pub type FascConfig32 = state::FascConfig<f32>;
pub type ClusterState64 = state::ClusterState<f64>;
pub type ClusterState32 = state::ClusterState<f32>;
pub type RunResult64 = phase3::RunResult<f64>;
pub type RunResult32 = phase3::RunResult<f32>;
