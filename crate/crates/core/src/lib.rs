//! Simulation and estimation toolkit for base stations built from
//! six-dimensional movable antenna (6DMA) surfaces operating at THz
//! carriers.
//!
//! The crate covers the full measurement-to-reconstruction loop:
//!
//! - [`geometry`]: surface poses, rotations, DOA vectors, local-frame
//!   projections, and the directive element gain pattern.
//! - [`channel`]: far-field, near-field, and hybrid-field channel vectors
//!   for arbitrary pose sets and user path states.
//! - [`pilot`]: analog-combined uplink pilot synthesis and pre-whitening.
//! - [`estimator`]: the two-stage directional-sparsity-driven estimator
//!   (per-pose coarse ML search, clustering, joint fine refinement, channel
//!   reconstruction) plus a least-squares baseline.
//! - [`scenario`]: sphere placement of candidate poses, user sampling,
//!   sparsity maps, sum capacity, and reconstruction-error metrics.
//!
//! Everything is deterministic per seed: random quantities (combiners,
//! noise, user draws) take explicit seeds, and parallel searches reduce to
//! the same winner regardless of thread count.

pub mod channel;
pub mod estimator;
pub mod geometry;
pub mod pilot;
pub mod scenario;

pub use channel::{CarrierConfig, ChannelVector, FieldModel, NearFieldGain, UserPathState};
pub use estimator::{
    Candidate, CoarseEstimate, GridSpec, RefinedEstimate, SearchGrids,
};
pub use geometry::{AntennaPattern, ArrayLayout, DoaAngles, SurfacePose};
pub use pilot::{CombinerMatrix, MeasurementBatch, WhitenedMeasurement};
pub use scenario::{ScenarioConfig, SparsityMap};
