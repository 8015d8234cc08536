//! Synapse location-and-connectivity pipeline over volumetric data.
//!
//! The pipeline runs in two stages. Stage one turns paired band annotations
//! into a signed proximity field (or accepts a predicted one) and derives
//! candidate pre/post partner pairs from it: threshold, cluster, overlap
//! with a segmentation, and pair across touching segments. Stage two scores
//! each candidate with a pluggable scorer and prunes by threshold.
//! Evaluation counts a detection as correct only when it overlaps the
//! annotated span of a synapse and connects the right cells in the right
//! direction.
//!
//! Modules:
//!
//! * [`volume`] - dense anisotropic volumes and their invariant-checked
//!   wrappers.
//! * [`components`], [`distance`], [`adjacency`] - the three volume
//!   workhorses: connected components, the exact nearest-site transform,
//!   and segment contact areas.
//! * [`target`] - signed proximity synthesis.
//! * [`candidates`] - thresholding, site extraction, pairing.
//! * [`pruning`] - window features, the logistic baseline scorer, external
//!   score ingestion, pruning.
//! * [`eval`] - segment-to-cell mapping, greedy matching,
//!   precision/recall sweeps.
//! * [`synth`] - deterministic phantoms and the oracle predictor.
//! * [`io`] - the svol1 container and the JSON/CSV artifact formats.

pub mod adjacency;
pub mod candidates;
pub mod components;
pub mod distance;
pub mod error;
pub mod eval;
pub mod io;
pub mod pruning;
pub mod rng;
pub mod synth;
pub mod target;
pub mod volume;

pub use error::{Error, Result};
