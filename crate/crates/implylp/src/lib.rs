//! Certified agreement analysis for pairs of neural classifiers.
//!
//! Given two networks that share an input space and a label set, this crate
//! bounds the log prediction-ratio gap between them over an l-infinity box
//! around a sample. The bound comes from a single joint linear program over
//! both networks with shared input columns, so it captures how the two
//! networks co-vary instead of bounding each one in isolation. A positive
//! lower bound on every class pair certifies that one network classifies the
//! sample correctly whenever the other does, for every point of the box.
//!
//! Pipeline, bottom to top:
//!
//! * [`model`] - network representation and exact forward evaluation.
//! * [`ingest`] - JSON load/save for networks and sample sets.
//! * [`compaction`] - magnitude pruning and per-tensor quantization, used to
//!   derive compact variants whose agreement with the original is then
//!   certified.
//! * [`bounds`] - input regions and interval propagation of pre/post
//!   activation bounds, with optional LP tightening.
//! * [`relax`] - lowering of a network pair to a joint linear program
//!   (triangle relaxation for unstable ReLUs, convex hull rows for max
//!   pooling) plus a deterministic textual export.
//! * [`lpsolve`] - a self-contained bounded-variable revised simplex solver
//!   and an independent solution checker.
//! * [`verify`] - pairwise bounds, implication reports, joint-versus-
//!   independent comparison, and transitivity audits.
//! * [`oracle`] - sampling/grid extrema oracles and deterministic fixtures
//!   used to falsify the analytic machinery.
//! * [`cli`] - the `implylp` command line front end.

pub mod bounds;
pub mod cli;
pub mod compaction;
mod error;
pub mod ingest;
pub mod lpsolve;
pub mod model;
pub mod oracle;
pub mod relax;
pub mod verify;

pub use error::{Error, Result};
