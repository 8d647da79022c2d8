//! Label sanitization over a shared image/text embedding space.
//!
//! The crate is organised bottom-up:
//!
//! * [`dataset`] parses the multi-label image corpus and derives the label vocabulary.
//! * [`embedding`] reads and writes the binary embedding format and serves unit vectors.
//! * [`similarity`] holds the cosine primitives and the per-image diagnostics.
//! * [`cluster`] runs DBSCAN over the label distance matrix, elects representatives
//!   and merges small clusters.
//! * [`sanitize`] resolves every image to a single representative label and replays
//!   curator decisions.
//! * [`pipeline`] ties the stages together and owns the on-disk run artifacts.

pub mod cluster;
pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod sanitize;
pub mod similarity;

pub use cluster::{Cluster, ClusterParams, ClusterSet, DistanceMatrix, MergeAnchor};
pub use config::RunConfig;
pub use dataset::{Dataset, ImageRecord, LabelAssignment, LabelVocabulary};
pub use embedding::{EmbeddingStore, EmbeddingTable};
pub use error::{Error, Result};
pub use sanitize::{Decision, DecisionAction, Provenance, SanitizationRun, SanitizedRecord};
pub use similarity::{DiagnosticsReport, Flag, FlagRules};
