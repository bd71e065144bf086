//! Single-pass clustering of multivariate data streams with correlated
//! components.
//!
//! Each cluster is kept as a small mergeable summary ([`ClusterSummary`]).
//! From it the engine derives a positive-definite double-shrinkage
//! covariance estimate ([`shrinkage`]) and assigns incoming points by
//! Mahalanobis distance, vetoing uncertain assignments with Hotelling
//! confidence regions around the cluster centres ([`primary`]). Points that
//! cannot be placed are retained and periodically merged with clusters or
//! each other ([`secondary`]). [`engine`] drives the whole stream and
//! [`synth`] generates labelled Gaussian-mixture benchmarks.

pub mod benchmark;
pub mod config;
pub mod engine;
pub mod error;
pub mod events;
pub mod io;
pub mod metric;
pub mod par;
pub mod primary;
pub mod secondary;
pub mod shrinkage;
pub mod snapshot;
pub mod special;
pub mod summary;
pub mod synth;

pub use config::{EngineConfig, MergeMode};
pub use engine::{process_stream, process_stream_with_events, Engine, RunReport};
pub use error::{Error, Result};
pub use metric::{hotelling_threshold, mahalanobis_sq, perturbed_distance, pooled_covariance, PerturbationInputs, SpdMatrix};
pub use par::Execution;
pub use snapshot::ModelSnapshot;
pub use shrinkage::{shrunk_covariance, MetricMode, ShrinkageWeights, ShrunkCovariance, TraceEstimates};
pub use summary::ClusterSummary;
