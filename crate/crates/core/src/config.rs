use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::shrinkage::MetricMode;

/// How the secondary agglomeration treats a candidate pair that fails its
/// density condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Stop the sweep at the first (closest) pair that fails.
    #[default]
    StopAtFirstFailure,
    /// Skip failing pairs and keep merging any pair that passes.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Significance level of the Hotelling confidence regions.
    pub alpha: f64,
    /// Cluster/cluster merge factor.
    pub theta0: f64,
    /// Point/cluster merge factor, applied to tr(Ŝ_h).
    pub theta1: f64,
    /// Chi-square level of the point/point pairing threshold.
    pub theta2_level: f64,
    /// Points between secondary compressions.
    pub chunk_size: usize,
    /// Number of two-point clusters seeded at bootstrap.
    pub init_clusters: usize,
    /// Points buffered before bootstrap; defaults to `4 * init_clusters`.
    pub bootstrap_size: Option<usize>,
    /// Retained-set bound; defaults to `10 * p`.
    pub rs_capacity: Option<usize>,
    pub metric_mode: MetricMode,
    pub merge_mode: MergeMode,
    pub execution: Execution,
    /// Seed for randomized inputs (synthetic streams); the engine itself is
    /// deterministic.
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            theta0: 1.0,
            theta1: 1.0,
            theta2_level: 0.95,
            chunk_size: 50,
            init_clusters: 4,
            bootstrap_size: None,
            rs_capacity: None,
            metric_mode: MetricMode::Full,
            merge_mode: MergeMode::StopAtFirstFailure,
            execution: Execution::Parallel,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {} outside (0, 1)", self.alpha));
        }
        if !(self.theta2_level > 0.0 && self.theta2_level < 1.0) {
            return bad(format!("theta2 level {} outside (0, 1)", self.theta2_level));
        }
        if !(self.theta0 > 0.0 && self.theta1 > 0.0) {
            return bad("merge thresholds must be positive".into());
        }
        if self.chunk_size == 0 {
            return bad("chunk size must be at least 1".into());
        }
        if self.init_clusters == 0 {
            return bad("at least one initial cluster is required".into());
        }
        if let Some(b) = self.bootstrap_size {
            if b < 2 * self.init_clusters {
                return bad(format!(
                    "bootstrap size {b} cannot seed {} pairs",
                    self.init_clusters
                ));
            }
        }
        if self.rs_capacity == Some(0) {
            return bad("retained-set capacity must be positive".into());
        }
        Ok(())
    }

    pub fn bootstrap_len(&self) -> usize {
        self.bootstrap_size.unwrap_or(4 * self.init_clusters)
    }

    pub fn rs_capacity_for(&self, p: usize) -> usize {
        self.rs_capacity.unwrap_or(10 * p)
    }
}
