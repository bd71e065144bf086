//! Saving and restoring a [`ModelState`] as JSON.

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::primary::{Counters, ModelState, OutlierEntry, RetainedPoint};
use crate::summary::ClusterSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotCluster {
    pub id: u64,
    pub n: u64,
    /// Upper triangle of Σ xxᵀ, row-major.
    pub sum_outer: Vec<f64>,
    pub sum_vec: Vec<f64>,
    pub q: f64,
    pub s_coef: f64,
    pub t_coef: f64,
}

impl SnapshotCluster {
    fn from_summary(id: u64, s: &ClusterSummary) -> Self {
        Self {
            id,
            n: s.n(),
            sum_outer: s.sum_outer_packed().to_vec(),
            sum_vec: s.sum_vec().to_vec(),
            q: s.q(),
            s_coef: s.s_coef(),
            t_coef: s.t_coef(),
        }
    }

    fn to_summary(&self) -> Result<ClusterSummary> {
        let dim = self.sum_vec.len();
        let mut flat = Vec::with_capacity(ClusterSummary::scalar_count(dim));
        flat.push(self.n as f64);
        flat.extend_from_slice(&self.sum_outer);
        flat.extend_from_slice(&self.sum_vec);
        flat.extend([self.q, self.s_coef, self.t_coef]);
        ClusterSummary::from_flat(dim, &flat)
    }
}

/// Everything needed to continue a stream: the configuration, the cluster
/// summaries and the raw retained points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub config: EngineConfig,
    pub dim: Option<usize>,
    pub clusters: Vec<SnapshotCluster>,
    pub retained: Vec<RetainedPoint>,
    pub outliers: Vec<OutlierEntry>,
    pub counters: Counters,
    pub next_cluster_id: u64,
}

impl ModelSnapshot {
    pub fn from_model(model: &ModelState) -> Self {
        Self {
            config: model.config().clone(),
            dim: model.dim(),
            clusters: model.clusters().iter().map(|c| SnapshotCluster::from_summary(c.id(), c.summary())).collect(),
            retained: model.retained().iter().cloned().collect(),
            outliers: model.outliers().to_vec(),
            counters: model.counters().clone(),
            next_cluster_id: model.next_cluster_id(),
        }
    }

    pub fn to_model(&self) -> Result<ModelState> {
        let clusters = self
            .clusters
            .iter()
            .map(|c| Ok((c.id, c.to_summary()?)))
            .collect::<Result<Vec<_>>>()?;
        ModelState::restore(
            self.config.clone(),
            self.dim,
            clusters,
            self.retained.clone(),
            self.outliers.clone(),
            self.counters.clone(),
            self.next_cluster_id,
        )
    }

    /// Parse either a bare snapshot or a run report that embeds one under
    /// `"snapshot"`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let inner = match value.get("snapshot") {
            Some(s) => s.clone(),
            None => value,
        };
        serde_json::from_value(inner).map_err(|e| Error::Serde(format!("not a model snapshot: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
