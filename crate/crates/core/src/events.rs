//! Decision and merge events, written as newline-delimited JSON.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    ClusterCluster,
    PointCluster,
    PointPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierReason {
    /// Pushed out of a full retained set.
    Evicted,
    /// The record carried NaN or infinite coordinates.
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    /// A two-point cluster seeded by the bootstrap pairing.
    Seed { points: [u64; 2], cluster_id: u64 },
    /// Primary routing of one point.
    Assign {
        seq: u64,
        kind: AssignKind,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        cluster_id: Option<u64>,
        /// For `new_pair`, the retained point the new cluster was formed with.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        partner: Option<u64>,
        distance: Option<f64>,
    },
    Outlier { seq: u64, reason: OutlierReason },
    Merge {
        kind: MergeKind,
        clusters: Vec<u64>,
        points: Vec<u64>,
        into: u64,
        distance: f64,
        threshold: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignKind {
    Discard,
    NewPair,
    Retain,
}

pub fn write_ndjson<W: Write>(mut out: W, events: &[Event]) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ndjson(text: &str) -> Result<Vec<Event>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
