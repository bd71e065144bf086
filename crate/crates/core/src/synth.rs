//! Labelled Gaussian-mixture streams and run scoring.
//!
//! Each component has a uniform random mean, and a covariance `U H Uᵀ`
//! where `U` comes from the SVD of `M Mᵀ` for a uniform random `M`, and `H`
//! is diagonal with Beta-distributed entries mapped affinely onto
//! `eig_range`.

use std::collections::HashMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::RunReport;
use crate::error::{Error, Result};
use crate::events::{AssignKind, Event, MergeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub k: usize,
    pub p: usize,
    pub points_per_cluster: usize,
    pub mean_range: (f64, f64),
    pub eig_beta: (f64, f64),
    pub eig_range: (f64, f64),
    pub m_range: (f64, f64),
    pub seed: u64,
    /// Interleave the components uniformly at random instead of emitting
    /// them one block after another.
    pub shuffle: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            k: 5,
            p: 5,
            points_per_cluster: 1000,
            mean_range: (-5.0, 5.0),
            eig_beta: (0.5, 0.5),
            eig_range: (0.5, 2.5),
            m_range: (-2.0, 2.0),
            seed: 0,
            shuffle: true,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.k == 0 || self.p == 0 {
            return bad("k and p must be positive");
        }
        for (lo, hi) in [self.mean_range, self.eig_range, self.m_range] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad("ranges must be finite with lo <= hi");
            }
        }
        if self.eig_range.0 <= 0.0 {
            return bad("eigenvalues must be positive");
        }
        if !(self.eig_beta.0 > 0.0 && self.eig_beta.1 > 0.0) {
            return bad("beta parameters must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Component {
    pub mean: DVector<f64>,
    pub eigenvalues: DVector<f64>,
    pub rotation: DMatrix<f64>,
}

impl Component {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.rotation * DMatrix::from_diagonal(&self.eigenvalues) * self.rotation.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub components: Vec<Component>,
}

fn uniform(range: (f64, f64)) -> Uniform<f64> {
    // Uniform::new_inclusive accepts a collapsed interval.
    Uniform::new_inclusive(range.0, range.1)
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.p;
    let mean_d = uniform(spec.mean_range);
    let m_d = uniform(spec.m_range);
    let beta = Beta::new(spec.eig_beta.0, spec.eig_beta.1).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let (e_lo, e_hi) = spec.eig_range;

    let mut components = Vec::with_capacity(spec.k);
    for _ in 0..spec.k {
        let mean = DVector::from_fn(p, |_, _| mean_d.sample(&mut rng));
        let eigenvalues = DVector::from_fn(p, |_, _| e_lo + (e_hi - e_lo) * beta.sample(&mut rng));
        let m = DMatrix::from_fn(p, p, |_, _| m_d.sample(&mut rng));
        let mmt = &m * m.transpose();
        let rotation = mmt.svd(true, false).u.expect("requested U");
        components.push(Component { mean, eigenvalues, rotation });
    }

    let mut points = Vec::with_capacity(spec.k * spec.points_per_cluster);
    let mut labels = Vec::with_capacity(points.capacity());
    for (label, c) in components.iter().enumerate() {
        let scale = c.rotation.clone() * DMatrix::from_diagonal(&c.eigenvalues.map(f64::sqrt));
        for _ in 0..spec.points_per_cluster {
            let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            let x = &c.mean + &scale * z;
            points.push(x.iter().copied().collect());
            labels.push(label);
        }
    }
    if spec.shuffle {
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.shuffle(&mut rng);
        points = order.iter().map(|&i| std::mem::take(&mut points[i])).collect();
        labels = order.iter().map(|&i| labels[i]).collect();
    }
    Ok(SyntheticData { points, labels, components })
}

/// Write the points as CSV with a header row, optionally followed by a
/// `label` column.
pub fn write_csv<W: Write>(out: W, data: &SyntheticData, with_labels: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let p = data.points.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (1..=p).map(|i| format!("x{i}")).collect();
    if with_labels {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for (x, label) in data.points.iter().zip(&data.labels) {
        let mut row: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        if with_labels {
            row.push(label.to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    /// Clusters holding at least `min_size` points.
    pub estimated_clusters: usize,
    pub total_clusters: usize,
    /// Points left unclustered: the retained set plus the outlier log.
    pub retained_count: usize,
    /// Clusters below `min_size`, read as groups of outliers.
    pub small_cluster_count: usize,
    /// Share of clustered points whose cluster's majority label is their own.
    pub purity: f64,
}

/// Rebuild final cluster memberships from the event log and compare them
/// with the true labels (indexed by stream position).
pub fn cluster_members(events: &[Event]) -> Result<HashMap<u64, Vec<u64>>> {
    let mut members: HashMap<u64, Vec<u64>> = HashMap::new();
    let missing = |id: u64| Error::LabelMismatch(format!("event refers to unknown cluster {id}"));
    for e in events {
        match e {
            Event::Seed { points, cluster_id } => {
                members.insert(*cluster_id, points.to_vec());
            }
            Event::Assign { seq, kind: AssignKind::Discard, cluster_id: Some(id), .. } => {
                members.get_mut(id).ok_or_else(|| missing(*id))?.push(*seq);
            }
            Event::Assign { seq, kind: AssignKind::NewPair, cluster_id: Some(id), partner: Some(o), .. } => {
                members.insert(*id, vec![*o, *seq]);
            }
            Event::Assign { kind: AssignKind::Retain, .. } | Event::Outlier { .. } => {}
            Event::Assign { .. } => {
                return Err(Error::LabelMismatch("assign event without its cluster".into()));
            }
            Event::Merge { kind, clusters, points, into, .. } => match kind {
                MergeKind::ClusterCluster => {
                    let absorbed = members.remove(&clusters[1]).ok_or_else(|| missing(clusters[1]))?;
                    members.get_mut(into).ok_or_else(|| missing(*into))?.extend(absorbed);
                }
                MergeKind::PointCluster => {
                    members.get_mut(into).ok_or_else(|| missing(*into))?.extend(points);
                }
                MergeKind::PointPoint => {
                    members.insert(*into, points.clone());
                }
            },
        }
    }
    Ok(members)
}

pub fn score(report: &RunReport, events: &[Event], labels: &[usize], min_size: u64) -> Result<Score> {
    if labels.len() as u64 != report.counters.processed {
        return Err(Error::LabelMismatch(format!(
            "{} labels for {} processed points",
            labels.len(),
            report.counters.processed
        )));
    }
    let members = cluster_members(events)?;
    if members.len() != report.clusters.len() {
        return Err(Error::LabelMismatch(format!(
            "event log rebuilds {} clusters, report has {}",
            members.len(),
            report.clusters.len()
        )));
    }
    let mut agree = 0usize;
    let mut clustered = 0usize;
    for c in &report.clusters {
        let seqs = members.get(&c.id).ok_or_else(|| Error::LabelMismatch(format!("cluster {} not in event log", c.id)))?;
        if seqs.len() as u64 != c.n {
            return Err(Error::LabelMismatch(format!("cluster {} has {} replayed points, {} reported", c.id, seqs.len(), c.n)));
        }
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &s in seqs {
            let label = *labels.get(s as usize).ok_or_else(|| Error::LabelMismatch(format!("no label for point {s}")))?;
            *counts.entry(label).or_default() += 1;
        }
        agree += counts.values().max().copied().unwrap_or(0);
        clustered += seqs.len();
    }
    let small = report.clusters.iter().filter(|c| c.n < min_size).count();
    Ok(Score {
        estimated_clusters: report.clusters.len() - small,
        total_clusters: report.clusters.len(),
        retained_count: report.retained.len() + report.outliers.len(),
        small_cluster_count: small,
        purity: if clustered == 0 { 1.0 } else { agree as f64 / clustered as f64 },
    })
}
