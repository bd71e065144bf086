//! Primary compression: route each incoming point into an existing cluster
//! (discard set), into a new two-point cluster together with a retained
//! point, or into the retained set.
//!
//! The nearest object is found over clusters (each under its own shrunk
//! covariance) and retained points (under the pooled covariance of all
//! clusters, or the identity while there are none). The choice then has to
//! survive a perturbation of the cluster centres inside their Hotelling
//! confidence regions: the winning centre is pushed away from the point,
//! every other centre towards it. Retained points have no confidence region
//! and keep their raw distance.

use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{check_dim, Error, Result};
use crate::events::OutlierReason;
use crate::metric::{self, hotelling_threshold, perturbed_distance, PerturbationInputs, SpdMatrix};
use crate::par;
use crate::shrinkage::{shrunk_covariance_with_mode, MetricMode, ShrunkCovariance};
use crate::summary::ClusterSummary;

/// A live cluster: its summary plus the derived centre and metric, kept in
/// step with every update.
#[derive(Debug, Clone)]
pub struct Cluster {
    id: u64,
    summary: ClusterSummary,
    centroid: Vec<f64>,
    shrunk: ShrunkCovariance,
}

impl Cluster {
    pub fn new(id: u64, summary: ClusterSummary, mode: MetricMode) -> Self {
        let centroid = summary.centroid();
        let shrunk = shrunk_covariance_with_mode(&summary, mode);
        Self { id, summary, centroid, shrunk }
    }

    fn refresh(&mut self, mode: MetricMode) {
        self.centroid = self.summary.centroid();
        self.shrunk = shrunk_covariance_with_mode(&self.summary, mode);
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn summary(&self) -> &ClusterSummary {
        &self.summary
    }

    pub fn n(&self) -> u64 {
        self.summary.n()
    }

    pub fn centroid(&self) -> &[f64] {
        &self.centroid
    }

    pub fn shrunk(&self) -> &ShrunkCovariance {
        &self.shrunk
    }

    pub fn metric(&self) -> &SpdMatrix {
        &self.shrunk.spd
    }

    #[cfg(test)]
    pub(crate) fn with_shrunk_matrix(mut self, m: DMatrix<f64>) -> Self {
        self.shrunk.spd = SpdMatrix::new(m).expect("test metric must be SPD");
        self
    }

    /// Squared Mahalanobis distance of `x` from the centre.
    pub fn distance_sq(&self, x: &[f64]) -> f64 {
        self.shrunk.spd.mahalanobis_sq(x, &self.centroid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedPoint {
    pub seq: u64,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierEntry {
    pub seq: u64,
    pub reason: OutlierReason,
    /// Absent for records with non-finite coordinates.
    pub point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Counters {
    pub processed: u64,
    /// Points absorbed into existing clusters by primary compression.
    pub discarded: u64,
    /// Points placed in the retained set by primary compression.
    pub retained: u64,
    /// Two-point clusters formed by primary compression.
    pub pairs_promoted: u64,
    /// Two-point clusters seeded at bootstrap.
    pub seeded_pairs: u64,
    pub cluster_merges: u64,
    pub point_cluster_merges: u64,
    pub point_pair_merges: u64,
    pub evicted: u64,
    pub non_finite: u64,
    pub compressions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionKind {
    Discard { cluster_id: u64 },
    NewPairCluster { retained_seq: u64, cluster_id: u64 },
    Retain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentDecision {
    pub kind: DecisionKind,
    pub nearest_cluster: Option<u64>,
    /// Unperturbed Δ² to every cluster, by id.
    pub cluster_distances: Vec<(u64, f64)>,
    /// Δ² under the pooled metric to every retained point, by sequence number.
    pub retained_distances: Vec<(u64, f64)>,
    /// Distance to the winning object before perturbation.
    pub distance: Option<f64>,
    /// Retained point pushed out to the outlier log by this call.
    pub evicted: Option<u64>,
}

/// The compression set (clusters), retained set and bookkeeping for one
/// stream.
#[derive(Debug, Clone)]
pub struct ModelState {
    config: EngineConfig,
    dim: Option<usize>,
    clusters: Vec<Cluster>,
    retained: VecDeque<RetainedPoint>,
    outliers: Vec<OutlierEntry>,
    counters: Counters,
    next_cluster_id: u64,
    thresholds: HashMap<u64, f64>,
    pooled: Option<SpdMatrix>,
    /// Secondary pair scores carried between compressions.
    pub(crate) pair_scores: crate::secondary::PairCache,
}

impl ModelState {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            dim: None,
            clusters: Vec::new(),
            retained: VecDeque::new(),
            outliers: Vec::new(),
            counters: Counters::default(),
            next_cluster_id: 0,
            thresholds: HashMap::new(),
            pooled: None,
            pair_scores: Default::default(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster(&self, id: u64) -> Option<&Cluster> {
        self.cluster_index(id).map(|i| &self.clusters[i])
    }

    fn cluster_index(&self, id: u64) -> Option<usize> {
        self.clusters.binary_search_by_key(&id, |c| c.id).ok()
    }

    pub fn retained(&self) -> &VecDeque<RetainedPoint> {
        &self.retained
    }

    pub fn outliers(&self) -> &[OutlierEntry] {
        &self.outliers
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub(crate) fn counters_mut(&mut self) -> &mut Counters {
        &mut self.counters
    }

    pub fn next_cluster_id(&self) -> u64 {
        self.next_cluster_id
    }

    pub fn rs_capacity(&self) -> usize {
        self.config.rs_capacity_for(self.dim.unwrap_or(1))
    }

    /// Points currently represented by clusters.
    pub fn clustered_points(&self) -> u64 {
        self.clusters.iter().map(|c| c.n()).sum()
    }

    /// `processed == clustered + retained + outliers`.
    pub fn is_balanced(&self) -> bool {
        self.counters.processed
            == self.clustered_points() + self.retained.len() as u64 + self.outliers.len() as u64
    }

    /// Scalars held for clusters and retained points.
    pub fn stored_scalars(&self) -> usize {
        let clusters: usize = self
            .clusters
            .iter()
            .map(|c| 1 + c.summary.sum_outer_packed().len() + c.summary.sum_vec().len() + 3)
            .sum();
        let retained: usize = self.retained.iter().map(|r| r.point.len()).sum();
        clusters + retained
    }

    pub(crate) fn set_dim(&mut self, p: usize) -> Result<()> {
        match self.dim {
            None => {
                if p == 0 {
                    return Err(Error::InvalidInput("zero-dimensional point".into()));
                }
                self.dim = Some(p);
                Ok(())
            }
            Some(d) => check_dim(d, p),
        }
    }

    /// Hotelling threshold for a cluster of `n` points, memoized.
    pub fn threshold(&mut self, n: u64) -> f64 {
        let p = self.dim.expect("dimension known once clusters exist");
        let alpha = self.config.alpha;
        *self
            .thresholds
            .entry(n)
            .or_insert_with(|| hotelling_threshold(p, n, alpha).expect("validated alpha, n >= 2"))
    }

    /// Pooled shrunk covariance of all clusters; identity with no clusters.
    pub fn pooled(&mut self) -> &SpdMatrix {
        if self.pooled.is_none() {
            let p = self.dim.expect("dimension known");
            let m = if self.clusters.is_empty() {
                DMatrix::identity(p, p)
            } else {
                metric::pooled_covariance(self.clusters.iter().map(|c| (c.n(), c.shrunk.matrix())))
                    .expect("non-empty")
            };
            self.pooled = Some(SpdMatrix::new(m).expect("convex combination of SPD matrices"));
        }
        self.pooled.as_ref().unwrap()
    }

    pub(crate) fn allocate_id(&mut self) -> u64 {
        let id = self.next_cluster_id;
        self.next_cluster_id += 1;
        id
    }

    /// Add a new cluster; ids are allocated in increasing order so the
    /// cluster list stays sorted by id.
    pub(crate) fn insert_cluster(&mut self, summary: ClusterSummary) -> u64 {
        let id = self.allocate_id();
        self.clusters.push(Cluster::new(id, summary, self.config.metric_mode));
        self.pooled = None;
        id
    }

    pub(crate) fn add_to_cluster(&mut self, id: u64, x: &[f64]) -> Result<()> {
        let mode = self.config.metric_mode;
        let idx = self.cluster_index(id).ok_or_else(|| Error::InvalidInput(format!("no cluster {id}")))?;
        let c = &mut self.clusters[idx];
        c.summary.add_point(x)?;
        c.refresh(mode);
        self.pooled = None;
        Ok(())
    }

    /// Merge cluster `b` into cluster `a`; `a` keeps its id.
    pub(crate) fn merge_clusters(&mut self, a: u64, b: u64) -> Result<()> {
        let mode = self.config.metric_mode;
        let ib = self.cluster_index(b).ok_or_else(|| Error::InvalidInput(format!("no cluster {b}")))?;
        let removed = self.clusters.remove(ib);
        let ia = self.cluster_index(a).ok_or_else(|| Error::InvalidInput(format!("no cluster {a}")))?;
        let c = &mut self.clusters[ia];
        c.summary = c.summary.merge(&removed.summary)?;
        c.refresh(mode);
        self.pooled = None;
        Ok(())
    }

    pub(crate) fn take_retained(&mut self, seq: u64) -> Option<RetainedPoint> {
        let idx = self.retained.iter().position(|r| r.seq == seq)?;
        self.retained.remove(idx)
    }

    /// Append to the retained set, evicting the oldest point on overflow.
    pub(crate) fn push_retained(&mut self, seq: u64, point: Vec<f64>) -> Option<u64> {
        self.retained.push_back(RetainedPoint { seq, point });
        if self.retained.len() > self.rs_capacity() {
            let old = self.retained.pop_front().expect("non-empty");
            self.counters.evicted += 1;
            let seq = old.seq;
            self.outliers.push(OutlierEntry { seq, reason: OutlierReason::Evicted, point: Some(old.point) });
            return Some(seq);
        }
        None
    }

    pub(crate) fn push_non_finite(&mut self, seq: u64) {
        self.counters.non_finite += 1;
        self.outliers.push(OutlierEntry { seq, reason: OutlierReason::NonFinite, point: None });
    }

    pub(crate) fn restore(
        config: EngineConfig,
        dim: Option<usize>,
        clusters: Vec<(u64, ClusterSummary)>,
        retained: Vec<RetainedPoint>,
        outliers: Vec<OutlierEntry>,
        counters: Counters,
        next_cluster_id: u64,
    ) -> Result<Self> {
        let mut model = Self::new(config)?;
        model.dim = dim;
        let mut last = None;
        for (id, summary) in clusters {
            summary.validate()?;
            if let Some(p) = dim {
                check_dim(p, summary.dim())?;
            }
            if last.is_some_and(|l| id <= l) || id >= next_cluster_id {
                return Err(Error::InvalidInput("cluster ids must be increasing and below next id".into()));
            }
            last = Some(id);
            model.clusters.push(Cluster::new(id, summary, model.config.metric_mode));
        }
        for r in &retained {
            if let Some(p) = dim {
                check_dim(p, r.point.len())?;
            }
        }
        model.retained = retained.into();
        model.outliers = outliers;
        model.counters = counters;
        model.next_cluster_id = next_cluster_id;
        if !model.is_balanced() {
            return Err(Error::InvalidInput("snapshot point counts do not balance".into()));
        }
        Ok(model)
    }

    /// Route one point. `seq` is its position in the stream.
    pub fn assign(&mut self, seq: u64, x: &[f64]) -> Result<AssignmentDecision> {
        self.set_dim(x.len())?;
        self.counters.processed += 1;
        let exec = self.config.execution;

        let cluster_d: Vec<f64> = par::map_slice(exec, &self.clusters, |c| c.distance_sq(x));
        let retained_d: Vec<f64> = if self.retained.is_empty() {
            Vec::new()
        } else {
            let pooled = self.pooled().clone();
            let (front, back) = self.retained.as_slices();
            let mut d = par::map_slice(exec, front, |r| pooled.mahalanobis_sq(x, &r.point));
            d.extend(par::map_slice(exec, back, |r| pooled.mahalanobis_sq(x, &r.point)));
            d
        };

        let best_cluster = argmin(&cluster_d);
        let best_retained = argmin(&retained_d);

        let cluster_distances = self.clusters.iter().map(|c| c.id).zip(cluster_d.iter().copied()).collect();
        let retained_distances = self.retained.iter().map(|r| r.seq).zip(retained_d.iter().copied()).collect();
        let nearest_cluster = best_cluster.map(|i| self.clusters[i].id);

        // Clusters win exact ties against retained points.
        let winner = match (best_cluster, best_retained) {
            (None, None) => None,
            (Some(c), None) => Some(Winner::Cluster(c)),
            (None, Some(r)) => Some(Winner::Retained(r)),
            (Some(c), Some(r)) => {
                if cluster_d[c] <= retained_d[r] {
                    Some(Winner::Cluster(c))
                } else {
                    Some(Winner::Retained(r))
                }
            }
        };

        let thresholds: Vec<f64> = {
            let ns: Vec<u64> = self.clusters.iter().map(|c| c.n()).collect();
            ns.into_iter().map(|n| self.threshold(n)).collect()
        };
        let perturbed = |own: Option<usize>| -> Vec<f64> {
            cluster_d
                .iter()
                .zip(&self.clusters)
                .zip(&thresholds)
                .enumerate()
                .map(|(i, ((&d, c), &t))| {
                    perturbed_distance(PerturbationInputs {
                        delta_sq: d,
                        t_alpha: t,
                        n: c.n(),
                        is_own: own == Some(i),
                    })
                })
                .collect()
        };

        let mut decision = AssignmentDecision {
            kind: DecisionKind::Retain,
            nearest_cluster,
            cluster_distances,
            retained_distances,
            distance: None,
            evicted: None,
        };

        match winner {
            None => {}
            Some(Winner::Cluster(j)) => {
                decision.distance = Some(cluster_d[j]);
                let p = perturbed(Some(j));
                let own = p[j];
                let others_ok = p.iter().enumerate().all(|(i, &v)| i == j || own <= v);
                let retained_ok = retained_d.iter().all(|&v| own <= v);
                if others_ok && retained_ok {
                    let id = self.clusters[j].id;
                    self.add_to_cluster(id, x)?;
                    self.counters.discarded += 1;
                    decision.kind = DecisionKind::Discard { cluster_id: id };
                    return Ok(decision);
                }
            }
            Some(Winner::Retained(r)) => {
                decision.distance = Some(retained_d[r]);
                let d_o = retained_d[r];
                let p = perturbed(None);
                if p.iter().all(|&v| d_o < v) {
                    let partner = self.retained[r].seq;
                    let other = self.take_retained(partner).expect("retained point present");
                    let summary = ClusterSummary::from_pair(x, &other.point)?;
                    let id = self.insert_cluster(summary);
                    self.counters.pairs_promoted += 1;
                    decision.kind = DecisionKind::NewPairCluster { retained_seq: partner, cluster_id: id };
                    return Ok(decision);
                }
            }
        }

        self.counters.retained += 1;
        decision.evicted = self.push_retained(seq, x.to_vec());
        Ok(decision)
    }
}

enum Winner {
    Cluster(usize),
    Retained(usize),
}

/// Index of the smallest value; the first one wins ties.
fn argmin(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &d) in v.iter().enumerate() {
        match best {
            Some(b) if v[b] <= d => {}
            _ => best = Some(i),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_with(clusters: &[&[[f64; 2]]]) -> ModelState {
        let mut m = ModelState::new(EngineConfig::default()).unwrap();
        m.set_dim(2).unwrap();
        for pts in clusters {
            let mut s = ClusterSummary::from_pair(&pts[0], &pts[1]).unwrap();
            for x in &pts[2..] {
                s.add_point(x).unwrap();
            }
            m.counters.processed += s.n();
            m.insert_cluster(s);
        }
        m
    }

    fn ring(cx: f64, cy: f64, r: f64, n: usize) -> Vec<[f64; 2]> {
        (0..n)
            .map(|k| {
                let a = k as f64 * 2.399963;
                let rr = r * (0.3 + 0.7 * ((k * 7 % 11) as f64 / 10.0));
                [cx + rr * a.cos(), cy + 0.6 * rr * a.sin()]
            })
            .collect()
    }

    #[test]
    fn empty_model_retains_first_point() {
        let mut m = ModelState::new(EngineConfig::default()).unwrap();
        let d = m.assign(0, &[1.0, 2.0]).unwrap();
        assert_eq!(d.kind, DecisionKind::Retain);
        assert_eq!(d.nearest_cluster, None);
        assert_eq!(m.retained().len(), 1);
        assert!(m.is_balanced());
    }

    #[test]
    fn point_at_centroid_of_separated_cluster_is_discarded() {
        let a = ring(0.0, 0.0, 1.0, 40);
        let b = ring(60.0, 60.0, 1.0, 40);
        let mut m = model_with(&[&a, &b]);
        let c1 = m.clusters()[1].centroid().to_vec();
        let d = m.assign(100, &c1).unwrap();
        assert_eq!(d.kind, DecisionKind::Discard { cluster_id: 1 });
        assert_eq!(d.nearest_cluster, Some(1));
        assert_eq!(m.clusters()[1].n(), 41);
        assert!(m.is_balanced());
    }

    #[test]
    fn equidistant_point_is_vetoed() {
        // Two identical-shape clusters mirrored about x = 0; a point on the
        // mirror line is equally far from both, so inflating the own-cluster
        // distance hands the win to the other cluster.
        let a: Vec<[f64; 2]> = ring(-4.0, 0.0, 1.0, 12);
        let b: Vec<[f64; 2]> = a.iter().map(|p| [-p[0], p[1]]).collect();
        let mut m = model_with(&[&a, &b]);
        let d = m.assign(50, &[0.0, 0.0]).unwrap();
        let (da, db) = (d.cluster_distances[0].1, d.cluster_distances[1].1);
        assert!((da - db).abs() < 1e-9 * da);
        assert_eq!(d.kind, DecisionKind::Retain);
        assert_eq!(m.retained().len(), 1);
    }

    #[test]
    fn close_retained_point_forms_pair_cluster() {
        let a = ring(0.0, 0.0, 1.0, 30);
        let mut m = model_with(&[&a]);
        m.counters.processed += 1;
        m.push_retained(7, vec![50.0, 50.0]);
        let d = m.assign(8, &[50.01, 50.0]).unwrap();
        assert_eq!(d.kind, DecisionKind::NewPairCluster { retained_seq: 7, cluster_id: 1 });
        assert!(m.retained().is_empty());
        assert_eq!(m.clusters().len(), 2);
        assert!(m.is_balanced());
    }

    #[test]
    fn retained_capacity_evicts_oldest() {
        let cfg = EngineConfig { rs_capacity: Some(2), ..Default::default() };
        let mut m = ModelState::new(cfg).unwrap();
        // Without clusters assign() would pair these, so fill the set directly.
        m.set_dim(1).unwrap();
        for s in 0..3 {
            m.counters.processed += 1;
            let ev = m.push_retained(s, vec![s as f64 * 100.0]);
            assert_eq!(ev, if s == 2 { Some(0) } else { None });
        }
        assert_eq!(m.retained().iter().map(|r| r.seq).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(m.outliers()[0].seq, 0);
        assert!(m.is_balanced());
    }

    #[test]
    fn without_clusters_nearest_retained_point_pairs() {
        let mut m = ModelState::new(EngineConfig::default()).unwrap();
        m.assign(0, &[0.0, 0.0]).unwrap();
        let d = m.assign(1, &[5.0, 5.0]).unwrap();
        assert_eq!(d.kind, DecisionKind::NewPairCluster { retained_seq: 0, cluster_id: 0 });
    }

    #[test]
    fn dimension_is_fixed_by_first_point() {
        let mut m = ModelState::new(EngineConfig::default()).unwrap();
        m.assign(0, &[0.0, 0.0]).unwrap();
        assert!(matches!(m.assign(1, &[1.0]), Err(Error::DimensionMismatch { .. })));
    }
}
