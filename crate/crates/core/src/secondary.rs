//! Secondary compression: agglomerative merging of clusters and retained
//! points.
//!
//! All current objects (clusters and retained points) enter one distance
//! table, each pair scored with the distance appropriate to its kinds. The
//! closest pair is merged if its density condition holds:
//!
//! * cluster/cluster: trace-weighted centroid distance `< θ0 ×` the centroid
//!   distance under the size-pooled covariance of the two clusters;
//! * point/cluster: `Δ²_{Ŝ_h}(x, x̄_h) < θ1 · tr(Ŝ_h)`;
//! * point/point: `Δ²` under the pooled covariance of all clusters `< θ2`,
//!   a chi-square quantile.
//!
//! Merging continues with the updated table until the closest pair fails
//! ([`MergeMode::StopAtFirstFailure`]) or no pair passes
//! ([`MergeMode::Exhaustive`]).

use rustc_hash::FxHashMap;

use crate::config::MergeMode;
use crate::error::Result;
use crate::events::{Event, MergeKind};
use crate::metric::SpdMatrix;
use crate::par;
use crate::primary::{Cluster, ModelState};
use crate::special::chi2_quantile;
use crate::summary::ClusterSummary;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub theta0: f64,
    pub theta1: f64,
    pub theta2: f64,
}

impl Thresholds {
    pub fn from_model(model: &ModelState) -> Self {
        let cfg = model.config();
        let p = model.dim().unwrap_or(1) as f64;
        Self {
            theta0: cfg.theta0,
            theta1: cfg.theta1,
            theta2: chi2_quantile(cfg.theta2_level, p),
        }
    }
}

/// `(combined, pooled)` centroid distances between two clusters.
pub fn cluster_cluster_distance(a: &Cluster, b: &Cluster) -> (f64, f64) {
    let (ca, cb) = (a.centroid(), b.centroid());
    let (ma, mb) = (a.metric(), b.metric());
    let (ta, tb) = (ma.trace(), mb.trace());
    let combined = (ta * ma.mahalanobis_sq(ca, cb) + tb * mb.mahalanobis_sq(ca, cb)) / (ta + tb);
    let (na, nb) = (a.n() as f64, b.n() as f64);
    let pooled = (ma.matrix() * na + mb.matrix() * nb) / (na + nb);
    let pooled = SpdMatrix::new(pooled).expect("convex combination of SPD matrices");
    (combined, pooled.mahalanobis_sq(ca, cb))
}

pub fn point_cluster_distance(x: &[f64], c: &Cluster) -> f64 {
    c.distance_sq(x)
}

pub fn point_point_distance(x1: &[f64], x2: &[f64], pooled: &SpdMatrix) -> f64 {
    pooled.mahalanobis_sq(x1, x2)
}

/// A clustering object. Clusters carry their size: ids are never reused and
/// every change to a cluster grows it, so `(id, n)` names one summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum Obj {
    Cluster(u64, u64),
    Point(u64),
}

const PRUNE_MARGIN: f64 = 1e-9;

pub(crate) type PairCache = FxHashMap<(Obj, Obj), Scored>;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Scored {
    distance: f64,
    bound: f64,
    passes: bool,
}

fn score_pair(
    model: &ModelState,
    points: &FxHashMap<u64, &[f64]>,
    pooled: &SpdMatrix,
    th: &Thresholds,
    a: Obj,
    b: Obj,
) -> Scored {
    let point = |seq: u64| points[&seq];
    let cluster = |id: u64| model.cluster(id).expect("live cluster");
    match (a, b) {
        (Obj::Cluster(i, _), Obj::Cluster(j, _)) => {
            let (combined, pooled_d) = cluster_cluster_distance(cluster(i), cluster(j));
            let bound = th.theta0 * pooled_d;
            // Coinciding centroids give 0 on both sides.
            let passes = combined < bound || combined == 0.0;
            Scored { distance: combined, bound, passes }
        }
        (Obj::Cluster(i, _), Obj::Point(s)) | (Obj::Point(s), Obj::Cluster(i, _)) => {
            let c = cluster(i);
            let d = point_cluster_distance(point(s), c);
            let bound = th.theta1 * c.metric().trace();
            Scored { distance: d, bound, passes: d < bound }
        }
        (Obj::Point(s), Obj::Point(t)) => {
            let d = point_point_distance(point(s), point(t), pooled);
            Scored { distance: d, bound: th.theta2, passes: d < th.theta2 }
        }
    }
}

/// One agglomerative sweep over the model. Returns the merge events in the
/// order they were applied.
pub fn secondary_compress(model: &mut ModelState) -> Result<Vec<Event>> {
    let th = Thresholds::from_model(model);
    compress_with(model, &th, model.config().merge_mode)
}

pub fn compress_with(model: &mut ModelState, th: &Thresholds, mode: MergeMode) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    if model.dim().is_none() {
        return Ok(events);
    }
    let exec = model.config().execution;
    // Cluster/cluster and point/cluster scores stay valid while both objects
    // are unchanged, within a sweep and across sweeps. Point/point scores
    // depend on every cluster through the pooled metric and are recomputed
    // each round.
    let mut cache = std::mem::take(&mut model.pair_scores);
    let result = sweep(model, th, mode, exec, &mut cache, &mut events);
    let live: rustc_hash::FxHashSet<Obj> = objects(model).into_iter().collect();
    cache.retain(|(a, b), _| live.contains(a) && live.contains(b));
    model.pair_scores = cache;
    result.map(|()| events)
}

fn objects(model: &ModelState) -> Vec<Obj> {
    model
        .clusters()
        .iter()
        .map(|c| Obj::Cluster(c.id(), c.n()))
        .chain(model.retained().iter().map(|r| Obj::Point(r.seq)))
        .collect()
}

fn sweep(
    model: &mut ModelState,
    th: &Thresholds,
    mode: MergeMode,
    exec: par::Execution,
    cache: &mut PairCache,
    events: &mut Vec<Event>,
) -> Result<()> {
    loop {
        let objs = objects(model);
        if objs.len() < 2 {
            break;
        }
        let pooled = model.pooled().clone();
        // One row per object: the row's best pair plus any scores it had to
        // compute. Rows are reduced in order and pairs within a row are
        // visited by increasing j, so strict comparison keeps the lowest
        // (i, j) on ties.
        let rows = {
            let m: &ModelState = model;
            let cache: &PairCache = cache;
            let points: FxHashMap<u64, &[f64]> = m.retained().iter().map(|r| (r.seq, r.point.as_slice())).collect();
            let whitened: FxHashMap<u64, Vec<f64>> =
                m.retained().iter().map(|r| (r.seq, pooled.whiten(&r.point))).collect();
            par::map_range(exec, objs.len() - 1, |i| {
                let mut best: Option<(usize, Scored)> = None;
                let mut fresh = Vec::new();
                for j in i + 1..objs.len() {
                    let key = (objs[i], objs[j]);
                    // Point/point pairs that cannot beat the row's best (or
                    // cannot pass, when failing pairs are skipped) are
                    // dropped on their whitened distance, which agrees with
                    // the exact one to rounding.
                    if let (Obj::Point(a), Obj::Point(b)) = key {
                        let (za, zb) = (&whitened[&a], &whitened[&b]);
                        let approx: f64 = za.iter().zip(zb).map(|(u, v)| (u - v) * (u - v)).sum();
                        let floor = approx * (1.0 - PRUNE_MARGIN);
                        if best.is_some_and(|(_, b)| floor >= b.distance)
                            || (mode == MergeMode::Exhaustive && floor >= th.theta2)
                        {
                            continue;
                        }
                    }
                    let s = match (key, cache.get(&key)) {
                        ((Obj::Point(_), Obj::Point(_)), _) | (_, None) => {
                            let s = score_pair(m, &points, &pooled, th, objs[i], objs[j]);
                            if !matches!(key, (Obj::Point(_), Obj::Point(_))) {
                                fresh.push((key, s));
                            }
                            s
                        }
                        (_, Some(s)) => *s,
                    };
                    if mode == MergeMode::Exhaustive && !s.passes {
                        continue;
                    }
                    if best.is_none_or(|(_, b)| s.distance < b.distance) {
                        best = Some((j, s));
                    }
                }
                (best, fresh)
            })
        };
        let mut chosen: Option<((usize, usize), Scored)> = None;
        for (i, (best, fresh)) in rows.into_iter().enumerate() {
            cache.extend(fresh);
            if let Some((j, s)) = best {
                if chosen.is_none_or(|(_, c)| s.distance < c.distance) {
                    chosen = Some(((i, j), s));
                }
            }
        }
        let Some(((i, j), s)) = chosen else { break };
        if !s.passes {
            break;
        }
        events.push(apply_merge(model, objs[i], objs[j], s)?);
    }
    Ok(())
}

fn apply_merge(model: &mut ModelState, a: Obj, b: Obj, s: Scored) -> Result<Event> {
    let (kind, clusters, points, into) = match (a, b) {
        (Obj::Cluster(i, _), Obj::Cluster(j, _)) => {
            model.merge_clusters(i, j)?;
            model.counters_mut().cluster_merges += 1;
            (MergeKind::ClusterCluster, vec![i, j], vec![], i)
        }
        (Obj::Cluster(i, _), Obj::Point(seq)) | (Obj::Point(seq), Obj::Cluster(i, _)) => {
            let r = model.take_retained(seq).expect("retained point");
            model.add_to_cluster(i, &r.point)?;
            model.counters_mut().point_cluster_merges += 1;
            (MergeKind::PointCluster, vec![i], vec![seq], i)
        }
        (Obj::Point(s1), Obj::Point(s2)) => {
            let r1 = model.take_retained(s1).expect("retained point");
            let r2 = model.take_retained(s2).expect("retained point");
            let id = model.insert_cluster(ClusterSummary::from_pair(&r1.point, &r2.point)?);
            model.counters_mut().point_pair_merges += 1;
            (MergeKind::PointPoint, vec![id], vec![s1, s2], id)
        }
    };
    Ok(Event::Merge { kind, clusters, points, into, distance: s.distance, threshold: s.bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::shrinkage::MetricMode;
    use nalgebra::DMatrix;

    fn summary(points: &[Vec<f64>]) -> ClusterSummary {
        let mut s = ClusterSummary::from_pair(&points[0], &points[1]).unwrap();
        for x in &points[2..] {
            s.add_point(x).unwrap();
        }
        s
    }

    fn cross(cx: f64, cy: f64, sx: f64, sy: f64) -> Vec<Vec<f64>> {
        vec![
            vec![cx + sx, cy],
            vec![cx - sx, cy],
            vec![cx, cy + sy],
            vec![cx, cy - sy],
            vec![cx + 0.5 * sx, cy + 0.5 * sy],
            vec![cx - 0.5 * sx, cy - 0.5 * sy],
        ]
    }

    #[test]
    fn identical_centroids_have_zero_distances() {
        let a = Cluster::new(0, summary(&cross(1.0, 1.0, 2.0, 0.5)), MetricMode::Full);
        let b = Cluster::new(1, summary(&cross(1.0, 1.0, 0.5, 3.0)), MetricMode::Full);
        let (c, p) = cluster_cluster_distance(&a, &b);
        assert!(c.abs() < 1e-12 && p.abs() < 1e-12);
    }

    #[test]
    fn hand_evaluated_cluster_distances() {
        // Ŝ₁ = diag(4, 1), Ŝ₂ = I, equal sizes, centroid gap (2, 0):
        // Δ²₁ = 1, Δ²₂ = 4, combined = (5·1 + 2·4) / 7 = 13/7,
        // pooled = diag(2.5, 1) gives 4 / 2.5 = 1.6.
        let mut a = Cluster::new(0, summary(&cross(0.0, 0.0, 1.0, 1.0)), MetricMode::Full);
        let mut b = Cluster::new(1, summary(&cross(2.0, 0.0, 1.0, 1.0)), MetricMode::Full);
        a = with_metric(a, DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0])));
        b = with_metric(b, DMatrix::identity(2, 2));
        let (c, p) = cluster_cluster_distance(&a, &b);
        assert!((c - 13.0 / 7.0).abs() < 1e-12, "{c}");
        assert!((p - 1.6).abs() < 1e-12, "{p}");
    }

    fn with_metric(c: Cluster, m: DMatrix<f64>) -> Cluster {
        c.with_shrunk_matrix(m)
    }

    #[test]
    fn identity_metric_gives_squared_euclidean() {
        let id = SpdMatrix::new(DMatrix::identity(3, 3)).unwrap();
        assert_eq!(point_point_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], &id), 0.0);
        let d = point_point_distance(&[1.0, 2.0, 3.0], &[0.0, 0.0, 1.0], &id);
        assert!((d - 9.0).abs() < 1e-12);
    }

    #[test]
    fn point_at_centroid_joins_cluster() {
        let cfg = EngineConfig { theta1: 1e-6, ..Default::default() };
        let mut m = ModelState::new(cfg).unwrap();
        m.set_dim(2).unwrap();
        let s = summary(&cross(3.0, -1.0, 1.0, 2.0));
        let n = s.n();
        m.insert_cluster(s);
        m.counters_mut().processed = n + 1;
        m.push_retained(99, vec![3.0, -1.0]);
        let before = m.cluster(0).unwrap().summary().clone();
        let events = secondary_compress(&mut m).unwrap();
        assert_eq!(events.len(), 1);
        assert!(m.retained().is_empty());
        assert_eq!(m.cluster(0).unwrap().summary(), &before.with_point(&[3.0, -1.0]).unwrap());
        assert!(m.is_balanced());
    }

    #[test]
    fn far_retained_points_do_not_pair() {
        let mut m = ModelState::new(EngineConfig::default()).unwrap();
        m.set_dim(3).unwrap();
        m.counters_mut().processed = 2;
        // No clusters: pooled metric is the identity.
        let gap = chi2_quantile(0.99, 3.0).sqrt() * 1.01;
        m.push_retained(0, vec![0.0, 0.0, 0.0]);
        m.push_retained(1, vec![gap, 0.0, 0.0]);
        let th = Thresholds { theta0: 1.0, theta1: 1.0, theta2: chi2_quantile(0.99, 3.0) };
        let events = compress_with(&mut m, &th, MergeMode::StopAtFirstFailure).unwrap();
        assert!(events.is_empty());
        assert_eq!(m.retained().len(), 2);
    }
}
