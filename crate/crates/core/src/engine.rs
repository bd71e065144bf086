//! Stream driver: bootstrap, per-point primary compression, periodic
//! secondary compression and the final report.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::events::{AssignKind, Event, OutlierReason};
use crate::primary::{Counters, DecisionKind, ModelState, OutlierEntry, RetainedPoint};
use crate::secondary::secondary_compress;
use crate::shrinkage::ShrinkageWeights;
use crate::snapshot::ModelSnapshot;
use crate::summary::ClusterSummary;

/// Greedy closest-pair seeding: repeatedly pair the two closest unpaired
/// points (squared Euclidean distance, ties broken by index) until `k0`
/// pairs exist or fewer than two points remain.
pub fn greedy_pairs(points: &[Vec<f64>], k0: usize) -> Vec<(usize, usize)> {
    let n = points.len();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            candidates.push((d, i, j));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used = vec![false; n];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if pairs.len() == k0 {
            break;
        }
        if !used[i] && !used[j] {
            used[i] = true;
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Seed `k0` pair clusters from `points` and route the rest through
/// primary compression. Points are numbered from zero in slice order.
pub fn bootstrap(points: &[Vec<f64>], k0: usize, config: EngineConfig) -> Result<ModelState> {
    let mut model = ModelState::new(EngineConfig { init_clusters: k0.max(1), ..config })?;
    let buffered: Vec<(u64, Vec<f64>)> = points.iter().cloned().enumerate().map(|(i, x)| (i as u64, x)).collect();
    for (i, (_, x)) in buffered.iter().enumerate() {
        model.set_dim(x.len()).map_err(|e| at_position(e, i as u64))?;
    }
    seed_and_route(&mut model, buffered, k0, &mut None)?;
    Ok(model)
}

fn at_position(e: Error, position: u64) -> Error {
    match e {
        Error::DimensionMismatch { expected, actual } => Error::StreamDimension { position, expected, actual },
        other => other,
    }
}

fn seed_and_route(
    model: &mut ModelState,
    buffered: Vec<(u64, Vec<f64>)>,
    k0: usize,
    events: &mut Option<Vec<Event>>,
) -> Result<()> {
    let points: Vec<Vec<f64>> = buffered.iter().map(|(_, x)| x.clone()).collect();
    let pairs = greedy_pairs(&points, k0);
    let mut paired = vec![false; points.len()];
    for &(i, j) in &pairs {
        paired[i] = true;
        paired[j] = true;
        let id = model.insert_cluster(ClusterSummary::from_pair(&points[i], &points[j])?);
        let c = model.counters_mut();
        c.processed += 2;
        c.seeded_pairs += 1;
        if let Some(ev) = events {
            ev.push(Event::Seed { points: [buffered[i].0, buffered[j].0], cluster_id: id });
        }
    }
    for (k, (seq, x)) in buffered.into_iter().enumerate() {
        if !paired[k] {
            route(model, seq, &x, events)?;
        }
    }
    Ok(())
}

fn route(model: &mut ModelState, seq: u64, x: &[f64], events: &mut Option<Vec<Event>>) -> Result<()> {
    let decision = model.assign(seq, x)?;
    if let Some(ev) = events {
        let distance = decision.distance;
        ev.push(match decision.kind {
            DecisionKind::Discard { cluster_id } => Event::Assign {
                seq,
                kind: AssignKind::Discard,
                cluster_id: Some(cluster_id),
                partner: None,
                distance,
            },
            DecisionKind::NewPairCluster { retained_seq, cluster_id } => Event::Assign {
                seq,
                kind: AssignKind::NewPair,
                cluster_id: Some(cluster_id),
                partner: Some(retained_seq),
                distance,
            },
            DecisionKind::Retain => Event::Assign { seq, kind: AssignKind::Retain, cluster_id: None, partner: None, distance },
        });
        if let Some(old) = decision.evicted {
            ev.push(Event::Outlier { seq: old, reason: OutlierReason::Evicted });
        }
    }
    Ok(())
}

/// One row of the cluster-count-over-time series, taken at every secondary
/// compression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub processed: u64,
    pub clusters_before: usize,
    pub clusters_after: usize,
    pub retained: usize,
    pub merges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub id: u64,
    pub n: u64,
    pub centroid: Vec<f64>,
    /// Shrunk covariance, row by row.
    pub covariance: Vec<Vec<f64>>,
    pub weights: ShrinkageWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dim: Option<usize>,
    pub cluster_count: usize,
    pub clusters: Vec<ClusterReport>,
    pub retained: Vec<RetainedPoint>,
    pub outliers: Vec<OutlierEntry>,
    pub counters: Counters,
    pub series: Vec<SeriesEntry>,
    /// Largest number of scalars held at once (summaries, retained points
    /// and the bootstrap buffer).
    pub peak_stored_scalars: usize,
    pub wall_time_secs: f64,
    pub snapshot: ModelSnapshot,
}

impl RunReport {
    pub fn build(model: &ModelState, series: Vec<SeriesEntry>, peak_stored_scalars: usize, wall_time_secs: f64) -> Self {
        let clusters = model
            .clusters()
            .iter()
            .map(|c| {
                let m = c.shrunk().matrix();
                ClusterReport {
                    id: c.id(),
                    n: c.n(),
                    centroid: c.centroid().to_vec(),
                    covariance: (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect(),
                    weights: c.shrunk().weights,
                }
            })
            .collect();
        Self {
            dim: model.dim(),
            cluster_count: model.clusters().len(),
            clusters,
            retained: model.retained().iter().cloned().collect(),
            outliers: model.outliers().to_vec(),
            counters: model.counters().clone(),
            series,
            peak_stored_scalars,
            wall_time_secs,
            snapshot: ModelSnapshot::from_model(model),
        }
    }

    pub fn sizes(&self) -> Vec<u64> {
        self.clusters.iter().map(|c| c.n).collect()
    }
}

/// Push-driven stream processor.
#[derive(Debug)]
pub struct Engine {
    model: ModelState,
    buffer: Vec<(u64, Vec<f64>)>,
    bootstrapped: bool,
    next_seq: u64,
    since_compress: usize,
    events: Option<Vec<Event>>,
    series: Vec<SeriesEntry>,
    peak_scalars: usize,
    started: Instant,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        Ok(Self::from_model(ModelState::new(config)?, false))
    }

    /// Continue a stream from a saved model. Sequence numbers carry on from
    /// the snapshot's processed count.
    pub fn resume(snapshot: &ModelSnapshot) -> Result<Self> {
        let model = snapshot.to_model()?;
        let started = model.counters().processed > 0;
        Ok(Self::from_model(model, started))
    }

    fn from_model(model: ModelState, bootstrapped: bool) -> Self {
        let next_seq = model.counters().processed;
        Self {
            model,
            buffer: Vec::new(),
            bootstrapped,
            next_seq,
            since_compress: 0,
            events: None,
            series: Vec::new(),
            peak_scalars: 0,
            started: Instant::now(),
        }
    }

    /// Keep the decision and merge events for later inspection.
    pub fn record_events(mut self, on: bool) -> Self {
        self.events = on.then(Vec::new);
        self
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn events(&self) -> Option<&[Event]> {
        self.events.as_deref()
    }

    /// Feed the next record of the stream.
    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        let seq = self.next_seq;
        self.model.set_dim(x.len()).map_err(|e| at_position(e, seq))?;
        self.next_seq += 1;

        if x.iter().any(|v| !v.is_finite()) {
            self.model.counters_mut().processed += 1;
            self.model.push_non_finite(seq);
            if let Some(ev) = &mut self.events {
                ev.push(Event::Outlier { seq, reason: OutlierReason::NonFinite });
            }
            return self.check();
        }

        if !self.bootstrapped {
            self.buffer.push((seq, x.to_vec()));
            self.check()?;
            if self.buffer.len() >= self.model.config().bootstrap_len() {
                self.run_bootstrap()?;
            }
        } else {
            route(&mut self.model, seq, x, &mut self.events)?;
            self.since_compress += 1;
        }

        if self.since_compress >= self.model.config().chunk_size {
            self.compress()?;
        }
        self.check()
    }

    fn run_bootstrap(&mut self) -> Result<()> {
        let buffered = std::mem::take(&mut self.buffer);
        self.since_compress += buffered.len();
        let k0 = self.model.config().init_clusters;
        seed_and_route(&mut self.model, buffered, k0, &mut self.events)?;
        self.bootstrapped = true;
        Ok(())
    }

    fn compress(&mut self) -> Result<()> {
        let before = self.model.clusters().len();
        let merges = secondary_compress(&mut self.model)?;
        self.model.counters_mut().compressions += 1;
        log::debug!(
            "compression at {}: {} -> {} clusters, {} merges, {} retained",
            self.model.counters().processed,
            before,
            self.model.clusters().len(),
            merges.len(),
            self.model.retained().len()
        );
        self.series.push(SeriesEntry {
            processed: self.model.counters().processed,
            clusters_before: before,
            clusters_after: self.model.clusters().len(),
            retained: self.model.retained().len(),
            merges: merges.len(),
        });
        if let Some(ev) = &mut self.events {
            ev.extend(merges);
        }
        self.since_compress = 0;
        self.check()
    }

    fn stored_scalars(&self) -> usize {
        self.model.stored_scalars() + self.buffer.iter().map(|(_, x)| x.len()).sum::<usize>()
    }

    /// Point balance and the memory bound, checked after every step.
    fn check(&mut self) -> Result<()> {
        if !self.model.is_balanced() {
            return Err(Error::Invariant(format!(
                "point balance broken after {} records",
                self.model.counters().processed
            )));
        }
        let stored = self.stored_scalars();
        if let Some(p) = self.model.dim() {
            let bound = self.model.clusters().len() * ClusterSummary::scalar_count(p)
                + self.model.rs_capacity() * p
                + self.model.config().bootstrap_len() * p;
            if stored > bound {
                return Err(Error::Invariant(format!("stored {stored} scalars, bound is {bound}")));
            }
        }
        self.peak_scalars = self.peak_scalars.max(stored);
        Ok(())
    }

    /// Flush the bootstrap buffer, run the closing secondary compression and
    /// build the report.
    pub fn finish(mut self) -> Result<(ModelState, RunReport, Vec<Event>)> {
        if !self.bootstrapped && !self.buffer.is_empty() {
            self.run_bootstrap()?;
        }
        if self.model.dim().is_some() {
            self.compress()?;
        }
        let wall = self.started.elapsed().as_secs_f64();
        let report = RunReport::build(&self.model, self.series, self.peak_scalars, wall);
        Ok((self.model, report, self.events.unwrap_or_default()))
    }
}

/// Run a whole stream. Each item is read exactly once.
pub fn process_stream<I>(source: I, config: EngineConfig) -> Result<(ModelState, RunReport)>
where
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    let (model, report, _) = process_stream_with_events(source, config, false)?;
    Ok((model, report))
}

pub fn process_stream_with_events<I>(
    source: I,
    config: EngineConfig,
    record: bool,
) -> Result<(ModelState, RunReport, Vec<Event>)>
where
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    let mut engine = Engine::new(config)?.record_events(record);
    for x in source {
        engine.push(x.as_ref())?;
    }
    engine.finish()
}
