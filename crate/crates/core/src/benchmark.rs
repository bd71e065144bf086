//! The synthetic benchmark matrix: cluster count × dimension × chunk size ×
//! metric, repeated over seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::engine::process_stream_with_events;
use crate::error::Result;
use crate::par::{self, Execution};
use crate::shrinkage::MetricMode;
use crate::synth::{generate, score, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMatrix {
    pub ks: Vec<usize>,
    pub ps: Vec<usize>,
    pub chunks: Vec<usize>,
    pub metrics: Vec<MetricMode>,
    pub seeds: Vec<u64>,
    pub points_per_cluster: usize,
    /// Seeded clusters per run; `None` uses [`default_init_clusters`].
    pub init_clusters: Option<usize>,
    /// Clusters smaller than this share of the stream count as outlier
    /// groups.
    pub min_share: f64,
    pub base: EngineConfig,
}

impl Default for BenchMatrix {
    fn default() -> Self {
        Self {
            ks: vec![5, 20],
            ps: vec![5, 10, 20],
            chunks: vec![25, 50],
            metrics: vec![MetricMode::Full, MetricMode::Diagonal],
            seeds: (0..10).collect(),
            points_per_cluster: 1000,
            init_clusters: None,
            min_share: 0.01,
            base: EngineConfig::default(),
        }
    }
}

/// Half the true cluster count, rounded up.
pub fn default_init_clusters(k: usize) -> usize {
    k.div_ceil(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchCell {
    pub k: usize,
    pub p: usize,
    pub chunk: usize,
    pub metric: MetricMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub k: usize,
    pub p: usize,
    pub chunk: usize,
    pub metric: MetricMode,
    pub seed: u64,
    pub estimated_clusters: usize,
    pub total_clusters: usize,
    pub retained: usize,
    pub small_clusters: usize,
    pub purity: f64,
    pub runtime_secs: f64,
}

impl BenchMatrix {
    pub fn cells(&self) -> Vec<BenchCell> {
        let mut out = Vec::new();
        for &k in &self.ks {
            for &p in &self.ps {
                for &chunk in &self.chunks {
                    for &metric in &self.metrics {
                        for &seed in &self.seeds {
                            out.push(BenchCell { k, p, chunk, metric, seed });
                        }
                    }
                }
            }
        }
        out
    }

    /// Stream seed for a cell. Cells differing only in chunk size or metric
    /// see the same data.
    pub fn stream_spec(&self, cell: &BenchCell) -> SyntheticSpec {
        SyntheticSpec {
            k: cell.k,
            p: cell.p,
            points_per_cluster: self.points_per_cluster,
            seed: cell.seed ^ ((cell.k as u64) << 32) ^ ((cell.p as u64) << 48),
            ..SyntheticSpec::default()
        }
    }

    pub fn run_cell(&self, cell: &BenchCell) -> Result<BenchRow> {
        let data = generate(&self.stream_spec(cell))?;
        let config = EngineConfig {
            chunk_size: cell.chunk,
            metric_mode: cell.metric,
            init_clusters: self.init_clusters.unwrap_or_else(|| default_init_clusters(cell.k)),
            execution: Execution::Sequential,
            ..self.base.clone()
        };
        let (_, report, events) = process_stream_with_events(&data.points, config, true)?;
        let min_size = (self.min_share * data.points.len() as f64).ceil() as u64;
        let s = score(&report, &events, &data.labels, min_size)?;
        Ok(BenchRow {
            k: cell.k,
            p: cell.p,
            chunk: cell.chunk,
            metric: cell.metric,
            seed: cell.seed,
            estimated_clusters: s.estimated_clusters,
            total_clusters: s.total_clusters,
            retained: s.retained_count,
            small_clusters: s.small_cluster_count,
            purity: s.purity,
            runtime_secs: report.wall_time_secs,
        })
    }

    /// Run every cell; cells are spread over threads when `exec` allows it.
    pub fn run(&self, exec: Execution) -> Result<Vec<BenchRow>> {
        let cells = self.cells();
        par::map_range(exec, cells.len(), |i| self.run_cell(&cells[i])).into_iter().collect()
    }
}

pub fn write_rows_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| crate::Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub k: usize,
    pub p: usize,
    pub chunk: usize,
    pub metric: MetricMode,
    pub runs: usize,
    /// Most frequent estimated count; ties go to the smaller count.
    pub modal_clusters: usize,
    pub modal_share: f64,
    pub mean_clusters: f64,
    pub max_retained: usize,
    pub mean_purity: f64,
    pub max_runtime_secs: f64,
}

/// Collapse the seed dimension.
pub fn summarize(rows: &[BenchRow]) -> Vec<CellSummary> {
    let mut groups: BTreeMap<(usize, usize, usize, u8), Vec<&BenchRow>> = BTreeMap::new();
    for r in rows {
        let m = match r.metric {
            MetricMode::Full => 0,
            MetricMode::Diagonal => 1,
        };
        groups.entry((r.k, r.p, r.chunk, m)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
            for r in &g {
                *freq.entry(r.estimated_clusters).or_default() += 1;
            }
            let (modal, count) = freq.iter().fold((0, 0), |best, (&c, &f)| if f > best.1 { (c, f) } else { best });
            let n = g.len() as f64;
            CellSummary {
                k: g[0].k,
                p: g[0].p,
                chunk: g[0].chunk,
                metric: g[0].metric,
                runs: g.len(),
                modal_clusters: modal,
                modal_share: count as f64 / n,
                mean_clusters: g.iter().map(|r| r.estimated_clusters as f64).sum::<f64>() / n,
                max_retained: g.iter().map(|r| r.retained).max().unwrap_or(0),
                mean_purity: g.iter().map(|r| r.purity).sum::<f64>() / n,
                max_runtime_secs: g.iter().map(|r| r.runtime_secs).fold(0.0, f64::max),
            }
        })
        .collect()
}

pub fn format_table(summary: &[CellSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>4} {:>8} {:>4} {:>6} {:>5} {:>9} {:>6} {:>8} {:>9} {:>7} {:>9}",
        "k", "method", "p", "chunk", "runs", "clusters", "share", "mean", "retained", "purity", "max_secs"
    );
    for c in summary {
        let method = match c.metric {
            MetricMode::Full => "PA",
            MetricMode::Diagonal => "BFR",
        };
        let _ = writeln!(
            s,
            "{:>4} {:>8} {:>4} {:>6} {:>5} {:>9} {:>6.2} {:>8.2} {:>9} {:>7.3} {:>9.2}",
            c.k,
            method,
            c.p,
            c.chunk,
            c.runs,
            c.modal_clusters,
            c.modal_share,
            c.mean_clusters,
            c.max_retained,
            c.mean_purity,
            c.max_runtime_secs
        );
    }
    s
}
