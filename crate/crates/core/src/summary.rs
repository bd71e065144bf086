//! Mergeable per-cluster summary statistics.
//!
//! A cluster keeps the sum of outer products, the sum of its points, its
//! size, and the three scalars `q`, `s_coef`, `t_coef` that feed the
//! unbiased trace estimators. Everything else (centroid, sample covariance,
//! shrunk covariance) is derived from these on demand.
//!
//! `q` depends on insertion order: each added point contributes the fourth
//! power of its Euclidean distance to the centroid as it was *before* the
//! point joined.
//!
//! A lone point never carries a summary. Summaries start from a pair, and a
//! singleton joining a cluster goes through [`ClusterSummary::add_point`];
//! `merge` is only defined between two summaries (both sides hold at least
//! two points).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Number of scalars in the upper triangle of a symmetric `p x p` matrix.
pub fn packed_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Index of `(i, j)`, `i <= j`, in row-major upper-triangle storage.
#[inline]
fn packed_index(p: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < p);
    // Rows 0..i hold p + (p-1) + ... + (p-i+1) entries.
    i * p - i * i.saturating_sub(1) / 2 + (j - i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    dim: usize,
    n: u64,
    /// Upper triangle of sum_i x_i x_i^T, row-major.
    sum_outer: Vec<f64>,
    sum_vec: Vec<f64>,
    q: f64,
    s_coef: f64,
    t_coef: f64,
}

impl ClusterSummary {
    pub fn from_pair(x1: &[f64], x2: &[f64]) -> Result<Self> {
        let p = x1.len();
        if p == 0 {
            return Err(Error::InvalidInput("zero-dimensional point".into()));
        }
        check_dim(p, x2.len())?;
        let mut sum_outer = vec![0.0; packed_len(p)];
        let mut k = 0;
        for i in 0..p {
            for j in i..p {
                sum_outer[k] = x1[i] * x1[j] + x2[i] * x2[j];
                k += 1;
            }
        }
        let sum_vec = x1.iter().zip(x2).map(|(a, b)| a + b).collect();
        let sq: f64 = x1.iter().zip(x2).map(|(a, b)| (b - a) * (b - a)).sum();
        Ok(Self {
            dim: p,
            n: 2,
            sum_outer,
            sum_vec,
            q: sq * sq,
            s_coef: 2.0,
            t_coef: 4.0,
        })
    }

    /// Absorb one point. Mutates in place; see [`ClusterSummary::with_point`]
    /// for the value-returning form.
    pub fn add_point(&mut self, x: &[f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        let n = self.n as f64;
        let sq: f64 = x
            .iter()
            .zip(&self.sum_vec)
            .map(|(xi, si)| {
                let d = xi - si / n;
                d * d
            })
            .sum();
        self.q += sq * sq;
        self.s_coef += 1.0 + 1.0 / (n * n * n);
        self.t_coef += (1.0 + 1.0 / n).powi(2);
        let p = self.dim;
        let mut k = 0;
        for i in 0..p {
            for j in i..p {
                self.sum_outer[k] += x[i] * x[j];
                k += 1;
            }
        }
        for (s, xi) in self.sum_vec.iter_mut().zip(x) {
            *s += xi;
        }
        self.n += 1;
        Ok(())
    }

    pub fn with_point(&self, x: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.add_point(x)?;
        Ok(out)
    }

    /// Componentwise sum of two summaries.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        check_dim(self.dim, other.dim)?;
        Ok(Self {
            dim: self.dim,
            n: self.n + other.n,
            sum_outer: self
                .sum_outer
                .iter()
                .zip(&other.sum_outer)
                .map(|(a, b)| a + b)
                .collect(),
            sum_vec: self
                .sum_vec
                .iter()
                .zip(&other.sum_vec)
                .map(|(a, b)| a + b)
                .collect(),
            q: self.q + other.q,
            s_coef: self.s_coef + other.s_coef,
            t_coef: self.t_coef + other.t_coef,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn s_coef(&self) -> f64 {
        self.s_coef
    }

    pub fn t_coef(&self) -> f64 {
        self.t_coef
    }

    pub fn sum_vec(&self) -> &[f64] {
        &self.sum_vec
    }

    pub fn sum_outer_packed(&self) -> &[f64] {
        &self.sum_outer
    }

    /// Entry `(i, j)` of the full sum-of-outer-products matrix.
    pub fn sum_outer(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.sum_outer[packed_index(self.dim, i, j)]
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.sum_vec.iter().map(|s| s / n).collect()
    }

    /// Unbiased sample covariance `(Σ_N − n x̄ x̄ᵀ) / (n − 1)`.
    ///
    /// Returned exactly as computed; tiny negative eigenvalues from round-off
    /// are not clamped.
    pub fn sample_covariance(&self) -> DMatrix<f64> {
        let p = self.dim;
        let n = self.n as f64;
        let mean = self.centroid();
        let mut s = DMatrix::zeros(p, p);
        let mut k = 0;
        for i in 0..p {
            for j in i..p {
                let v = (self.sum_outer[k] - n * mean[i] * mean[j]) / (n - 1.0);
                s[(i, j)] = v;
                s[(j, i)] = v;
                k += 1;
            }
        }
        s
    }

    pub fn centroid_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.centroid())
    }

    /// Flat record `[n, upper(Σ_N)…, s_N…, q, s_coef, t_coef]`, exactly
    /// `p(p+1)/2 + p + 4` scalars.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::scalar_count(self.dim));
        out.push(self.n as f64);
        out.extend_from_slice(&self.sum_outer);
        out.extend_from_slice(&self.sum_vec);
        out.extend([self.q, self.s_coef, self.t_coef]);
        out
    }

    pub fn from_flat(dim: usize, flat: &[f64]) -> Result<Self> {
        let expected = Self::scalar_count(dim);
        if flat.len() != expected {
            return Err(Error::InvalidInput(format!(
                "flat summary for p={dim} needs {expected} scalars, got {}",
                flat.len()
            )));
        }
        let tri = packed_len(dim);
        let n = flat[0];
        if !(n >= 2.0 && n.fract() == 0.0) {
            return Err(Error::InvalidInput(format!("summary count {n} is not an integer >= 2")));
        }
        let summary = Self {
            dim,
            n: n as u64,
            sum_outer: flat[1..1 + tri].to_vec(),
            sum_vec: flat[1 + tri..1 + tri + dim].to_vec(),
            q: flat[1 + tri + dim],
            s_coef: flat[2 + tri + dim],
            t_coef: flat[3 + tri + dim],
        };
        summary.validate()?;
        Ok(summary)
    }

    /// Scalars retained per cluster for dimension `p`.
    pub fn scalar_count(p: usize) -> usize {
        packed_len(p) + p + 4
    }

    /// Structural checks for summaries that arrive from outside (snapshots).
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidInput("zero-dimensional summary".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidInput("summary must hold at least two points".into()));
        }
        if self.sum_outer.len() != packed_len(self.dim) || self.sum_vec.len() != self.dim {
            return Err(Error::InvalidInput("summary arrays do not match its dimension".into()));
        }
        if !(self.q >= 0.0 && self.s_coef >= 2.0 && self.t_coef >= 4.0 && self.t_coef >= self.s_coef) {
            return Err(Error::InvalidInput(format!(
                "summary scalars out of range: q={}, s={}, t={}",
                self.q, self.s_coef, self.t_coef
            )));
        }
        Ok(())
    }
}
