//! Double-shrinkage covariance estimation from a cluster summary.
//!
//! The estimate is the convex combination
//!
//! ```text
//! Ŝ = (1 − λ_I − λ_D) S + λ_I (tr S / p) I + λ_D D_S
//! ```
//!
//! with weights from a 2x2 system whose right-hand side needs unbiased
//! estimates of `tr(Σ²)` and `tr(Σ²) − tr(D_Σ²)`. Those estimates are linear
//! in `X = (tr S², (tr S)², tr D_S², Q_N)`; the coefficients depend only on
//! `N`, `𝕊_N` and `𝕋_N`, so everything is available from the streaming
//! summary. The kurtosis term κ₁₁ is eliminated by the solve.
//!
//! Degenerate cases fall back to the spherical target `(λ_I, λ_D) = (1, 0)`;
//! an all-zero sample covariance gives `ε I`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::SpdMatrix;
use crate::summary::ClusterSummary;

/// Identity floor for clusters whose points are all identical.
pub const ZERO_VARIANCE_FLOOR: f64 = 1e-9;

/// Smallest accepted squared Cholesky pivot, relative to the largest
/// diagonal entry of Ŝ. Weight combinations that leave Ŝ numerically
/// singular take the spherical fallback.
pub const PIVOT_FLOOR: f64 = 1e-12;

/// Which local metric the clusters use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    /// Optimal double shrinkage.
    #[default]
    Full,
    /// Diagonal sample covariance only, `(λ_I, λ_D) = (0, 1)`.
    Diagonal,
}

impl std::str::FromStr for MetricMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(MetricMode::Full),
            "diagonal" | "bfr" => Ok(MetricMode::Diagonal),
            other => Err(Error::InvalidInput(format!("unknown metric mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for MetricMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricMode::Full => "full",
            MetricMode::Diagonal => "diagonal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimates {
    /// `(tr S², (tr S)², tr D_S², Q_N)`.
    pub x_stats: [f64; 4],
    /// Estimates of `(tr Σ², tr Σ² − tr D_Σ²)`.
    pub z_est: [f64; 2],
    /// `K = (N + 2 + 2/(N−1)) 𝕊_N − 3 𝕋_N`.
    pub k_denom: f64,
}

/// The denominator `K` shared by all estimator coefficients.
pub fn k_denominator(n: f64, s_coef: f64, t_coef: f64) -> f64 {
    (n + 2.0 + 2.0 / (n - 1.0)) * s_coef - 3.0 * t_coef
}

/// Closed-form coefficients `C` of the unbiased estimator `Ẑ = C X`.
///
/// Rows are the two estimated quantities, columns follow the order of `X`.
pub fn estimator_coefficients(n: u64, s_coef: f64, t_coef: f64) -> Result<[[f64; 4]; 2]> {
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, have: n });
    }
    let nf = n as f64;
    let k = k_denominator(nf, s_coef, t_coef);
    let tol = 1e-12 * t_coef.abs();
    if !(k.abs() >= tol) || k == 0.0 {
        return Err(Error::DegenerateSystem { k, tol });
    }
    let (s, t) = (s_coef, t_coef);
    let nm2 = nf - 2.0;
    let np1 = nf + 1.0;
    Ok([
        [
            (nf - 1.0) * (nf * s - t) / (k * nm2),
            -(nf * s - (nf - 1.0) * t) / (k * nm2),
            0.0,
            -1.0 / k,
        ],
        [
            ((nf + 1.0 + 2.0 / nm2) * s - (3.0 + 1.0 / nm2 - 2.0 / np1) * t) / k,
            (-(1.0 + 2.0 / nm2) * s + (1.0 / nm2 + 1.0 / np1) * t) / k,
            -1.0 + 2.0 / np1,
            (1.0 / (nf - 1.0)) / k,
        ],
    ])
}

/// `(tr S², (tr S)², tr D_S²)` for a symmetric matrix.
pub fn trace_moments(s: &DMatrix<f64>) -> (f64, f64, f64) {
    let tr = s.trace();
    let tr_sq = s.iter().map(|v| v * v).sum::<f64>();
    let tr_diag_sq = s.diagonal().iter().map(|v| v * v).sum::<f64>();
    (tr_sq, tr * tr, tr_diag_sq)
}

fn trace_estimates_from(s: &ClusterSummary, cov: &DMatrix<f64>) -> Result<TraceEstimates> {
    let c = estimator_coefficients(s.n(), s.s_coef(), s.t_coef())?;
    let (tr_sq, tr2, diag_sq) = trace_moments(cov);
    let x = [tr_sq, tr2, diag_sq, s.q()];
    let dot = |row: &[f64; 4]| row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
    Ok(TraceEstimates {
        x_stats: x,
        z_est: [dot(&c[0]), dot(&c[1])],
        k_denom: k_denominator(s.n() as f64, s.s_coef(), s.t_coef()),
    })
}

pub fn trace_estimates(s: &ClusterSummary) -> Result<TraceEstimates> {
    trace_estimates_from(s, &s.sample_covariance())
}

/// Why the estimate left the optimal-weight path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    /// Fewer than three points.
    InsufficientData,
    DegenerateSystem,
    DegenerateGeometry,
    /// The weighted combination was not numerically positive-definite.
    NotPositiveDefinite,
    /// All points identical; Ŝ = ε I.
    ZeroVariance,
    /// Weights forced by the diagonal metric mode.
    DiagonalMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageWeights {
    pub lambda_i: f64,
    pub lambda_d: f64,
    /// The raw solution was projected onto the weight simplex.
    pub clamped: bool,
    pub fallback: Option<Fallback>,
}

impl ShrinkageWeights {
    fn fixed(lambda_i: f64, lambda_d: f64, fallback: Fallback) -> Self {
        Self { lambda_i, lambda_d, clamped: false, fallback: Some(fallback) }
    }

    /// Weight left on the sample covariance.
    pub fn sample_weight(&self) -> f64 {
        1.0 - self.lambda_i - self.lambda_d
    }
}

/// Euclidean projection of `(a, b)` onto `{a ≥ 0, b ≥ 0, a + b ≤ 1}`.
pub fn project_to_simplex(a: f64, b: f64) -> (f64, f64) {
    if a >= 0.0 && b >= 0.0 && a + b <= 1.0 {
        return (a, b);
    }
    let t = ((a - b + 1.0) / 2.0).clamp(0.0, 1.0);
    let candidates = [(0.0, b.clamp(0.0, 1.0)), (a.clamp(0.0, 1.0), 0.0), (t, 1.0 - t)];
    candidates
        .into_iter()
        .min_by(|x, y| {
            let dx = (x.0 - a).powi(2) + (x.1 - b).powi(2);
            let dy = (y.0 - a).powi(2) + (y.1 - b).powi(2);
            dx.total_cmp(&dy)
        })
        .expect("three candidates")
}

fn weights_from(cov: &DMatrix<f64>, t: &TraceEstimates) -> Result<ShrinkageWeights> {
    let p = cov.nrows() as f64;
    let (tr_sq, tr2, diag_sq) = (t.x_stats[0], t.x_stats[1], t.x_stats[2]);
    // tr[(S − mI)²], tr[(S − mI)(S − D_S)] and tr[(S − D_S)²] with m = tr S / p.
    // The last two coincide because tr(S − D_S) = 0 and tr(S D_S) = tr D_S².
    let a = tr_sq - tr2 / p;
    let b = tr_sq - diag_sq;
    let c = b;
    let det = a * c - b * b;
    if !(det > 1e-12 * a.abs() * c.abs()) {
        return Err(Error::DegenerateGeometry { det });
    }
    let r1 = tr_sq - t.z_est[0];
    let r2 = tr_sq - diag_sq - t.z_est[1];
    let li = (c * r1 - b * r2) / det;
    let ld = (a * r2 - b * r1) / det;
    if !(li.is_finite() && ld.is_finite()) {
        return Err(Error::DegenerateGeometry { det });
    }
    let (pi, pd) = project_to_simplex(li, ld);
    Ok(ShrinkageWeights {
        lambda_i: pi,
        lambda_d: pd,
        clamped: pi != li || pd != ld,
        fallback: None,
    })
}

pub fn shrinkage_weights(s: &ClusterSummary, t: &TraceEstimates) -> Result<ShrinkageWeights> {
    weights_from(&s.sample_covariance(), t)
}

/// The positive-definite covariance estimate for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ShrunkCovariance {
    pub spd: SpdMatrix,
    pub weights: ShrinkageWeights,
    pub source_n: u64,
}

impl ShrunkCovariance {
    pub fn matrix(&self) -> &DMatrix<f64> {
        self.spd.matrix()
    }
}

fn combine(cov: &DMatrix<f64>, w: &ShrinkageWeights) -> DMatrix<f64> {
    let p = cov.nrows();
    let spherical = cov.trace() / p as f64;
    let mut out = cov * w.sample_weight();
    for i in 0..p {
        out[(i, i)] += w.lambda_i * spherical + w.lambda_d * cov[(i, i)];
    }
    out
}

fn spherical(cov: &DMatrix<f64>, n: u64, fallback: Fallback) -> ShrunkCovariance {
    let weights = ShrinkageWeights::fixed(1.0, 0.0, fallback);
    let spd = SpdMatrix::new(combine(cov, &weights)).expect("positive multiple of identity");
    ShrunkCovariance { spd, weights, source_n: n }
}

fn zero_variance(p: usize, n: u64) -> ShrunkCovariance {
    let spd = SpdMatrix::new(DMatrix::identity(p, p) * ZERO_VARIANCE_FLOOR).expect("ε I");
    ShrunkCovariance {
        spd,
        weights: ShrinkageWeights::fixed(1.0, 0.0, Fallback::ZeroVariance),
        source_n: n,
    }
}

/// Optimal double-shrinkage estimate, with the fallback ladder applied.
pub fn shrunk_covariance(s: &ClusterSummary) -> ShrunkCovariance {
    shrunk_covariance_with_mode(s, MetricMode::Full)
}

pub fn shrunk_covariance_with_mode(s: &ClusterSummary, mode: MetricMode) -> ShrunkCovariance {
    let cov = s.sample_covariance();
    let p = s.dim();
    let n = s.n();
    let trace = cov.trace();
    if !(trace > 0.0) {
        return zero_variance(p, n);
    }
    if mode == MetricMode::Diagonal {
        // Constant coordinates would leave D_S singular; floor them.
        let floor = ZERO_VARIANCE_FLOOR.max(PIVOT_FLOOR * trace);
        let diag = DMatrix::from_diagonal(&cov.diagonal().map(|v| v.max(floor)));
        let spd = SpdMatrix::new(diag).expect("positive diagonal");
        return ShrunkCovariance {
            spd,
            weights: ShrinkageWeights::fixed(0.0, 1.0, Fallback::DiagonalMode),
            source_n: n,
        };
    }
    let weights = match trace_estimates_from(s, &cov).and_then(|t| weights_from(&cov, &t)) {
        Ok(w) => w,
        Err(Error::InsufficientData { .. }) => return spherical(&cov, n, Fallback::InsufficientData),
        Err(Error::DegenerateSystem { .. }) => return spherical(&cov, n, Fallback::DegenerateSystem),
        Err(_) => return spherical(&cov, n, Fallback::DegenerateGeometry),
    };
    match SpdMatrix::with_pivot_floor(combine(&cov, &weights), PIVOT_FLOOR) {
        Ok(spd) => ShrunkCovariance { spd, weights, source_n: n },
        Err(_) => spherical(&cov, n, Fallback::NotPositiveDefinite),
    }
}
