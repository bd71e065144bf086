//! Distance and threshold primitives: Mahalanobis distance in determinant
//! form, pooled covariance, Hotelling thresholds and centre perturbation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::special;

/// A symmetric positive-definite matrix together with its lower Cholesky
/// factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
    trace: f64,
}

impl SpdMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        Self::with_pivot_floor(matrix, 0.0)
    }

    /// Factor `matrix`, rejecting it unless every squared pivot is at least
    /// `rel_floor` times the largest diagonal entry.
    pub fn with_pivot_floor(matrix: DMatrix<f64>, rel_floor: f64) -> Result<Self> {
        let p = matrix.nrows();
        if p == 0 || matrix.ncols() != p {
            return Err(Error::InvalidInput("covariance must be square and non-empty".into()));
        }
        let max_diag = matrix.diagonal().iter().cloned().fold(0.0_f64, f64::max);
        let floor = rel_floor * max_diag;
        let mut lower = DMatrix::<f64>::zeros(p, p);
        for j in 0..p {
            let mut d = matrix[(j, j)];
            for k in 0..j {
                d -= lower[(j, k)] * lower[(j, k)];
            }
            if !(d > floor) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let ljj = d.sqrt();
            lower[(j, j)] = ljj;
            for i in j + 1..p {
                let mut v = matrix[(i, j)];
                for k in 0..j {
                    v -= lower[(i, k)] * lower[(j, k)];
                }
                lower[(i, j)] = v / ljj;
            }
        }
        let trace = matrix.trace();
        Ok(Self { matrix, lower, trace })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// `det(C + v vᵀ) / det(C) − 1` for `v = x − y`.
    ///
    /// The determinant ratio comes from a rank-one update of the Cholesky
    /// factor: the ratio is the product of `(l'_kk / l_kk)²` over the updated
    /// pivots. Only the working vector of the update is carried, the updated
    /// factor itself is never stored. Summing `ln(1 + (w_k/l_kk)²)` and
    /// finishing with `expm1` keeps full relative precision for small
    /// distances.
    pub fn mahalanobis_sq(&self, x: &[f64], y: &[f64]) -> f64 {
        let p = self.dim();
        debug_assert_eq!(x.len(), p);
        debug_assert_eq!(y.len(), p);
        let mut w: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        let mut log_ratio = 0.0;
        for k in 0..p {
            let lkk = self.lower[(k, k)];
            let t = w[k] / lkk;
            if t == 0.0 {
                continue;
            }
            log_ratio += (t * t).ln_1p();
            let c = (1.0 + t * t).sqrt();
            for i in k + 1..p {
                let updated = (self.lower[(i, k)] + t * w[i]) / c;
                w[i] = c * w[i] - t * updated;
            }
        }
        let d = log_ratio.exp_m1();
        if d.is_finite() {
            d
        } else {
            self.quadratic_form_by_solve(x, y)
        }
    }

    /// `L⁻¹ x`; squared Euclidean distances between whitened points equal
    /// Mahalanobis distances up to rounding.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let p = self.dim();
        let mut z = vec![0.0; p];
        for i in 0..p {
            let mut v = x[i];
            for k in 0..i {
                v -= self.lower[(i, k)] * z[k];
            }
            z[i] = v / self.lower[(i, i)];
        }
        z
    }

    /// `(x−y)ᵀ C⁻¹ (x−y)` by forward substitution with the factor.
    pub fn quadratic_form_by_solve(&self, x: &[f64], y: &[f64]) -> f64 {
        let p = self.dim();
        let mut z = vec![0.0; p];
        let mut acc = 0.0;
        for i in 0..p {
            let mut v = x[i] - y[i];
            for k in 0..i {
                v -= self.lower[(i, k)] * z[k];
            }
            z[i] = v / self.lower[(i, i)];
            acc += z[i] * z[i];
        }
        acc
    }
}

/// Squared Mahalanobis distance between `x` and `y` under `cov`.
pub fn mahalanobis_sq(cov: &DMatrix<f64>, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(cov.nrows(), x.len())?;
    check_dim(cov.nrows(), y.len())?;
    let spd = SpdMatrix::new(cov.clone())?;
    Ok(spd.mahalanobis_sq(x, y))
}

/// Size-weighted average `Σ n_h C_h / Σ n_h`.
pub fn pooled_covariance<'a, I>(entries: I) -> Result<DMatrix<f64>>
where
    I: IntoIterator<Item = (u64, &'a DMatrix<f64>)>,
{
    let mut acc: Option<DMatrix<f64>> = None;
    let mut total = 0u64;
    for (count, cov) in entries {
        if count < 2 {
            return Err(Error::InvalidInput(format!("pooled entry with count {count} < 2")));
        }
        match acc.as_mut() {
            None => acc = Some(cov * count as f64),
            Some(a) => {
                if a.shape() != cov.shape() {
                    return Err(Error::DimensionMismatch {
                        expected: a.nrows(),
                        actual: cov.nrows(),
                    });
                }
                *a += cov * count as f64;
            }
        }
        total += count;
    }
    acc.map(|a| a / total as f64).ok_or(Error::NoClusters)
}

/// Whether the Hotelling threshold for (p, n) uses the chi-square fallback.
pub fn hotelling_uses_fallback(p: usize, n: u64) -> bool {
    n <= p as u64
}

/// `T²_{p,n−1}(1−α) = p(n−1)/(n−p) · F_{p,n−p}(1−α)` for `n > p`, and the
/// chi-square quantile `χ²_p(1−α)` when `n ≤ p`.
pub fn hotelling_threshold(p: usize, n: u64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha {alpha} outside (0, 1)")));
    }
    if p == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, have: n });
    }
    let pf = p as f64;
    if hotelling_uses_fallback(p, n) {
        return Ok(special::chi2_quantile(1.0 - alpha, pf));
    }
    let nf = n as f64;
    let f = special::f_quantile(1.0 - alpha, pf, nf - pf);
    Ok(pf * (nf - 1.0) / (nf - pf) * f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationInputs {
    /// Squared Mahalanobis distance of the point from the cluster centre.
    pub delta_sq: f64,
    /// Hotelling threshold `t_α` for the cluster.
    pub t_alpha: f64,
    pub n: u64,
    /// Whether the cluster is the current nearest one.
    pub is_own: bool,
}

/// Distance of a point to the worst-case centre inside the cluster's
/// confidence region: farthest for the own cluster, nearest otherwise.
///
/// The shrinking branch applies once `Δ² ≥ t_α / n`, the radius of the
/// region in the cluster metric; inside it the nearest centre coincides
/// with the point.
pub fn perturbed_distance(inp: PerturbationInputs) -> f64 {
    let radius_sq = inp.t_alpha / inp.n as f64;
    let d = inp.delta_sq.max(0.0).sqrt();
    let r = radius_sq.sqrt();
    if inp.is_own {
        (d + r) * (d + r)
    } else if inp.delta_sq >= radius_sq {
        (d - r) * (d - r)
    } else {
        0.0
    }
}
