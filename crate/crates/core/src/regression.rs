//! Closed-form ridge regression and Gaussian linear-model log-likelihoods.
//!
//! The ridge path factorizes `(X^T X + rho I)` with a Cholesky decomposition
//! rather than forming an explicit inverse; the same closed form is exposed
//! on the autodiff tape (see [`crate::tape::Tape::ridge_solve`]) so training
//! gradients flow through both the design matrix and the coefficients. The
//! Gaussian log-likelihood path solves ordinary least squares through a
//! spectral pseudo-inverse, which keeps the likelihood well-defined for
//! exactly collinear predictors (fitted values depend only on the column
//! span).

use crate::features::{Column, DesignMatrix};
use crate::linalg::{cholesky, cholesky_solve, sym_eigen, LinalgError};
use ndarray::{Array1, Array2, ArrayView1};
use thiserror::Error;

/// Relative floor applied to the maximum-likelihood residual variance so a
/// zero-residual fit still reports a finite log-likelihood.
pub const SIGMA2_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("design has {rows} rows; at least {needed} are required")]
    TooFewRows { rows: usize, needed: usize },
    #[error("singular ridge system (column {column}, pivot {pivot:.3e}); a positive rho is required")]
    Singular { column: usize, pivot: f64 },
    #[error("rank-deficient design: no usable spectrum (degenerate columns: {columns:?})")]
    RankDeficient { columns: Vec<usize> },
    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("designs must share rows and targets to be compared")]
    RowMismatch,
    #[error("baseline column {0:?} is not a column of the full design")]
    NotNested(Column),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Ridge-regression coefficients.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    pub beta: Array1<f64>,
    pub rho: f64,
    pub n_rows: usize,
    pub columns: Vec<Column>,
}

/// Solves `(X^T X + rho I) beta = X^T psi` by Cholesky factorization.
pub fn ridge_solve(
    x: &Array2<f64>,
    psi: &ArrayView1<f64>,
    rho: f64,
) -> Result<Array1<f64>, RegressionError> {
    if x.nrows() == 0 {
        return Err(RegressionError::TooFewRows { rows: 0, needed: 1 });
    }
    assert!(rho >= 0.0, "ridge weight must be non-negative");
    let p = x.ncols();
    let mut gram = x.t().dot(x);
    for i in 0..p {
        gram[(i, i)] += rho;
    }
    let l = cholesky(&gram).map_err(|e| match e {
        LinalgError::NotPositiveDefinite { column, pivot } => {
            RegressionError::Singular { column, pivot }
        }
        other => RegressionError::Linalg(other),
    })?;
    let rhs = x.t().dot(psi);
    Ok(cholesky_solve(&l, &rhs))
}

/// Fits ridge coefficients for a design matrix.
pub fn ridge_fit(design: &DesignMatrix, rho: f64) -> Result<RidgeFit, RegressionError> {
    let beta = ridge_solve(&design.x, &design.targets.view(), rho)?;
    Ok(RidgeFit {
        beta,
        rho,
        n_rows: design.n_rows(),
        columns: design.columns.clone(),
    })
}

/// Inner product of a fitted coefficient vector with one feature row.
pub fn predict(fit: &RidgeFit, row: &ArrayView1<f64>) -> Result<f64, RegressionError> {
    if row.len() != fit.beta.len() {
        return Err(RegressionError::DimensionMismatch {
            expected: fit.beta.len(),
            got: row.len(),
        });
    }
    Ok(fit.beta.dot(row))
}

/// An ordinary-least-squares fit with its maximum-likelihood Gaussian
/// log-likelihood.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub beta: Array1<f64>,
    /// Maximum-likelihood residual variance (mean squared residual).
    pub sigma2: f64,
    /// Per-point log-likelihood at the MLE: -0.5 (log(2 pi sigma^2) + 1).
    pub loglik_per_point: f64,
}

/// OLS through a spectral pseudo-inverse of the Gram matrix.
pub fn gaussian_llh(design: &DesignMatrix) -> Result<GaussianFit, RegressionError> {
    let x = &design.x;
    let psi = &design.targets;
    let (n, p) = x.dim();
    if n < p + 1 {
        return Err(RegressionError::TooFewRows {
            rows: n,
            needed: p + 1,
        });
    }
    let gram = x.t().dot(x);
    let (w, v) = sym_eigen(&gram)?;
    let wmax = w.iter().cloned().fold(0.0f64, f64::max);
    if wmax <= 0.0 {
        let columns = (0..p)
            .filter(|&c| x.column(c).iter().all(|&e| e.abs() < 1e-300))
            .collect();
        return Err(RegressionError::RankDeficient { columns });
    }
    let cutoff = wmax * (p as f64) * 1e-12;
    let rhs = x.t().dot(psi);
    let mut beta = Array1::<f64>::zeros(p);
    for k in 0..p {
        if w[k] > cutoff {
            let vk = v.column(k);
            let coef = vk.dot(&rhs) / w[k];
            for i in 0..p {
                beta[i] += coef * vk[i];
            }
        }
    }
    let fitted = x.dot(&beta);
    let mut ssr = 0.0;
    for i in 0..n {
        let r = psi[i] - fitted[i];
        ssr += r * r;
    }
    let sigma2 = (ssr / n as f64).max(SIGMA2_FLOOR);
    let loglik_per_point = -0.5 * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
    Ok(GaussianFit {
        beta,
        sigma2,
        loglik_per_point,
    })
}

/// Mean per-point log-likelihood improvement of the full model over a
/// baseline whose columns are a subset of the full design's columns. Both
/// models are fitted by maximum likelihood on the same rows and targets.
pub fn delta_llh(
    full: &DesignMatrix,
    baseline: &DesignMatrix,
) -> Result<f64, RegressionError> {
    if full.n_rows() != baseline.n_rows()
        || full.targets != baseline.targets
        || full.point_indices != baseline.point_indices
    {
        return Err(RegressionError::RowMismatch);
    }
    for c in &baseline.columns {
        if !full.columns.contains(c) {
            return Err(RegressionError::NotNested(*c));
        }
    }
    let f = gaussian_llh(full)?;
    let b = gaussian_llh(baseline)?;
    Ok(f.loglik_per_point - b.loglik_per_point)
}
