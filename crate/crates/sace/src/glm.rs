//! Generalized linear model fitting from scratch: logistic regression via
//! iteratively reweighted least squares with step-halving, and ordinary
//! least squares. These back every parametric nuisance function and the
//! diagnostic regressions.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;
const SEPARATION_BOUND: f64 = 30.0;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Logit,
    Identity,
}

#[derive(Debug, Clone)]
pub struct GlmFit {
    pub link: Link,
    /// Intercept first, in design-column order.
    pub coefficients: DVector<f64>,
    /// Inverse observed information for the logit link, `sigma^2 (X'X)^-1`
    /// for the identity link.
    pub covariance: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub n_used: usize,
}

pub fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Build a design matrix from row slices.
pub fn design_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::EmptyCell("empty design matrix".into()));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: rows.iter().map(|r| r.len()).find(|&l| l != p).unwrap(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

fn log_likelihood(eta: &DVector<f64>, response: &[f64]) -> f64 {
    // y*eta - log(1 + exp(eta)), written to avoid overflow
    eta.iter()
        .zip(response)
        .map(|(&e, &y)| {
            let softplus = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            y * e - softplus
        })
        .sum()
}

/// Maximum-likelihood logistic regression via IRLS with step-halving.
/// Convergence when the sup-norm of the score drops below `1e-8 * n`.
pub fn fit_logistic(design: &DMatrix<f64>, response: &[f64]) -> Result<GlmFit> {
    let n = design.nrows();
    let p = design.ncols();
    if response.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: response.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyCell("logistic fit on empty data".into()));
    }
    if response.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidInput("logistic response must be 0/1".into()));
    }
    // all-equal responses push the intercept to +-infinity
    let ones = response.iter().filter(|&&y| y == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::Separation { column: 0 });
    }
    let tol = 1e-8 * n as f64;
    let mut beta = DVector::zeros(p);
    let mut eta = design * &beta;
    let mut ll = log_likelihood(&eta, response);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..MAX_ITERATIONS {
        iterations = iter + 1;
        let mu: DVector<f64> = eta.map(expit);
        let resid = DVector::from_fn(n, |i, _| response[i] - mu[i]);
        let score = design.transpose() * &resid;
        if score.amax() <= tol {
            converged = true;
            iterations = iter;
            break;
        }
        let w: DVector<f64> = mu.map(|m| (m * (1.0 - m)).max(1e-10));
        let mut xtwx = DMatrix::zeros(p, p);
        for i in 0..n {
            let row = design.row(i);
            let wi = w[i];
            for a in 0..p {
                for b in a..p {
                    xtwx[(a, b)] += wi * row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        let chol = xtwx.clone().cholesky().ok_or(Error::RankDeficient)?;
        let mut delta = chol.solve(&score);

        // step-halving keeps the log-likelihood non-decreasing
        let mut halvings = 0;
        loop {
            let candidate = &beta + &delta;
            let eta_new = design * &candidate;
            let ll_new = log_likelihood(&eta_new, response);
            if ll_new >= ll - 1e-10 || halvings >= MAX_HALVINGS {
                debug_assert!(
                    ll_new >= ll - 1e-6,
                    "log-likelihood decreased: {ll} -> {ll_new}"
                );
                beta = candidate;
                eta = eta_new;
                ll = ll_new;
                break;
            }
            delta *= 0.5;
            halvings += 1;
        }

        if let Some((j, _)) = beta
            .iter()
            .enumerate()
            .find(|(_, b)| b.abs() > SEPARATION_BOUND)
        {
            return Err(Error::Separation { column: j });
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations: MAX_ITERATIONS,
        });
    }

    let mu: DVector<f64> = eta.map(expit);
    let w: DVector<f64> = mu.map(|m| (m * (1.0 - m)).max(1e-10));
    let mut info = DMatrix::zeros(p, p);
    for i in 0..n {
        let row = design.row(i);
        let wi = w[i];
        for a in 0..p {
            for b in a..p {
                info[(a, b)] += wi * row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            info[(a, b)] = info[(b, a)];
        }
    }
    let covariance = info
        .clone()
        .cholesky()
        .ok_or(Error::RankDeficient)?
        .inverse();

    Ok(GlmFit {
        link: Link::Logit,
        coefficients: beta,
        covariance,
        converged,
        iterations,
        n_used: n,
    })
}

/// Ordinary least squares with `sigma^2 (X'X)^-1` covariance.
pub fn fit_linear(design: &DMatrix<f64>, response: &[f64]) -> Result<GlmFit> {
    let n = design.nrows();
    let p = design.ncols();
    if response.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: response.len(),
        });
    }
    if n == 0 {
        return Err(Error::EmptyCell("linear fit on empty data".into()));
    }
    let y = DVector::from_column_slice(response);
    let xtx = design.transpose() * design;
    let xty = design.transpose() * &y;
    let chol = xtx.clone().cholesky().ok_or(Error::RankDeficient)?;
    let beta = chol.solve(&xty);
    let fitted = design * &beta;
    let rss: f64 = (0..n).map(|i| (response[i] - fitted[i]).powi(2)).sum();
    let sigma2 = if n > p { rss / (n - p) as f64 } else { 0.0 };
    let covariance = chol.inverse() * sigma2;
    Ok(GlmFit {
        link: Link::Identity,
        coefficients: beta,
        covariance,
        converged: true,
        iterations: 1,
        n_used: n,
    })
}

impl GlmFit {
    /// Mean prediction for one design row (intercept included in `row`).
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                got: row.len(),
            });
        }
        let lin: f64 = row
            .iter()
            .zip(self.coefficients.iter())
            .map(|(r, c)| r * c)
            .sum();
        Ok(match self.link {
            Link::Identity => lin,
            Link::Logit => expit(lin),
        })
    }

    /// Standard error of the linear predictor at `row`.
    pub fn linear_predictor_se(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                got: row.len(),
            });
        }
        let r = DVector::from_column_slice(row);
        let var = (r.transpose() * &self.covariance * &r)[(0, 0)];
        Ok(var.max(0.0).sqrt())
    }

    /// Two-sided normal-approximation p-value of H0: coefficient = 0.
    pub fn wald_p_value(&self, index: usize) -> Result<f64> {
        if index >= self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len(),
                got: index,
            });
        }
        let var = self.covariance[(index, index)];
        if !(var.is_finite() && var > 0.0) {
            return Err(Error::ZeroCoefficientVariance { index });
        }
        let z = self.coefficients[index] / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        Ok(2.0 * (1.0 - normal.cdf(z.abs())))
    }

    /// Wald z statistic for one coefficient.
    pub fn wald_z(&self, index: usize) -> Result<f64> {
        let var = self.covariance[(index, index)];
        if !(var.is_finite() && var > 0.0) {
            return Err(Error::ZeroCoefficientVariance { index });
        }
        Ok(self.coefficients[index] / var.sqrt())
    }
}
