//! Nadaraya-Watson product-kernel regression and kernel density estimation
//! for the nonparametric nuisance engine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    Epanechnikov,
}

impl KernelKind {
    fn univariate(self, u: f64) -> f64 {
        match self {
            KernelKind::Gaussian => (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            KernelKind::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
        }
    }

    /// Roughness R(k) = integral of k^2 for one coordinate.
    pub fn roughness(self) -> f64 {
        match self {
            KernelKind::Gaussian => 0.5 / std::f64::consts::PI.sqrt(),
            KernelKind::Epanechnikov => 0.6,
        }
    }

    /// Second moment mu_2(k) of one coordinate.
    pub fn second_moment(self) -> f64 {
        match self {
            KernelKind::Gaussian => 1.0,
            KernelKind::Epanechnikov => 0.2,
        }
    }
}

/// Stored training data plus bandwidths; prediction is lazy.
#[derive(Debug, Clone)]
pub struct KernelFit {
    kind: KernelKind,
    bandwidths: Vec<f64>,
    x: Vec<f64>, // row-major, m x q
    y: Vec<f64>,
    q: usize,
}

/// Rule-of-thumb bandwidths `h_j = 1.06 sigma_j m^(-1/(4+q))`.
pub fn select_bandwidth(x: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = x.len();
    if m < 2 {
        return Err(Error::EmptyCell(
            "bandwidth selection needs at least two rows".into(),
        ));
    }
    let q = x[0].len();
    let mut h = Vec::with_capacity(q);
    let rate = (m as f64).powf(-1.0 / (4.0 + q as f64));
    for j in 0..q {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / m as f64;
        let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (m as f64 - 1.0);
        if var <= 0.0 {
            return Err(Error::ZeroVariance { column: j });
        }
        h.push(1.06 * var.sqrt() * rate);
    }
    Ok(h)
}

pub fn fit_nw(
    x: &[Vec<f64>],
    y: &[f64],
    bandwidths: &[f64],
    kind: KernelKind,
) -> Result<KernelFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyCell("kernel fit on empty data".into()));
    }
    let q = x[0].len();
    if bandwidths.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: bandwidths.len(),
        });
    }
    if bandwidths.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::InvalidInput("bandwidths must be positive".into()));
    }
    let mut flat = Vec::with_capacity(x.len() * q);
    for row in x {
        if row.len() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: row.len(),
            });
        }
        flat.extend_from_slice(row);
    }
    Ok(KernelFit {
        kind,
        bandwidths: bandwidths.to_vec(),
        x: flat,
        y: y.to_vec(),
        q,
    })
}

impl KernelFit {
    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn weight_at(&self, i: usize, x0: &[f64]) -> f64 {
        let mut w = 1.0;
        for j in 0..self.q {
            let u = (self.x[i * self.q + j] - x0[j]) / self.bandwidths[j];
            w *= self.kind.univariate(u);
            if w == 0.0 {
                return 0.0;
            }
        }
        w
    }

    /// Kernel-weighted mean of the training responses at `x0`.
    pub fn predict(&self, x0: &[f64]) -> Result<f64> {
        Ok(self.predict_with_variance(x0)?.0)
    }

    /// Kernel-weighted mean and the local conditional variance
    /// (weighted second moment minus squared weighted mean).
    pub fn predict_with_variance(&self, x0: &[f64]) -> Result<(f64, f64)> {
        if x0.len() != self.q {
            return Err(Error::DimensionMismatch {
                expected: self.q,
                got: x0.len(),
            });
        }
        let m = self.y.len();
        let mut wsum = 0.0;
        let mut wy = 0.0;
        let mut wy2 = 0.0;
        for i in 0..m {
            let w = self.weight_at(i, x0);
            wsum += w;
            wy += w * self.y[i];
            wy2 += w * self.y[i] * self.y[i];
        }
        if wsum <= 0.0 || !wsum.is_finite() {
            return Err(Error::Extrapolation { point: x0.to_vec() });
        }
        let mean = wy / wsum;
        let var = (wy2 / wsum - mean * mean).max(0.0);
        Ok((mean, var))
    }
}

/// Product-kernel density estimate over the rows of `x`.
#[derive(Debug, Clone)]
pub struct KernelDensity {
    fit: KernelFit,
}

pub fn fit_density(x: &[Vec<f64>], bandwidths: &[f64], kind: KernelKind) -> Result<KernelDensity> {
    let y = vec![0.0; x.len()];
    Ok(KernelDensity {
        fit: fit_nw(x, &y, bandwidths, kind)?,
    })
}

impl KernelDensity {
    pub fn density(&self, x0: &[f64]) -> Result<f64> {
        if x0.len() != self.fit.q {
            return Err(Error::DimensionMismatch {
                expected: self.fit.q,
                got: x0.len(),
            });
        }
        let m = self.fit.y.len() as f64;
        let det_h: f64 = self.fit.bandwidths.iter().product();
        let wsum: f64 = (0..self.fit.y.len())
            .map(|i| self.fit.weight_at(i, x0))
            .sum();
        Ok(wsum / (m * det_h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn bandwidth_rule_of_thumb_arithmetic() {
        // unit-variance single covariate, m = 100: h = 1.06 * 100^(-1/5)
        let mut x = Vec::new();
        // spread with sample sd exactly 1
        for i in 0..100 {
            x.push(vec![(i as f64 - 49.5) / 29.011491975882016]);
        }
        let h = select_bandwidth(&x).unwrap();
        let expected = 1.06 * 100f64.powf(-0.2);
        assert_abs_diff_eq!(h[0], expected, epsilon = 1e-9);
        assert_abs_diff_eq!(h[0], 0.422, epsilon = 1e-3);
    }

    #[test]
    fn constant_column_is_an_error() {
        let x = vec![vec![1.0], vec![1.0], vec![1.0]];
        assert!(matches!(
            select_bandwidth(&x),
            Err(Error::ZeroVariance { column: 0 })
        ));
    }

    #[test]
    fn bandwidth_scale_equivariance() {
        let x: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 0.1]).collect();
        let x2: Vec<Vec<f64>> = x.iter().map(|r| vec![2.0 * r[0]]).collect();
        let h = select_bandwidth(&x).unwrap();
        let h2 = select_bandwidth(&x2).unwrap();
        assert_abs_diff_eq!(h2[0], 2.0 * h[0], epsilon = 1e-12);
    }

    #[test]
    fn constant_response_predicts_the_constant() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 * 0.3]).collect();
        let y = vec![2.5; 30];
        let fit = fit_nw(&x, &y, &[0.5], KernelKind::Gaussian).unwrap();
        for x0 in [0.0, 4.0, 8.8] {
            assert_abs_diff_eq!(fit.predict(&[x0]).unwrap(), 2.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_training_point_predicts_its_value() {
        let fit = fit_nw(&[vec![1.0]], &[7.0], &[1.0], KernelKind::Gaussian).unwrap();
        assert_abs_diff_eq!(fit.predict(&[0.2]).unwrap(), 7.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_function_recovered_on_fine_grid() {
        // brute-force oracle: compute the weighted mean independently
        let m = 2001;
        let x: Vec<Vec<f64>> = (0..m).map(|i| vec![i as f64 / 1000.0 - 1.0]).collect();
        let y: Vec<f64> = x.iter().map(|r| r[0]).collect();
        let h = 0.02;
        let fit = fit_nw(&x, &y, &[h], KernelKind::Gaussian).unwrap();
        for &x0 in &[-0.5, 0.0, 0.31, 0.77] {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..m {
                let u: f64 = (x[i][0] - x0) / h;
                let w = (-0.5 * u * u).exp();
                num += w * y[i];
                den += w;
            }
            let oracle = num / den;
            let pred = fit.predict(&[x0]).unwrap();
            assert_abs_diff_eq!(pred, oracle, epsilon = 1e-10);
            assert!((pred - x0).abs() < 0.01);
        }
    }

    #[test]
    fn extrapolation_error_when_weights_vanish() {
        let x = vec![vec![0.0], vec![0.1]];
        let y = vec![1.0, 2.0];
        let fit = fit_nw(&x, &y, &[0.05], KernelKind::Epanechnikov).unwrap();
        assert!(matches!(
            fit.predict(&[5.0]),
            Err(Error::Extrapolation { .. })
        ));
    }

    #[test]
    fn density_integrates_to_one_on_a_grid() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 7) as f64 * 0.4]).collect();
        let kde = fit_density(&x, &[0.3], KernelKind::Gaussian).unwrap();
        let step = 0.01;
        let mut total = 0.0;
        let mut t = -5.0;
        while t < 8.0 {
            total += kde.density(&[t]).unwrap() * step;
            t += step;
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-3);
    }

    proptest! {
        #[test]
        fn predictions_stay_in_the_convex_hull(
            ys in proptest::collection::vec(-50.0f64..50.0, 3..40),
            x0 in -3.0f64..3.0,
        ) {
            let x: Vec<Vec<f64>> = (0..ys.len()).map(|i| vec![i as f64 * 6.0 / ys.len() as f64 - 3.0]).collect();
            let fit = fit_nw(&x, &ys, &[0.8], KernelKind::Gaussian).unwrap();
            let p = fit.predict(&[x0]).unwrap();
            let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p >= lo - 1e-9 && p <= hi + 1e-9);
        }

        #[test]
        fn wide_bandwidth_tends_to_the_mean(
            ys in proptest::collection::vec(-5.0f64..5.0, 3..25),
            x0 in -2.0f64..2.0,
        ) {
            let x: Vec<Vec<f64>> = (0..ys.len()).map(|i| vec![i as f64 * 0.1]).collect();
            let fit = fit_nw(&x, &ys, &[1e6], KernelKind::Gaussian).unwrap();
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            prop_assert!((fit.predict(&[x0]).unwrap() - mean).abs() < 1e-6);
        }

        #[test]
        fn permutation_invariance(
            ys in proptest::collection::vec(-5.0f64..5.0, 4..20),
            x0 in -1.0f64..1.0,
        ) {
            let x: Vec<Vec<f64>> = (0..ys.len()).map(|i| vec![(i as f64).sin()]).collect();
            let fit = fit_nw(&x, &ys, &[0.7], KernelKind::Gaussian).unwrap();
            let mut xr: Vec<Vec<f64>> = x.clone();
            let mut yr = ys.clone();
            xr.reverse();
            yr.reverse();
            let fit_r = fit_nw(&xr, &yr, &[0.7], KernelKind::Gaussian).unwrap();
            let a = fit.predict(&[x0]).unwrap();
            let b = fit_r.predict(&[x0]).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
