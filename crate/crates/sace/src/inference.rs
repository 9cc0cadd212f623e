//! Standard errors and confidence intervals: M-estimation sandwich
//! variance, the closed-form no-covariate variance with higher-order bias
//! correction and MOVER logit interval, the kernel plug-in variance for
//! the nonparametric engine, and the nonparametric bootstrap.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, ObservationRecord, OutcomeKind};
use crate::error::{Error, Result};
use crate::estimators::{
    self, binary_no_covariate, binary_no_covariate_ens, binary_no_covariate_mu, clip_probability,
    csace_proposed, ContingencyTable, NuisanceEstimates, SSel, VSel, YSel, SUBSTITUTION_TOLERANCE,
};
use crate::glm::{design_from_rows, expit, fit_linear, fit_logistic, logit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    Sandwich,
    KernelPlugin,
    ClosedForm,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Ci {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub method: VarianceMethod,
    pub variance: f64,
    pub bias_correction: Option<f64>,
    pub ci: Option<Ci>,
    pub replicates_used: Option<usize>,
    pub replicates_dropped: Option<usize>,
}

impl VarianceReport {
    pub fn se(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

fn z_quantile(level: f64) -> Result<f64> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in (0,1), got {level}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Sandwich variance of a plug-in functional `delta_of_theta(x, theta)` of
/// an M-estimator `theta_hat` solving `sum_i score(o_i, theta) = 0`.
/// Both Jacobians are taken by central finite differences.
pub fn sandwich_se(
    ds: &Dataset,
    theta_hat: &[f64],
    score: &dyn Fn(&ObservationRecord, &[f64]) -> Vec<f64>,
    delta_of_theta: &dyn Fn(&[f64], &[f64]) -> Result<f64>,
    x: &[f64],
    level: f64,
) -> Result<VarianceReport> {
    let n = ds.n();
    let p = theta_hat.len();
    if n == 0 || p == 0 {
        return Err(Error::InvalidInput("empty data or parameter".into()));
    }
    let mean_score = |theta: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0; p];
        for rec in ds.records() {
            let u = score(rec, theta);
            for j in 0..p {
                acc[j] += u[j];
            }
        }
        acc.iter_mut().for_each(|v| *v /= n as f64);
        acc
    };

    let ms = mean_score(theta_hat);
    let norm = ms.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if norm > 1e-5 {
        return Err(Error::ScoreNotAtRoot { norm });
    }

    // B = n^-1 sum U U'
    let mut b = DMatrix::zeros(p, p);
    for rec in ds.records() {
        let u = score(rec, theta_hat);
        for i in 0..p {
            for j in 0..p {
                b[(i, j)] += u[i] * u[j];
            }
        }
    }
    b /= n as f64;

    // A = d(mean score)/d(theta), column by column
    let mut a = DMatrix::zeros(p, p);
    for j in 0..p {
        let h = 1e-6 * (1.0 + theta_hat[j].abs());
        let mut plus = theta_hat.to_vec();
        let mut minus = theta_hat.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let msp = mean_score(&plus);
        let msm = mean_score(&minus);
        for i in 0..p {
            a[(i, j)] = (msp[i] - msm[i]) / (2.0 * h);
        }
    }

    // g = d(delta)/d(theta)
    let mut g = DVector::zeros(p);
    for j in 0..p {
        let h = 1e-6 * (1.0 + theta_hat[j].abs());
        let mut plus = theta_hat.to_vec();
        let mut minus = theta_hat.to_vec();
        plus[j] += h;
        minus[j] -= h;
        g[j] = (delta_of_theta(x, &plus)? - delta_of_theta(x, &minus)?) / (2.0 * h);
    }

    // D' = A^-T g
    let lu = a.transpose().lu();
    let d_t = lu.solve(&g).ok_or(Error::SingularJacobian)?;
    let variance_sqrt_n = (d_t.transpose() * &b * &d_t)[(0, 0)].max(0.0);
    let variance = variance_sqrt_n / n as f64;

    let point = delta_of_theta(x, theta_hat)?;
    let z = z_quantile(level)?;
    let se = variance.sqrt();
    Ok(VarianceReport {
        method: VarianceMethod::Sandwich,
        variance,
        bias_correction: None,
        ci: Some(Ci {
            lower: point - z * se,
            upper: point + z * se,
            level,
        }),
        replicates_used: None,
        replicates_dropped: None,
    })
}

/// Stacked parameter vector, score function and plug-in map for the
/// proposed estimator with main-effects parametric nuisances. Returns the
/// point estimate at `x` together with the sandwich report.
pub fn proposed_parametric_sandwich(
    ds: &Dataset,
    x: &[f64],
    level: f64,
) -> Result<(f64, VarianceReport)> {
    if !ds.v_available_for_treated() {
        return Err(Error::EmptyCell(
            "sandwich inference requires v on the treated arm".into(),
        ));
    }
    let kind = ds.outcome_kind();
    let q = ds.q();
    let p_vx = q + 2;
    let p_x = q + 1;

    let treated: Vec<&ObservationRecord> = ds.records().iter().filter(|r| r.z == 1).collect();
    let treated_survivors: Vec<&ObservationRecord> = ds
        .records()
        .iter()
        .filter(|r| r.z == 1 && r.s == 1)
        .collect();
    let control_survivors: Vec<&ObservationRecord> = ds
        .records()
        .iter()
        .filter(|r| r.z == 0 && r.s == 1)
        .collect();

    let vx_rows = |rows: &[&ObservationRecord]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let mut row = vec![1.0, f64::from(r.v.unwrap())];
                row.extend_from_slice(&r.x);
                row
            })
            .collect()
    };
    let x_rows = |rows: &[&ObservationRecord]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let mut row = vec![1.0];
                row.extend_from_slice(&r.x);
                row
            })
            .collect()
    };

    let pi_fit = fit_logistic(
        &design_from_rows(&vx_rows(&treated))?,
        &treated.iter().map(|r| f64::from(r.s)).collect::<Vec<_>>(),
    )?;
    let y_t: Vec<f64> = treated_survivors.iter().map(|r| r.y.unwrap()).collect();
    let y_c: Vec<f64> = control_survivors.iter().map(|r| r.y.unwrap()).collect();
    let mu_t_fit = match kind {
        OutcomeKind::Binary => {
            fit_logistic(&design_from_rows(&vx_rows(&treated_survivors))?, &y_t)?
        }
        OutcomeKind::Continuous => {
            fit_linear(&design_from_rows(&vx_rows(&treated_survivors))?, &y_t)?
        }
    };
    let mu_0_fit = match kind {
        OutcomeKind::Binary => fit_logistic(&design_from_rows(&x_rows(&control_survivors))?, &y_c)?,
        OutcomeKind::Continuous => {
            fit_linear(&design_from_rows(&x_rows(&control_survivors))?, &y_c)?
        }
    };

    let mut theta = Vec::with_capacity(2 * p_vx + p_x);
    theta.extend(pi_fit.coefficients.iter());
    theta.extend(mu_t_fit.coefficients.iter());
    theta.extend(mu_0_fit.coefficients.iter());

    let lin = |coef: &[f64], row: &[f64]| -> f64 { coef.iter().zip(row).map(|(c, r)| c * r).sum() };

    let score = move |rec: &ObservationRecord, theta: &[f64]| -> Vec<f64> {
        let mut u = vec![0.0; 2 * p_vx + p_x];
        if rec.z == 1 {
            let mut row = vec![1.0, f64::from(rec.v.unwrap())];
            row.extend_from_slice(&rec.x);
            let resid = f64::from(rec.s) - expit(lin(&theta[..p_vx], &row));
            for (j, r) in row.iter().enumerate() {
                u[j] = resid * r;
            }
            if rec.s == 1 {
                let fitted = match kind {
                    OutcomeKind::Binary => expit(lin(&theta[p_vx..2 * p_vx], &row)),
                    OutcomeKind::Continuous => lin(&theta[p_vx..2 * p_vx], &row),
                };
                let resid = rec.y.unwrap() - fitted;
                for (j, r) in row.iter().enumerate() {
                    u[p_vx + j] = resid * r;
                }
            }
        } else if rec.s == 1 {
            let mut row = vec![1.0];
            row.extend_from_slice(&rec.x);
            let fitted = match kind {
                OutcomeKind::Binary => expit(lin(&theta[2 * p_vx..], &row)),
                OutcomeKind::Continuous => lin(&theta[2 * p_vx..], &row),
            };
            let resid = rec.y.unwrap() - fitted;
            for (j, r) in row.iter().enumerate() {
                u[2 * p_vx + j] = resid * r;
            }
        }
        u
    };

    let delta_of_theta = move |x: &[f64], theta: &[f64]| -> Result<f64> {
        let mut row1 = vec![1.0, 1.0];
        row1.extend_from_slice(x);
        let mut row0 = vec![1.0, 0.0];
        row0.extend_from_slice(x);
        let mut rowx = vec![1.0];
        rowx.extend_from_slice(x);
        let pi1 = clip_probability(expit(lin(&theta[..p_vx], &row1)));
        let pi0 = clip_probability(expit(lin(&theta[..p_vx], &row0)));
        let (mu1, mu0_v, mu_0) = match kind {
            OutcomeKind::Binary => (
                expit(lin(&theta[p_vx..2 * p_vx], &row1)),
                expit(lin(&theta[p_vx..2 * p_vx], &row0)),
                expit(lin(&theta[2 * p_vx..], &rowx)),
            ),
            OutcomeKind::Continuous => (
                lin(&theta[p_vx..2 * p_vx], &row1),
                lin(&theta[p_vx..2 * p_vx], &row0),
                lin(&theta[2 * p_vx..], &rowx),
            ),
        };
        csace_proposed(pi1, pi0, mu1, mu0_v, mu_0)
    };

    let point = delta_of_theta(x, &theta)?;
    let report = sandwich_se(ds, &theta, &score, &delta_of_theta, x, level)?;
    Ok((point, report))
}

struct GeneralCells {
    p1: f64,
    p2: f64,
    p3: f64,
    p4: f64,
    p5: f64,
    p6: f64,
    p7: f64,
    p8: f64,
}

fn general_cells(tbl: &ContingencyTable) -> GeneralCells {
    use SSel::Is as S;
    use VSel::{Dot, Is as V};
    use YSel::{Is as Y, Star};
    GeneralCells {
        p1: tbl.prob(V(0), 1, S(1), Y(1)),
        p2: tbl.prob(V(0), 1, S(1), Y(0)),
        p3: tbl.prob(V(1), 1, S(1), Y(1)),
        p4: tbl.prob(V(1), 1, S(1), Y(0)),
        p5: tbl.prob(V(0), 1, S(0), Star),
        p6: tbl.prob(V(1), 1, S(0), Star),
        p7: tbl.prob(Dot, 0, S(1), Y(1)),
        p8: tbl.prob(Dot, 0, S(1), Y(0)),
    }
}

fn general_v_terms(c: &GeneralCells) -> (f64, f64, f64, f64) {
    let GeneralCells {
        p1,
        p2,
        p3,
        p4,
        p5,
        p6,
        ..
    } = *c;
    let v1 = p5.powi(4) * p3 * p4 * (p3 + p4) + p6.powi(4) * p1 * p2 * (p1 + p2);
    let v2 =
        -2.0 * p5.powi(3) * p6 * p3 * p4 * (p1 + p2) - 2.0 * p6.powi(3) * p5 * p1 * p2 * (p3 + p4);
    let v3 = p5 * p5 * p6 * p6 * (p2 * p3 * (p2 + p3) + p1 * p4 * (p1 + p4));
    let v4 = p5 * p6 * (p5 + p6) * (p2 * p3 - p1 * p4).powi(2);
    (v1, v2, v3, v4)
}

/// Closed-form asymptotic variance of the no-covariate estimator, with the
/// higher-order bias term reported alongside a normal-approximation CI.
pub fn closed_form_variance(tbl: &ContingencyTable) -> Result<VarianceReport> {
    let n = tbl.n();
    if n == 0 {
        return Err(Error::InvalidInput(
            "closed-form variance needs a positive sample size".into(),
        ));
    }
    let point = binary_no_covariate(tbl)?;
    let c = general_cells(tbl);
    let den = (c.p3 + c.p4) * c.p5 - (c.p1 + c.p2) * c.p6;
    if den.abs() < 1e-10 {
        return Err(Error::DegenerateDenominator { value: den });
    }
    let (v1, v2, v3, v4) = general_v_terms(&c);
    let avar = (v1 + v2 + v3 + v4) / den.powi(4) + c.p7 * c.p8 / (c.p7 + c.p8).powi(3);
    let e_ab = 2.0 * (c.p2 * c.p3 - c.p1 * c.p4) * c.p5 * c.p6 * (c.p5 + c.p6) / den.powi(3);
    let variance = avar / n as f64;
    let z = z_quantile(0.95)?;
    let se = variance.max(0.0).sqrt();
    Ok(VarianceReport {
        method: VarianceMethod::ClosedForm,
        variance,
        bias_correction: Some(e_ab / n as f64),
        ci: Some(Ci {
            lower: point - z * se,
            upper: point + z * se,
            level: 0.95,
        }),
        replicates_used: None,
        replicates_dropped: None,
    })
}

/// Variance of the survivor-proportion contrast under explainable
/// nonrandom survival.
pub fn closed_form_variance_ens(tbl: &ContingencyTable) -> Result<VarianceReport> {
    use SSel::Is as S;
    use VSel::Dot;
    use YSel::Is as Y;
    let n = tbl.n();
    if n == 0 {
        return Err(Error::InvalidInput(
            "closed-form variance needs a positive sample size".into(),
        ));
    }
    let point = binary_no_covariate_ens(tbl)?;
    let p1 = tbl.prob(Dot, 1, S(1), Y(1));
    let p2 = tbl.prob(Dot, 1, S(1), Y(0));
    let p3 = tbl.prob(Dot, 0, S(1), Y(1));
    let p4 = tbl.prob(Dot, 0, S(1), Y(0));
    if p1 + p2 <= 0.0 || p3 + p4 <= 0.0 {
        return Err(Error::EmptyCell("empty survivor margin".into()));
    }
    let avar = p1 * p2 / (p1 + p2).powi(3) + p3 * p4 / (p3 + p4).powi(3);
    let e_ab = 2.0 * p1 * p2 * (p1 - p2) / (p1 + p2).powi(3)
        + 2.0 * p3 * p4 * (p3 - p4) / (p3 + p4).powi(3);
    let variance = avar / n as f64;
    let z = z_quantile(0.95)?;
    let se = variance.max(0.0).sqrt();
    Ok(VarianceReport {
        method: VarianceMethod::ClosedForm,
        variance,
        bias_correction: Some(e_ab / n as f64),
        ci: Some(Ci {
            lower: point - z * se,
            upper: point + z * se,
            level: 0.95,
        }),
        replicates_used: None,
        replicates_dropped: None,
    })
}

/// MOVER confidence interval: separate logit-scale Wald intervals for the
/// two survivor means, back-transformed and recombined. Keeps both bounds
/// inside (-1, 1).
pub fn mover_logit_ci(tbl: &ContingencyTable, level: f64) -> Result<(f64, f64)> {
    let n = tbl.n();
    if n == 0 {
        return Err(Error::InvalidInput(
            "MOVER interval needs a positive sample size".into(),
        ));
    }
    let (mu1, mu0) = binary_no_covariate_mu(tbl)?;
    if !(mu1 > 0.0 && mu1 < 1.0 && mu0 > 0.0 && mu0 < 1.0) {
        return Err(Error::BoundaryEstimate(format!(
            "mu1 = {mu1}, mu0 = {mu0} must lie strictly inside (0,1)"
        )));
    }
    let c = general_cells(tbl);
    let (v1, v2, v3, v4) = general_v_terms(&c);
    let d1 = c.p3 * c.p5 - c.p1 * c.p6;
    let d2 = c.p4 * c.p5 - c.p2 * c.p6;
    if d1.abs() < 1e-12 || d2.abs() < 1e-12 || c.p7 <= 0.0 || c.p8 <= 0.0 {
        return Err(Error::DegenerateDenominator {
            value: d1.abs().min(d2.abs()),
        });
    }
    let avar_l1 = (v1 + v2 + v3 + v4) / (d1 * d1 * d2 * d2);
    let avar_l0 = (c.p7 + c.p8) / (c.p7 * c.p8);
    mover_from_components(mu1, mu0, avar_l1, avar_l0, n, level)
}

/// MOVER interval for the survivor-proportion contrast (ENS pathway).
pub fn mover_logit_ci_ens(tbl: &ContingencyTable, level: f64) -> Result<(f64, f64)> {
    use SSel::Is as S;
    use VSel::Dot;
    use YSel::{Dot as YDot, Is as Y};
    let n = tbl.n();
    let m1 = tbl.prob(Dot, 1, S(1), YDot);
    let m0 = tbl.prob(Dot, 0, S(1), YDot);
    if n == 0 || m1 <= 0.0 || m0 <= 0.0 {
        return Err(Error::EmptyCell("empty survivor margin".into()));
    }
    let p1 = tbl.prob(Dot, 1, S(1), Y(1));
    let p2 = tbl.prob(Dot, 1, S(1), Y(0));
    let p3 = tbl.prob(Dot, 0, S(1), Y(1));
    let p4 = tbl.prob(Dot, 0, S(1), Y(0));
    if p1 <= 0.0 || p2 <= 0.0 || p3 <= 0.0 || p4 <= 0.0 {
        return Err(Error::BoundaryEstimate(
            "a survivor outcome cell is empty".into(),
        ));
    }
    let mu1 = p1 / (p1 + p2);
    let mu0 = p3 / (p3 + p4);
    let avar_l1 = (p1 + p2) / (p1 * p2);
    let avar_l0 = (p3 + p4) / (p3 * p4);
    mover_from_components(mu1, mu0, avar_l1, avar_l0, n, level)
}

fn mover_from_components(
    mu1: f64,
    mu0: f64,
    avar_l1: f64,
    avar_l0: f64,
    n: usize,
    level: f64,
) -> Result<(f64, f64)> {
    let z = z_quantile(level)?;
    let se1 = (avar_l1 / n as f64).sqrt();
    let se0 = (avar_l0 / n as f64).sqrt();
    let l1 = expit(logit(mu1) - z * se1);
    let u1 = expit(logit(mu1) + z * se1);
    let l0 = expit(logit(mu0) - z * se0);
    let u0 = expit(logit(mu0) + z * se0);
    let delta = mu1 - mu0;
    let lower = delta - ((l1 - mu1).powi(2) + (u0 - mu0).powi(2)).sqrt();
    let upper = delta + ((u1 - mu1).powi(2) + (l0 - mu0).powi(2)).sqrt();
    Ok((lower, upper))
}

/// Plug-in asymptotic variance of the nonparametric proposed estimator at
/// `x`: squared identification weights times the kernel asymptotic
/// variances of the three regression estimates. Smoothing-bias terms are
/// not estimated; the interval is centered correctly under undersmoothing.
pub fn kernel_plugin_variance(
    nu: &NuisanceEstimates,
    ds: &Dataset,
    x: &[f64],
    level: f64,
) -> Result<VarianceReport> {
    let detail = nu.nonparametric.as_ref().ok_or_else(|| {
        Error::InvalidInput(
            "kernel plug-in variance requires nonparametric nuisances with recorded bandwidths"
                .into(),
        )
    })?;
    let n = ds.n() as f64;
    let q = ds.q() as i32;
    let pi1 = nu.pi_t(1, x)?;
    let pi0 = nu.pi_t(0, x)?;
    let gap = pi1 - pi0;
    if gap.abs() < SUBSTITUTION_TOLERANCE {
        return Err(Error::WeakSubstitution { gap: gap.abs() });
    }
    let w1 = pi1 * (1.0 - pi0) / gap;
    let w2 = -pi0 * (1.0 - pi1) / gap;
    let w3 = -1.0;
    debug_assert!((w1 + w2 - 1.0).abs() < 1e-9);

    let density = detail.density.density(x)?;
    if density <= 0.0 {
        return Err(Error::Extrapolation { point: x.to_vec() });
    }
    let roughness = detail.kind.roughness().powi(q);

    let mut variance = 0.0;
    let mut means = [0.0; 3];
    for (j, (fit, pr, w)) in [
        (&detail.mu_t1, detail.pr_z1v1, w1),
        (&detail.mu_t0, detail.pr_z1v0, w2),
        (&detail.mu0, detail.pr_z0, w3),
    ]
    .iter()
    .enumerate()
    {
        if *pr <= 0.0 {
            return Err(Error::EmptyCell(format!(
                "empty conditioning cell for variance component {j}"
            )));
        }
        let (mean, cond_var) = fit.predict_with_variance(x)?;
        means[j] = mean;
        let sigma = roughness * cond_var / (pr * density);
        let det_h: f64 = fit.bandwidths().iter().product();
        variance += w * w * sigma / (n * det_h);
    }

    let point = csace_proposed(pi1, pi0, means[0], means[1], means[2])?;
    let z = z_quantile(level)?;
    let se = variance.max(0.0).sqrt();
    Ok(VarianceReport {
        method: VarianceMethod::KernelPlugin,
        variance,
        bias_correction: None,
        ci: Some(Ci {
            lower: point - z * se,
            upper: point + z * se,
            level,
        }),
        replicates_used: None,
        replicates_dropped: None,
    })
}

/// Nearest-rank empirical quantile (an order statistic of the sorted data).
fn order_statistic(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    let idx = ((p * m as f64).ceil() as usize).clamp(1, m) - 1;
    sorted[idx]
}

/// Nonparametric bootstrap of an end-to-end estimator: iid-with-replacement
/// resamples, per-replicate RNG streams derived from `(seed, replicate)`,
/// percentile interval from the order statistics of successful replicates.
/// Failed replicates are dropped and counted, never imputed.
pub fn bootstrap(
    ds: &Dataset,
    estimator: &(dyn Fn(&Dataset) -> Result<f64> + Sync),
    b: usize,
    seed: u64,
    level: f64,
) -> Result<VarianceReport> {
    if b < 2 {
        return Err(Error::InvalidInput(
            "bootstrap needs at least 2 replicates".into(),
        ));
    }
    let n = ds.n();
    if n == 0 {
        return Err(Error::EmptyCell("empty dataset".into()));
    }
    z_quantile(level)?; // validate the level up front
    let estimates: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let indices: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            estimator(&ds.resample(&indices))
                .ok()
                .filter(|v| v.is_finite())
        })
        .collect();

    let mut values: Vec<f64> = estimates.iter().filter_map(|v| *v).collect();
    let used = values.len();
    let dropped = b - used;
    if used < (b / 2).max(2) {
        return Err(Error::BootstrapFragile { used, total: b });
    }
    let mean = values.iter().sum::<f64>() / used as f64;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (used as f64 - 1.0);
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = 1.0 - level;
    let ci = Ci {
        lower: order_statistic(&values, alpha / 2.0),
        upper: order_statistic(&values, 1.0 - alpha / 2.0),
        level,
    };
    Ok(VarianceReport {
        method: VarianceMethod::Bootstrap,
        variance,
        bias_correction: None,
        ci: Some(ci),
        replicates_used: Some(used),
        replicates_dropped: Some(dropped),
    })
}

/// End-to-end bootstrap of the proposed pipeline (nuisance refit included).
pub fn bootstrap_pipeline(
    ds: &Dataset,
    engine: estimators::Engine,
    method: &(dyn Fn(&NuisanceEstimates, &[f64]) -> Result<f64> + Sync),
    aggregate_to: Option<(estimators::Estimand, estimators::Regime)>,
    at: Option<&[f64]>,
    b: usize,
    seed: u64,
    level: f64,
) -> Result<VarianceReport> {
    let est = move |d: &Dataset| -> Result<f64> {
        let nu = estimators::fit_nuisances(d, engine)?;
        match (aggregate_to, at) {
            (Some((estimand, regime)), _) => {
                let delta = |x: &[f64]| method(&nu, x);
                estimators::aggregate(d, &nu, &delta, estimand, regime, None)
            }
            (None, Some(x)) => method(&nu, x),
            (None, None) => Err(Error::InvalidInput(
                "either an aggregation target or an evaluation point is required".into(),
            )),
        }
    };
    bootstrap(ds, &est, b, seed, level)
}
