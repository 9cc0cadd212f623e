//! Data-driven assumption diagnostics. Each check is a pure function of
//! the dataset returning a p-value or report; none of them can confirm an
//! untestable assumption, they only look for evidence against it.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{Dataset, ObservationRecord, OutcomeKind};
use crate::error::{Error, Result};
use crate::glm::{design_from_rows, fit_linear, fit_logistic, GlmFit};

fn vx_rows(rows: &[&ObservationRecord]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let mut row = vec![1.0, f64::from(r.v.unwrap())];
            row.extend_from_slice(&r.x);
            row
        })
        .collect()
}

fn outcome_fit(
    rows: &[&ObservationRecord],
    design: &[Vec<f64>],
    kind: OutcomeKind,
) -> Result<GlmFit> {
    let y: Vec<f64> = rows.iter().map(|r| r.y.unwrap()).collect();
    let design = design_from_rows(design)?;
    match kind {
        OutcomeKind::Continuous => fit_linear(&design, &y),
        OutcomeKind::Binary => fit_logistic(&design, &y),
    }
}

/// Substitution relevance: Wald p-value of the v coefficient in the
/// survival regression within the treated arm. A small p-value supports
/// the assumption.
pub fn check_substitution_relevance(ds: &Dataset) -> Result<f64> {
    let treated: Vec<&ObservationRecord> = ds.records().iter().filter(|r| r.z == 1).collect();
    if treated.is_empty() {
        return Err(Error::EmptyCell("no treated records".into()));
    }
    if treated.iter().any(|r| r.v.is_none()) {
        return Err(Error::EmptyCell("v missing on treated records".into()));
    }
    let s: Vec<f64> = treated.iter().map(|r| f64::from(r.s)).collect();
    let fit = fit_logistic(&design_from_rows(&vx_rows(&treated))?, &s)?;
    fit.wald_p_value(1)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExclusionCheck {
    pub p_control: Option<f64>,
    pub control_skip_reason: Option<String>,
    pub p_treated: f64,
}

/// Exclusion restriction: the v coefficient in the survivor outcome
/// regressions, within the control arm (pure always-survivors) and within
/// the treated arm. Large p-values are merely consistent with the
/// assumption, which is untestable.
pub fn check_exclusion_restriction(ds: &Dataset) -> Result<ExclusionCheck> {
    let kind = ds.outcome_kind();
    let treated: Vec<&ObservationRecord> = ds
        .records()
        .iter()
        .filter(|r| r.z == 1 && r.s == 1)
        .collect();
    if treated.is_empty() || treated.iter().any(|r| r.v.is_none()) {
        return Err(Error::EmptyCell(
            "treated survivors with v are required".into(),
        ));
    }
    let p_treated = outcome_fit(&treated, &vx_rows(&treated), kind)?.wald_p_value(1)?;

    let controls: Vec<&ObservationRecord> = ds
        .records()
        .iter()
        .filter(|r| r.z == 0 && r.s == 1)
        .collect();
    let (p_control, control_skip_reason) = if controls.is_empty() {
        (None, Some("no control survivors".to_string()))
    } else if controls.iter().any(|r| r.v.is_none()) {
        (None, Some("v missing on control records".to_string()))
    } else {
        match outcome_fit(&controls, &vx_rows(&controls), kind).and_then(|f| f.wald_p_value(1)) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    Ok(ExclusionCheck {
        p_control,
        control_skip_reason,
        p_treated,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PositivityCell {
    pub x: Vec<f64>,
    pub n: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub pr_treated: f64,
    pub survivors_treated: usize,
    pub survivors_control: usize,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PositivityReport {
    pub cells: Vec<PositivityCell>,
    pub flagged: usize,
    pub note: Option<String>,
}

/// Empirical positivity per observed covariate pattern. For continuous
/// covariates the patterns are near-singletons and the report says so.
pub fn check_positivity(ds: &Dataset) -> PositivityReport {
    let mut groups: BTreeMap<Vec<u64>, Vec<&ObservationRecord>> = BTreeMap::new();
    for rec in ds.records() {
        let key: Vec<u64> = rec.x.iter().map(|v| v.to_bits()).collect();
        groups.entry(key).or_default().push(rec);
    }
    let mut cells = Vec::with_capacity(groups.len());
    let mut flagged = 0;
    for (_, rows) in groups {
        let n = rows.len();
        let n_treated = rows.iter().filter(|r| r.z == 1).count();
        let n_control = n - n_treated;
        let survivors_treated = rows.iter().filter(|r| r.z == 1 && r.s == 1).count();
        let survivors_control = rows.iter().filter(|r| r.z == 0 && r.s == 1).count();
        let mut flags = Vec::new();
        if n_treated == 0 {
            flags.push("no treated units".into());
        }
        if n_control == 0 {
            flags.push("no control units".into());
        }
        if n_treated > 0 && survivors_treated == 0 {
            flags.push("no treated survivors".into());
        }
        if n_control > 0 && survivors_control == 0 {
            flags.push("no control survivors".into());
        }
        if !flags.is_empty() {
            flagged += 1;
        }
        cells.push(PositivityCell {
            x: rows[0].x.clone(),
            n,
            n_treated,
            n_control,
            pr_treated: n_treated as f64 / n as f64,
            survivors_treated,
            survivors_control,
            flags,
        });
    }
    let note = if cells.len() > ds.n() / 2 && ds.n() > 20 {
        Some(
            "covariates look continuous; pattern-level positivity is near-vacuous, \
             inspect fitted propensities instead"
                .into(),
        )
    } else {
        None
    };
    PositivityReport {
        cells,
        flagged,
        note,
    }
}

/// Monotonicity signal: Wald p-value of the treatment coefficient when
/// regressing survival on treatment, the substitutional variable and the
/// covariates. Supportive evidence only; the assumption itself is
/// untestable because the strata are unobserved.
pub fn check_monotonicity_signal(ds: &Dataset) -> Result<f64> {
    let rows: Vec<&ObservationRecord> = ds.records().iter().collect();
    if rows.is_empty() {
        return Err(Error::EmptyCell("empty dataset".into()));
    }
    let with_v = rows.iter().all(|r| r.v.is_some());
    let design_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![1.0, f64::from(r.z)];
            if with_v {
                row.push(f64::from(r.v.unwrap()));
            }
            row.extend_from_slice(&r.x);
            row
        })
        .collect();
    let s: Vec<f64> = rows.iter().map(|r| f64::from(r.s)).collect();
    let fit = fit_logistic(&design_from_rows(&design_rows)?, &s)?;
    fit.wald_p_value(1)
}

/// Explainable-nonrandom-survival test: the v coefficient in the treated
/// survivor outcome regression. Non-rejection licenses the survivor-case
/// estimator.
pub fn test_ens(ds: &Dataset) -> Result<f64> {
    let rows: Vec<&ObservationRecord> = ds
        .records()
        .iter()
        .filter(|r| r.z == 1 && r.s == 1)
        .collect();
    if rows.is_empty() || rows.iter().any(|r| r.v.is_none()) {
        return Err(Error::EmptyCell(
            "treated survivors with v are required".into(),
        ));
    }
    let has_both = rows.iter().any(|r| r.v == Some(0)) && rows.iter().any(|r| r.v == Some(1));
    if !has_both {
        return Err(Error::EmptyCell(
            "both v values are required among treated survivors".into(),
        ));
    }
    outcome_fit(&rows, &vx_rows(&rows), ds.outcome_kind())?.wald_p_value(1)
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitScan {
    pub split: f64,
    pub z_statistic: f64,
    pub p_value: f64,
    pub warning: String,
}

/// Scan candidate dichotomization points of a continuous variable,
/// maximizing |Wald z| of the dichotomized variable in the treated-arm
/// survival regression. The returned p-value ignores the selection and is
/// therefore optimistic; the warning says so.
pub fn scan_dichotomization(ds: &Dataset, candidate: &[f64]) -> Result<SplitScan> {
    if candidate.len() != ds.n() {
        return Err(Error::DimensionMismatch {
            expected: ds.n(),
            got: candidate.len(),
        });
    }
    let treated_idx: Vec<usize> = (0..ds.n()).filter(|&i| ds.records()[i].z == 1).collect();
    if treated_idx.is_empty() {
        return Err(Error::EmptyCell("no treated records".into()));
    }
    let mut values: Vec<f64> = treated_idx.iter().map(|&i| candidate[i]).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    if values.len() < 2 {
        return Err(Error::ZeroVariance { column: 0 });
    }
    let mut best: Option<(f64, f64, f64)> = None;
    for w in values.windows(2) {
        let split = 0.5 * (w[0] + w[1]);
        let rows: Vec<Vec<f64>> = treated_idx
            .iter()
            .map(|&i| {
                let r = &ds.records()[i];
                let mut row = vec![1.0, f64::from(candidate[i] > split)];
                row.extend_from_slice(&r.x);
                row
            })
            .collect();
        let s: Vec<f64> = treated_idx
            .iter()
            .map(|&i| f64::from(ds.records()[i].s))
            .collect();
        let fit = match fit_logistic(&design_from_rows(&rows)?, &s) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let (z, p) = match (fit.wald_z(1), fit.wald_p_value(1)) {
            (Ok(z), Ok(p)) => (z, p),
            _ => continue,
        };
        if best.map(|(bz, _, _)| z.abs() > bz.abs()).unwrap_or(true) {
            best = Some((z, p, split));
        }
    }
    let (z, p, split) =
        best.ok_or_else(|| Error::EmptyCell("no admissible split produced a fit".into()))?;
    Ok(SplitScan {
        split,
        z_statistic: z,
        p_value: p,
        warning: "split chosen to maximize |z|; the p-value is not adjusted for this \
                  selection and overstates significance"
            .into(),
    })
}
