//! Identification formulas for (conditional) survivor average causal
//! effects: the survivor-case contrast, the substitutional-variable
//! estimator, its odds-ratio-adjusted and principal-score-weighted
//! variants, aggregation to population-level estimands, and the
//! closed-form no-covariate binary pathway.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{Dataset, ObservationRecord, OutcomeKind};
use crate::error::{Error, Result};
use crate::glm::{design_from_rows, fit_linear, fit_logistic, GlmFit};
use crate::inference::Ci;
use crate::kernel::{self, KernelDensity, KernelFit, KernelKind};

/// Minimum |pi_T(1,x) - pi_T(0,x)| (and weighted analogues) before the
/// identification denominator is declared degenerate.
pub const SUBSTITUTION_TOLERANCE: f64 = 1e-6;
/// Probability predictions are clipped into
/// `[PROBABILITY_CLIP, 1 - PROBABILITY_CLIP]` before entering ratios.
pub const PROBABILITY_CLIP: f64 = 1e-6;

pub fn clip_probability(p: f64) -> f64 {
    p.clamp(PROBABILITY_CLIP, 1.0 - PROBABILITY_CLIP)
}

fn check_unit_interval(name: &str, p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidInput(format!(
            "{name} must lie strictly inside (0,1), got {p}"
        )));
    }
    Ok(())
}

/// Survivor-case contrast `E(Y|Z=1,S=1,X=x) - E(Y|Z=0,S=1,X=x)`.
pub fn csace_survivor_case(mu1: f64, mu0: f64) -> f64 {
    mu1 - mu0
}

/// Substitutional-variable identification with binary v.
pub fn csace_proposed(pi_t1: f64, pi_t0: f64, mu_t1: f64, mu_t0: f64, mu_0: f64) -> Result<f64> {
    check_unit_interval("pi_T(1,x)", pi_t1)?;
    check_unit_interval("pi_T(0,x)", pi_t0)?;
    let gap = (pi_t1 - pi_t0).abs();
    if gap < SUBSTITUTION_TOLERANCE {
        return Err(Error::WeakSubstitution { gap });
    }
    let num = (1.0 - pi_t0) * pi_t1 * mu_t1 - (1.0 - pi_t1) * pi_t0 * mu_t0;
    let den = (1.0 - pi_t0) * pi_t1 - (1.0 - pi_t1) * pi_t0;
    Ok(num / den - mu_0)
}

/// General finite-support form with user weights `h` summing to zero.
pub fn csace_proposed_discrete(pi_t: &[f64], mu_t: &[f64], h: &[f64], mu_0: f64) -> Result<f64> {
    if pi_t.len() != mu_t.len() || pi_t.len() != h.len() {
        return Err(Error::DimensionMismatch {
            expected: pi_t.len(),
            got: mu_t.len().min(h.len()),
        });
    }
    if pi_t.is_empty() {
        return Err(Error::InvalidInput("empty support".into()));
    }
    let scale: f64 = h.iter().map(|w| w.abs()).sum::<f64>().max(1.0);
    let hsum: f64 = h.iter().sum();
    if hsum.abs() > 1e-8 * scale {
        return Err(Error::WeightsNotZeroSum { sum: hsum });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..pi_t.len() {
        check_unit_interval("pi_T(v,x)", pi_t[i])?;
        let odds = pi_t[i] / (1.0 - pi_t[i]);
        num += odds * mu_t[i] * h[i];
        den += odds * h[i];
    }
    if den.abs() < SUBSTITUTION_TOLERANCE {
        return Err(Error::DegenerateDenominator { value: den });
    }
    Ok(num / den - mu_0)
}

/// Identification under a known substitutional odds ratio `rho` of the
/// doomed/protected strata (binary v). `rho = 1` recovers
/// [`csace_proposed`] exactly.
pub fn csace_rho_adjusted(
    pi_t1: f64,
    pi_t0: f64,
    mu_t1: f64,
    mu_t0: f64,
    mu_0: f64,
    rho: f64,
) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "rho must be a positive finite number, got {rho}"
        )));
    }
    check_unit_interval("pi_T(1,x)", pi_t1)?;
    check_unit_interval("pi_T(0,x)", pi_t0)?;
    let num = rho * ((1.0 - pi_t0) * pi_t1 * mu_t1) - (1.0 - pi_t1) * pi_t0 * mu_t0;
    let den = rho * ((1.0 - pi_t0) * pi_t1) - (1.0 - pi_t1) * pi_t0;
    if den.abs() < SUBSTITUTION_TOLERANCE {
        return Err(Error::DegenerateDenominator { value: den });
    }
    Ok(num / den - mu_0)
}

/// Principal-score-weighted identification (weights
/// `pi_T / (pi_T - pi_C)`), valid under weak S-ignorability given (v, x).
pub fn csace_wzr(
    pi_t1: f64,
    pi_t0: f64,
    pi_c1: f64,
    pi_c0: f64,
    mu_t1: f64,
    mu_t0: f64,
    mu_0: f64,
) -> Result<f64> {
    check_unit_interval("pi_T(1,x)", pi_t1)?;
    check_unit_interval("pi_T(0,x)", pi_t0)?;
    check_unit_interval("pi_C(1,x)", pi_c1)?;
    check_unit_interval("pi_C(0,x)", pi_c0)?;
    if pi_t1 <= pi_c1 {
        return Err(Error::SurvivalOrdering { v: 1 });
    }
    if pi_t0 <= pi_c0 {
        return Err(Error::SurvivalOrdering { v: 0 });
    }
    let w1 = pi_t1 / (pi_t1 - pi_c1);
    let w0 = pi_t0 / (pi_t0 - pi_c0);
    let den = w1 - w0;
    if den.abs() < SUBSTITUTION_TOLERANCE {
        return Err(Error::DegenerateDenominator { value: den });
    }
    Ok((w1 * mu_t1 - w0 * mu_t0) / den - mu_0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Parametric,
    Nonparametric,
}

impl std::str::FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parametric" => Ok(Engine::Parametric),
            "nonparametric" => Ok(Engine::Nonparametric),
            other => Err(Error::InvalidInput(format!(
                "unknown engine `{other}` (expected parametric|nonparametric)"
            ))),
        }
    }
}

type Fn1 = Box<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>;
type Fn2 = Box<dyn Fn(u8, &[f64]) -> Result<f64> + Send + Sync>;

/// Extra state kept by the nonparametric engine so that the kernel plug-in
/// variance can be evaluated later.
pub struct NonparametricDetail {
    pub mu_t1: KernelFit,
    pub mu_t0: KernelFit,
    pub mu0: KernelFit,
    pub pr_z1v1: f64,
    pub pr_z1v0: f64,
    pub pr_z0: f64,
    pub density: KernelDensity,
    pub kind: KernelKind,
}

/// Fitted conditional functions behind a common predict interface.
/// Probability-valued functions are clipped into
/// `[PROBABILITY_CLIP, 1 - PROBABILITY_CLIP]`.
pub struct NuisanceEstimates {
    pub source: Engine,
    mu1_sc: Option<Fn1>,
    mu0: Option<Fn1>,
    mu_t: Option<Fn2>,
    pi_t: Option<Fn2>,
    pi_c_x: Option<Fn1>,
    pi_c_vx: Option<Fn2>,
    e_x: Option<Fn1>,
    e_vx: Option<Fn2>,
    unavailable: BTreeMap<&'static str, String>,
    pub nonparametric: Option<NonparametricDetail>,
}

macro_rules! accessor1 {
    ($fn_name:ident, $field:ident, $name:literal) => {
        pub fn $fn_name(&self, x: &[f64]) -> Result<f64> {
            match &self.$field {
                Some(f) => f(x),
                None => Err(Error::NuisanceUnavailable {
                    name: $name,
                    reason: self
                        .unavailable
                        .get($name)
                        .cloned()
                        .unwrap_or_else(|| "not fitted".into()),
                }),
            }
        }
    };
}

macro_rules! accessor2 {
    ($fn_name:ident, $field:ident, $name:literal) => {
        pub fn $fn_name(&self, v: u8, x: &[f64]) -> Result<f64> {
            match &self.$field {
                Some(f) => f(v, x),
                None => Err(Error::NuisanceUnavailable {
                    name: $name,
                    reason: self
                        .unavailable
                        .get($name)
                        .cloned()
                        .unwrap_or_else(|| "not fitted".into()),
                }),
            }
        }
    };
}

impl NuisanceEstimates {
    pub fn empty(source: Engine) -> Self {
        NuisanceEstimates {
            source,
            mu1_sc: None,
            mu0: None,
            mu_t: None,
            pi_t: None,
            pi_c_x: None,
            pi_c_vx: None,
            e_x: None,
            e_vx: None,
            unavailable: BTreeMap::new(),
            nonparametric: None,
        }
    }

    pub fn with_mu1_sc(mut self, f: Fn1) -> Self {
        self.mu1_sc = Some(f);
        self
    }
    pub fn with_mu0(mut self, f: Fn1) -> Self {
        self.mu0 = Some(f);
        self
    }
    pub fn with_mu_t(mut self, f: Fn2) -> Self {
        self.mu_t = Some(f);
        self
    }
    pub fn with_pi_t(mut self, f: Fn2) -> Self {
        self.pi_t = Some(f);
        self
    }
    pub fn with_pi_c_x(mut self, f: Fn1) -> Self {
        self.pi_c_x = Some(f);
        self
    }
    pub fn with_pi_c_vx(mut self, f: Fn2) -> Self {
        self.pi_c_vx = Some(f);
        self
    }
    pub fn with_e_x(mut self, f: Fn1) -> Self {
        self.e_x = Some(f);
        self
    }
    pub fn with_e_vx(mut self, f: Fn2) -> Self {
        self.e_vx = Some(f);
        self
    }

    accessor1!(mu1_sc, mu1_sc, "mu_1");
    accessor1!(mu0, mu0, "mu_0");
    accessor2!(mu_t, mu_t, "mu_T");
    accessor2!(pi_t, pi_t, "pi_T");
    accessor1!(pi_c_x, pi_c_x, "pi_C(x)");
    accessor2!(pi_c_vx, pi_c_vx, "pi_C(v,x)");
    accessor1!(e_x, e_x, "e(x)");
    accessor2!(e_vx, e_vx, "e(v,x)");

    pub fn has_pi_c_vx(&self) -> bool {
        self.pi_c_vx.is_some()
    }
    pub fn has_e_vx(&self) -> bool {
        self.e_vx.is_some()
    }

    /// Why a nuisance could not be fitted, if it could not.
    pub fn unavailable_reasons(&self) -> &BTreeMap<&'static str, String> {
        &self.unavailable
    }

    fn mark_unavailable(&mut self, name: &'static str, reason: String) {
        self.unavailable.insert(name, reason);
    }
}

/// Sensitivity parameter: a constant or a function of the covariates.
pub enum RhoSpec {
    Constant(f64),
    OfX(Fn1),
}

impl RhoSpec {
    pub fn at(&self, x: &[f64]) -> Result<f64> {
        match self {
            RhoSpec::Constant(r) => Ok(*r),
            RhoSpec::OfX(f) => f(x),
        }
    }
}

/// Which identification formula to evaluate pointwise.
pub enum Method {
    SurvivorCase,
    Proposed,
    RhoAdjusted(RhoSpec),
    Wzr,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::SurvivorCase => "survivor_case",
            Method::Proposed => "proposed",
            Method::RhoAdjusted(_) => "rho_adjusted",
            Method::Wzr => "wzr",
        }
    }
}

/// Evaluate the chosen identification formula at covariate value `x`.
pub fn csace_at(nu: &NuisanceEstimates, method: &Method, x: &[f64]) -> Result<f64> {
    match method {
        Method::SurvivorCase => Ok(csace_survivor_case(nu.mu1_sc(x)?, nu.mu0(x)?)),
        Method::Proposed => csace_proposed(
            nu.pi_t(1, x)?,
            nu.pi_t(0, x)?,
            nu.mu_t(1, x)?,
            nu.mu_t(0, x)?,
            nu.mu0(x)?,
        ),
        Method::RhoAdjusted(rho) => csace_rho_adjusted(
            nu.pi_t(1, x)?,
            nu.pi_t(0, x)?,
            nu.mu_t(1, x)?,
            nu.mu_t(0, x)?,
            nu.mu0(x)?,
            rho.at(x)?,
        ),
        Method::Wzr => csace_wzr(
            nu.pi_t(1, x)?,
            nu.pi_t(0, x)?,
            nu.pi_c_vx(1, x)?,
            nu.pi_c_vx(0, x)?,
            nu.mu_t(1, x)?,
            nu.mu_t(0, x)?,
            nu.mu0(x)?,
        ),
    }
}

fn subset_rows<'a, F: Fn(&ObservationRecord) -> bool>(
    ds: &'a Dataset,
    keep: F,
) -> Vec<&'a ObservationRecord> {
    ds.records().iter().filter(|r| keep(r)).collect()
}

fn x_design(rows: &[&ObservationRecord]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let mut row = Vec::with_capacity(1 + r.x.len());
            row.push(1.0);
            row.extend_from_slice(&r.x);
            row
        })
        .collect()
}

fn vx_design(rows: &[&ObservationRecord]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            let mut row = Vec::with_capacity(2 + r.x.len());
            row.push(1.0);
            row.push(f64::from(r.v.expect("v checked by caller")));
            row.extend_from_slice(&r.x);
            row
        })
        .collect()
}

fn x_row(x: &[f64]) -> Vec<f64> {
    let mut row = Vec::with_capacity(1 + x.len());
    row.push(1.0);
    row.extend_from_slice(x);
    row
}

fn vx_row(v: u8, x: &[f64]) -> Vec<f64> {
    let mut row = Vec::with_capacity(2 + x.len());
    row.push(1.0);
    row.push(f64::from(v));
    row.extend_from_slice(x);
    row
}

fn fit_mean_model(rows: &[Vec<f64>], y: &[f64], kind: OutcomeKind) -> Result<GlmFit> {
    let design = design_from_rows(rows)?;
    match kind {
        OutcomeKind::Continuous => fit_linear(&design, y),
        OutcomeKind::Binary => fit_logistic(&design, y),
    }
}

fn glm_fn1(fit: GlmFit, clip: bool) -> Fn1 {
    Box::new(move |x: &[f64]| {
        let p = fit.predict(&x_row(x))?;
        Ok(if clip { clip_probability(p) } else { p })
    })
}

fn glm_fn2(fit: GlmFit, clip: bool) -> Fn2 {
    Box::new(move |v: u8, x: &[f64]| {
        let p = fit.predict(&vx_row(v, x))?;
        Ok(if clip { clip_probability(p) } else { p })
    })
}

fn nw_fn1(fit: KernelFit, clip: bool) -> Fn1 {
    Box::new(move |x: &[f64]| {
        let p = fit.predict(x)?;
        Ok(if clip { clip_probability(p) } else { p })
    })
}

fn nw_fn2(fit0: KernelFit, fit1: KernelFit, clip: bool) -> Fn2 {
    Box::new(move |v: u8, x: &[f64]| {
        let fit = if v == 1 { &fit1 } else { &fit0 };
        let p = fit.predict(x)?;
        Ok(if clip { clip_probability(p) } else { p })
    })
}

fn nw_cell_fit(rows: &[&ObservationRecord], y: Vec<f64>, kind: KernelKind) -> Result<KernelFit> {
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.x.clone()).collect();
    let h = kernel::select_bandwidth(&x)?;
    kernel::fit_nw(&x, &y, &h, kind)
}

/// Fit all conditional functions on the appropriate subsamples.
/// Individual failures (empty cells, separation, zero-variance columns)
/// are recorded per function and resurface as errors when the function is
/// used, so that inadmissible pathways fail loudly rather than silently.
pub fn fit_nuisances(ds: &Dataset, engine: Engine) -> Result<NuisanceEstimates> {
    match engine {
        Engine::Parametric => fit_parametric(ds),
        Engine::Nonparametric => fit_nonparametric(ds),
    }
}

fn fit_parametric(ds: &Dataset) -> Result<NuisanceEstimates> {
    let kind = ds.outcome_kind();
    let mut nu = NuisanceEstimates::empty(Engine::Parametric);

    let treated_survivors = subset_rows(ds, |r| r.z == 1 && r.s == 1);
    let control_survivors = subset_rows(ds, |r| r.z == 0 && r.s == 1);
    let treated = subset_rows(ds, |r| r.z == 1);
    let controls = subset_rows(ds, |r| r.z == 0);
    let all = subset_rows(ds, |_| true);

    let ys = |rows: &[&ObservationRecord]| -> Vec<f64> {
        rows.iter().map(|r| r.y.unwrap_or(f64::NAN)).collect()
    };
    let ss =
        |rows: &[&ObservationRecord]| -> Vec<f64> { rows.iter().map(|r| f64::from(r.s)).collect() };

    match fit_mean_model(&x_design(&treated_survivors), &ys(&treated_survivors), kind) {
        Ok(fit) => nu.mu1_sc = Some(glm_fn1(fit, false)),
        Err(e) => nu.mark_unavailable("mu_1", e.to_string()),
    }
    match fit_mean_model(&x_design(&control_survivors), &ys(&control_survivors), kind) {
        Ok(fit) => nu.mu0 = Some(glm_fn1(fit, false)),
        Err(e) => nu.mark_unavailable("mu_0", e.to_string()),
    }

    let v_on = |rows: &[&ObservationRecord]| rows.iter().all(|r| r.v.is_some());

    if !treated_survivors.is_empty() && v_on(&treated_survivors) {
        match fit_mean_model(
            &vx_design(&treated_survivors),
            &ys(&treated_survivors),
            kind,
        ) {
            Ok(fit) => nu.mu_t = Some(glm_fn2(fit, false)),
            Err(e) => nu.mark_unavailable("mu_T", e.to_string()),
        }
    } else {
        nu.mark_unavailable("mu_T", "v missing on treated survivors".into());
    }

    if !treated.is_empty() && v_on(&treated) {
        match {
            let design = design_from_rows(&vx_design(&treated))?;
            fit_logistic(&design, &ss(&treated))
        } {
            Ok(fit) => nu.pi_t = Some(glm_fn2(fit, true)),
            Err(e) => nu.mark_unavailable("pi_T", e.to_string()),
        }
    } else {
        nu.mark_unavailable("pi_T", "v missing on treated records".into());
    }

    if controls.is_empty() {
        nu.mark_unavailable("pi_C(x)", "no control records".into());
    } else {
        match {
            let design = design_from_rows(&x_design(&controls))?;
            fit_logistic(&design, &ss(&controls))
        } {
            Ok(fit) => nu.pi_c_x = Some(glm_fn1(fit, true)),
            Err(e) => nu.mark_unavailable("pi_C(x)", e.to_string()),
        }
    }

    if !controls.is_empty() && v_on(&controls) {
        match {
            let design = design_from_rows(&vx_design(&controls))?;
            fit_logistic(&design, &ss(&controls))
        } {
            Ok(fit) => nu.pi_c_vx = Some(glm_fn2(fit, true)),
            Err(e) => nu.mark_unavailable("pi_C(v,x)", e.to_string()),
        }
    } else {
        nu.mark_unavailable("pi_C(v,x)", "v missing on control records".into());
    }

    let zs: Vec<f64> = all.iter().map(|r| f64::from(r.z)).collect();
    match {
        let design = design_from_rows(&x_design(&all))?;
        fit_logistic(&design, &zs)
    } {
        Ok(fit) => nu.e_x = Some(glm_fn1(fit, true)),
        Err(e) => nu.mark_unavailable("e(x)", e.to_string()),
    }
    if ds.v_available_for_all() {
        match {
            let design = design_from_rows(&vx_design(&all))?;
            fit_logistic(&design, &zs)
        } {
            Ok(fit) => nu.e_vx = Some(glm_fn2(fit, true)),
            Err(e) => nu.mark_unavailable("e(v,x)", e.to_string()),
        }
    } else {
        nu.mark_unavailable("e(v,x)", "v missing on some records".into());
    }

    Ok(nu)
}

fn fit_nonparametric(ds: &Dataset) -> Result<NuisanceEstimates> {
    let kind = KernelKind::Gaussian;
    let mut nu = NuisanceEstimates::empty(Engine::Nonparametric);
    if ds.q() == 0 {
        return Err(Error::InvalidInput(
            "nonparametric engine requires at least one covariate".into(),
        ));
    }

    let n = ds.n() as f64;
    let yv = |r: &&ObservationRecord| r.y.unwrap_or(f64::NAN);

    let treated_survivors = subset_rows(ds, |r| r.z == 1 && r.s == 1);
    let control_survivors = subset_rows(ds, |r| r.z == 0 && r.s == 1);

    match nw_cell_fit(
        &treated_survivors,
        treated_survivors.iter().map(yv).collect(),
        kind,
    ) {
        Ok(fit) => nu.mu1_sc = Some(nw_fn1(fit, false)),
        Err(e) => nu.mark_unavailable("mu_1", e.to_string()),
    }

    let mu0_fit = nw_cell_fit(
        &control_survivors,
        control_survivors.iter().map(yv).collect(),
        kind,
    );
    let mut mu0_detail = None;
    match mu0_fit {
        Ok(fit) => {
            mu0_detail = Some(fit.clone());
            nu.mu0 = Some(nw_fn1(fit, false));
        }
        Err(e) => nu.mark_unavailable("mu_0", e.to_string()),
    }

    let mut mu_t_detail = None;
    if ds.v_available_for_treated() {
        let cell = |v: u8| subset_rows(ds, move |r| r.z == 1 && r.s == 1 && r.v == Some(v));
        let c0 = cell(0);
        let c1 = cell(1);
        match (
            nw_cell_fit(&c0, c0.iter().map(yv).collect(), kind),
            nw_cell_fit(&c1, c1.iter().map(yv).collect(), kind),
        ) {
            (Ok(f0), Ok(f1)) => {
                mu_t_detail = Some((f0.clone(), f1.clone()));
                nu.mu_t = Some(nw_fn2(f0, f1, false));
            }
            (r0, r1) => {
                let msg = r0.err().or(r1.err()).map(|e| e.to_string()).unwrap();
                nu.mark_unavailable("mu_T", msg);
            }
        }

        let pcell = |v: u8| subset_rows(ds, move |r| r.z == 1 && r.v == Some(v));
        let p0 = pcell(0);
        let p1 = pcell(1);
        let sresp = |rows: &[&ObservationRecord]| -> Vec<f64> {
            rows.iter().map(|r| f64::from(r.s)).collect()
        };
        match (
            nw_cell_fit(&p0, sresp(&p0), kind),
            nw_cell_fit(&p1, sresp(&p1), kind),
        ) {
            (Ok(f0), Ok(f1)) => nu.pi_t = Some(nw_fn2(f0, f1, true)),
            (r0, r1) => {
                let msg = r0.err().or(r1.err()).map(|e| e.to_string()).unwrap();
                nu.mark_unavailable("pi_T", msg);
            }
        }
    } else {
        nu.mark_unavailable("mu_T", "v missing on treated records".into());
        nu.mark_unavailable("pi_T", "v missing on treated records".into());
    }

    let controls = subset_rows(ds, |r| r.z == 0);
    match nw_cell_fit(
        &controls,
        controls.iter().map(|r| f64::from(r.s)).collect(),
        kind,
    ) {
        Ok(fit) => nu.pi_c_x = Some(nw_fn1(fit, true)),
        Err(e) => nu.mark_unavailable("pi_C(x)", e.to_string()),
    }
    if ds.v_available_for_all() {
        let cell = |v: u8| subset_rows(ds, move |r| r.z == 0 && r.v == Some(v));
        let c0 = cell(0);
        let c1 = cell(1);
        let sresp = |rows: &[&ObservationRecord]| -> Vec<f64> {
            rows.iter().map(|r| f64::from(r.s)).collect()
        };
        match (
            nw_cell_fit(&c0, sresp(&c0), kind),
            nw_cell_fit(&c1, sresp(&c1), kind),
        ) {
            (Ok(f0), Ok(f1)) => nu.pi_c_vx = Some(nw_fn2(f0, f1, true)),
            (r0, r1) => {
                let msg = r0.err().or(r1.err()).map(|e| e.to_string()).unwrap();
                nu.mark_unavailable("pi_C(v,x)", msg);
            }
        }
        let e0 = subset_rows(ds, |r| r.v == Some(0));
        let e1 = subset_rows(ds, |r| r.v == Some(1));
        let zresp = |rows: &[&ObservationRecord]| -> Vec<f64> {
            rows.iter().map(|r| f64::from(r.z)).collect()
        };
        match (
            nw_cell_fit(&e0, zresp(&e0), kind),
            nw_cell_fit(&e1, zresp(&e1), kind),
        ) {
            (Ok(f0), Ok(f1)) => nu.e_vx = Some(nw_fn2(f0, f1, true)),
            (r0, r1) => {
                let msg = r0.err().or(r1.err()).map(|e| e.to_string()).unwrap();
                nu.mark_unavailable("e(v,x)", msg);
            }
        }
    } else {
        nu.mark_unavailable("pi_C(v,x)", "v missing on control records".into());
        nu.mark_unavailable("e(v,x)", "v missing on some records".into());
    }

    let all = subset_rows(ds, |_| true);
    match nw_cell_fit(&all, all.iter().map(|r| f64::from(r.z)).collect(), kind) {
        Ok(fit) => nu.e_x = Some(nw_fn1(fit, true)),
        Err(e) => nu.mark_unavailable("e(x)", e.to_string()),
    }

    // plug-in variance detail
    if let (Some((mu_t0, mu_t1)), Some(mu0)) = (mu_t_detail, mu0_detail) {
        let x_all: Vec<Vec<f64>> = ds.records().iter().map(|r| r.x.clone()).collect();
        if let Ok(h) = kernel::select_bandwidth(&x_all) {
            if let Ok(density) = kernel::fit_density(&x_all, &h, kind) {
                let count = |pred: &dyn Fn(&ObservationRecord) -> bool| {
                    ds.records().iter().filter(|r| pred(r)).count() as f64 / n
                };
                nu.nonparametric = Some(NonparametricDetail {
                    mu_t1,
                    mu_t0,
                    mu0,
                    pr_z1v1: count(&|r| r.z == 1 && r.v == Some(1)),
                    pr_z1v0: count(&|r| r.z == 1 && r.v == Some(0)),
                    pr_z0: count(&|r| r.z == 0),
                    density,
                    kind,
                });
            }
        }
    }

    Ok(nu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    Sace,
    Sacet,
    Sacec,
}

impl Estimand {
    pub fn tag(&self) -> &'static str {
        match self {
            Estimand::Sace => "SACE",
            Estimand::Sacet => "SACET",
            Estimand::Sacec => "SACEC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    General,
    WeakSIgn,
    XIndepG,
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(Regime::General),
            "weak-s" | "weak_s_ign" => Ok(Regime::WeakSIgn),
            "x-indep-g" | "x_indep_g" => Ok(Regime::XIndepG),
            other => Err(Error::InvalidInput(format!(
                "unknown regime `{other}` (expected general|weak-s|x-indep-g)"
            ))),
        }
    }
}

/// Empirical-measure aggregation of a conditional effect curve to SACE,
/// SACET or SACEC. Integrals over the covariate (and substitutional
/// variable) law are replaced by sample averages over the observed records.
/// Refined (v,x)-weights are used whenever v is observed on every record
/// and the refined nuisances are available.
pub fn aggregate(
    ds: &Dataset,
    nu: &NuisanceEstimates,
    delta: &dyn Fn(&[f64]) -> Result<f64>,
    estimand: Estimand,
    regime: Regime,
    r: Option<&dyn Fn(&[f64]) -> Result<f64>>,
) -> Result<f64> {
    if ds.n() == 0 {
        return Err(Error::EmptyCell("empty dataset".into()));
    }
    let refined = ds.v_available_for_all() && nu.has_pi_c_vx() && nu.has_e_vx();

    let pi_c = |rec: &ObservationRecord| -> Result<f64> {
        if refined {
            nu.pi_c_vx(rec.v.unwrap(), &rec.x)
        } else {
            nu.pi_c_x(&rec.x)
        }
    };
    let e = |rec: &ObservationRecord| -> Result<f64> {
        if refined {
            nu.e_vx(rec.v.unwrap(), &rec.x)
        } else {
            nu.e_x(&rec.x)
        }
    };

    let mut num = 0.0;
    let mut den = 0.0;
    for rec in ds.records() {
        let w = match (regime, estimand) {
            (Regime::XIndepG, _) => 1.0,
            (Regime::WeakSIgn, Estimand::Sace) => pi_c(rec)?,
            (Regime::WeakSIgn, Estimand::Sacet) => pi_c(rec)? * e(rec)?,
            (Regime::WeakSIgn, Estimand::Sacec) => pi_c(rec)? * (1.0 - e(rec)?),
            (Regime::General, Estimand::Sacec) => pi_c(rec)? * (1.0 - e(rec)?),
            (Regime::General, Estimand::Sacet) => {
                let r = r.ok_or_else(|| {
                    Error::NotIdentifiable(
                        "SACET under the general regime requires the doomed/protected \
                         ratio r(x) as prior knowledge"
                            .into(),
                    )
                })?;
                if !ds.v_available_for_all() {
                    return Err(Error::EmptyCell(
                        "SACET weighting requires v on every record".into(),
                    ));
                }
                let v = rec.v.unwrap();
                let pt = nu.pi_t(v, &rec.x)?;
                (pt - (1.0 - pt) / r(&rec.x)?) * nu.e_vx(v, &rec.x)?
            }
            (Regime::General, Estimand::Sace) => {
                return Err(Error::NotIdentifiable(
                    "SACE is not identifiable under the general regime; \
                     weak S-ignorability or X independent of G is required"
                        .into(),
                ))
            }
        };
        num += delta(&rec.x)? * w;
        den += w;
    }
    if den.abs() < 1e-12 {
        return Err(Error::DegenerateDenominator { value: den });
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// No-covariate binary pathway
// ---------------------------------------------------------------------------

/// Selector for the substitutional-variable index of a contingency cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VSel {
    Is(u8),
    Absent,
    Dot,
}

/// Selector for the outcome index of a contingency cell. `Star` is the
/// undefined outcome of non-survivors; `Dot` sums over all outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YSel {
    Is(u8),
    Star,
    Dot,
}

/// Selector for the survival index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SSel {
    Is(u8),
    Dot,
}

/// Cell proportions over (v, z, s, y) for binary outcomes, with `v` possibly
/// absent (controls) and `y` undefined exactly on the death cells.
#[derive(Debug, Clone)]
pub struct ContingencyTable {
    /// `[v][z][s][y]`, v in {0,1,2=absent}, y in {0,1,2=undefined}
    p: [[[[f64; 3]; 2]; 2]; 3],
    n: usize,
}

impl ContingencyTable {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        if ds.outcome_kind() != OutcomeKind::Binary {
            return Err(Error::InvalidInput(
                "contingency table requires a binary outcome".into(),
            ));
        }
        if ds.n() == 0 {
            return Err(Error::EmptyCell("empty dataset".into()));
        }
        let mut counts = [[[[0usize; 3]; 2]; 2]; 3];
        for rec in ds.records() {
            let vi = rec.v.map(|v| v as usize).unwrap_or(2);
            let yi = match rec.y {
                Some(y) => y as usize,
                None => 2,
            };
            counts[vi][rec.z as usize][rec.s as usize][yi] += 1;
        }
        let n = ds.n();
        let mut p = [[[[0.0; 3]; 2]; 2]; 3];
        for v in 0..3 {
            for z in 0..2 {
                for s in 0..2 {
                    for y in 0..3 {
                        p[v][z][s][y] = counts[v][z][s][y] as f64 / n as f64;
                    }
                }
            }
        }
        Ok(ContingencyTable { p, n })
    }

    /// Build from explicit cell proportions `(v, z, s, y, probability)`,
    /// `v = None` for absent and `y = None` for the undefined outcome.
    pub fn from_proportions(
        cells: &[(Option<u8>, u8, u8, Option<u8>, f64)],
        n: usize,
    ) -> Result<Self> {
        let mut p = [[[[0.0; 3]; 2]; 2]; 3];
        let mut total = 0.0;
        for &(v, z, s, y, prob) in cells {
            if prob < 0.0 {
                return Err(Error::InvalidInput("negative cell proportion".into()));
            }
            if z > 1 || s > 1 {
                return Err(Error::InvalidInput("z and s must be 0 or 1".into()));
            }
            let vi = match v {
                Some(v) if v <= 1 => v as usize,
                Some(v) => return Err(Error::InvalidInput(format!("v must be 0 or 1, got {v}"))),
                None => 2,
            };
            let yi = match (s, y) {
                (0, None) => 2,
                (0, Some(_)) => {
                    return Err(Error::InvalidInput(
                        "death cells (s=0) must carry the undefined outcome".into(),
                    ))
                }
                (1, Some(y)) if y <= 1 => y as usize,
                (1, _) => {
                    return Err(Error::InvalidInput(
                        "survivor cells (s=1) must carry a 0/1 outcome".into(),
                    ))
                }
                _ => unreachable!(),
            };
            p[vi][z as usize][s as usize][yi] += prob;
            total += prob;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "cell proportions must sum to 1, got {total}"
            )));
        }
        Ok(ContingencyTable { p, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Cell probability with dot-summation selectors.
    pub fn prob(&self, v: VSel, z: u8, s: SSel, y: YSel) -> f64 {
        let vs: &[usize] = match v {
            VSel::Is(v) => match v {
                0 => &[0],
                _ => &[1],
            },
            VSel::Absent => &[2],
            VSel::Dot => &[0, 1, 2],
        };
        let ss: &[usize] = match s {
            SSel::Is(s) => match s {
                0 => &[0],
                _ => &[1],
            },
            SSel::Dot => &[0, 1],
        };
        let ys: &[usize] = match y {
            YSel::Is(y) => match y {
                0 => &[0],
                _ => &[1],
            },
            YSel::Star => &[2],
            YSel::Dot => &[0, 1, 2],
        };
        let mut total = 0.0;
        for &vi in vs {
            for &si in ss {
                for &yi in ys {
                    total += self.p[vi][z as usize][si][yi];
                }
            }
        }
        total
    }
}

/// The always-survivor mean under treatment and under control implied by
/// the no-covariate identification formula.
pub fn binary_no_covariate_mu(tbl: &ContingencyTable) -> Result<(f64, f64)> {
    use SSel::Is as S;
    use VSel::{Dot as VDot, Is as V};
    use YSel::{Dot as YDot, Is as Y, Star};

    if tbl.prob(VSel::Absent, 1, SSel::Dot, YDot) > 0.0 {
        return Err(Error::InvalidInput(
            "treated records must carry the substitutional variable".into(),
        ));
    }
    let p0111 = tbl.prob(V(0), 1, S(1), Y(1));
    let p1111 = tbl.prob(V(1), 1, S(1), Y(1));
    let p010s = tbl.prob(V(0), 1, S(0), Star);
    let p110s = tbl.prob(V(1), 1, S(0), Star);
    let p011d = tbl.prob(V(0), 1, S(1), YDot);
    let p111d = tbl.prob(V(1), 1, S(1), YDot);

    let num = p0111 * p110s - p1111 * p010s;
    let den = p011d * p110s - p111d * p010s;
    if den.abs() < 1e-10 {
        return Err(Error::DegenerateDenominator { value: den });
    }
    let control_margin = tbl.prob(VDot, 0, S(1), YDot);
    if control_margin <= 0.0 {
        return Err(Error::EmptyCell("no control survivors".into()));
    }
    let mu1 = num / den;
    let mu0 = tbl.prob(VDot, 0, S(1), Y(1)) / control_margin;
    Ok((mu1, mu0))
}

/// Closed-form no-covariate estimate of the survivor average causal effect
/// for binary outcomes with a binary substitutional variable.
pub fn binary_no_covariate(tbl: &ContingencyTable) -> Result<f64> {
    let (mu1, mu0) = binary_no_covariate_mu(tbl)?;
    Ok(mu1 - mu0)
}

/// Survivor-proportion contrast valid under explainable nonrandom survival.
pub fn binary_no_covariate_ens(tbl: &ContingencyTable) -> Result<f64> {
    use SSel::Is as S;
    use VSel::Dot as VDot;
    use YSel::{Dot as YDot, Is as Y};
    let m1 = tbl.prob(VDot, 1, S(1), YDot);
    let m0 = tbl.prob(VDot, 0, S(1), YDot);
    if m1 <= 0.0 || m0 <= 0.0 {
        return Err(Error::EmptyCell("empty survivor margin".into()));
    }
    Ok(tbl.prob(VDot, 1, S(1), Y(1)) / m1 - tbl.prob(VDot, 0, S(1), Y(1)) / m0)
}

/// Point estimate with uncertainty and bookkeeping, as emitted by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateResult {
    pub estimand: String,
    pub method: String,
    pub point: f64,
    pub se: Option<f64>,
    pub ci: Option<Ci>,
    pub diagnostics: BTreeMap<String, serde_json::Value>,
}
