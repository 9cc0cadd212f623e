//! Data-generating process for the simulation study, plus the replication
//! harness producing average-bias / mean-absolute-bias tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, ObservationRecord, OutcomeKind};
use crate::error::{Error, Result};
use crate::estimators::{self, Engine, Estimand, Method, Regime};
use crate::glm::expit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Setting {
    One,
    Two,
    Three,
    Four,
    Custom,
}

/// DGP parameters. The presets fix `(a1, a2, b1, b2, c1, c2)`:
/// setting 1 is a randomized experiment without explainable nonrandom
/// survival, setting 2 a nonrandomized one with it, settings 3 and 4
/// nonrandomized ones without it (4 with a weaker substitutional variable).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SimulationConfig {
    pub setting: Setting,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub n: usize,
    pub reps: usize,
    pub outcome_kind: OutcomeKind,
    pub seed: u64,
}

impl SimulationConfig {
    pub fn preset(
        setting: Setting,
        outcome_kind: OutcomeKind,
        n: usize,
        reps: usize,
        seed: u64,
    ) -> Self {
        let (a1, a2, b1, b2, c1, c2) = match setting {
            Setting::One => (0.0, 0.0, 3.0, 0.0, 3.0, 0.0),
            Setting::Two => (1.0, 0.0, 3.0, 0.0, 3.0, 3.0),
            Setting::Three => (1.0, 0.0, 3.0, 0.0, 3.0, 0.0),
            Setting::Four => (1.0, 0.0, 2.0, 0.0, 3.0, 0.0),
            Setting::Custom => (0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        };
        SimulationConfig {
            setting,
            a1,
            a2,
            b1,
            b2,
            c1,
            c2,
            n,
            reps,
            outcome_kind,
            seed,
        }
    }

    pub fn custom(
        params: (f64, f64, f64, f64, f64, f64),
        outcome_kind: OutcomeKind,
        n: usize,
        reps: usize,
        seed: u64,
    ) -> Self {
        SimulationConfig {
            setting: Setting::Custom,
            a1: params.0,
            a2: params.1,
            b1: params.2,
            b2: params.3,
            c1: params.4,
            c2: params.5,
            n,
            reps,
            outcome_kind,
            seed,
        }
    }

    /// True SACE implied by the outcome model.
    pub fn true_sace(&self) -> f64 {
        match self.outcome_kind {
            OutcomeKind::Continuous => 2.0,
            OutcomeKind::Binary => 0.2,
        }
    }
}

/// Latent per-record state kept alongside the observed dataset so oracle
/// tests can condition on it.
#[derive(Debug, Clone)]
pub struct ReplicateTruth {
    pub true_sace: f64,
    pub s0: Vec<u8>,
    pub s1: Vec<u8>,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GeneratedReplicate {
    pub dataset: Dataset,
    pub truth: ReplicateTruth,
}

/// Draw one replicate. The RNG stream is derived from
/// `(config.seed, replicate_index)`, so replicates are reproducible
/// independently of execution order.
pub fn generate(config: &SimulationConfig, replicate_index: u64) -> GeneratedReplicate {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replicate_index.wrapping_add(1));
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");

    let n = config.n;
    let mut records = Vec::with_capacity(n);
    let mut s0s = Vec::with_capacity(n);
    let mut s1s = Vec::with_capacity(n);
    let mut y1s = Vec::with_capacity(n);
    let mut y0s = Vec::with_capacity(n);

    for _ in 0..n {
        // (X1, X2) bivariate normal with means 1, unit variances,
        // covariance 0.5; X3 uniform on (0, 2)
        let e1 = std_normal.sample(&mut rng);
        let e2 = std_normal.sample(&mut rng);
        let x1 = 1.0 + e1;
        let x2 = 1.0 + 0.5 * e1 + (0.75f64).sqrt() * e2;
        let x3 = rng.gen_range(0.0..2.0);

        let s0 = u8::from(rng.gen::<f64>() < 0.6);
        let s1 = if s0 == 1 {
            1
        } else {
            u8::from(rng.gen::<f64>() < 0.6)
        };
        let ds = f64::from(s1) - f64::from(s0);

        let v =
            u8::from(rng.gen::<f64>() < expit(-1.0 + config.b1 * f64::from(s0) + config.b2 * ds));
        let z = u8::from(
            rng.gen::<f64>()
                < expit(
                    -2.0 + x1 + config.a1 * f64::from(s0) + config.a2 * ds + f64::from(v) / 3.0,
                ),
        );

        let m = -x1 - 2.0 * x2 + 2.0 * x3 + config.c1 * f64::from(s0) + config.c2 * ds;
        let (y1, y0) = match config.outcome_kind {
            OutcomeKind::Continuous => (
                m + 2.0 + std_normal.sample(&mut rng),
                m + std_normal.sample(&mut rng),
            ),
            OutcomeKind::Binary => {
                let base = 0.8 * expit(m);
                (
                    f64::from(rng.gen::<f64>() < base + 0.2),
                    f64::from(rng.gen::<f64>() < base),
                )
            }
        };

        let s = if z == 1 { s1 } else { s0 };
        let y = if s == 1 {
            Some(if z == 1 { y1 } else { y0 })
        } else {
            None
        };

        records.push(ObservationRecord {
            z,
            s,
            y,
            v: Some(v),
            x: vec![x1, x2, x3],
        });
        s0s.push(s0);
        s1s.push(s1);
        y1s.push(y1);
        y0s.push(y0);
    }

    let dataset = Dataset::new(
        records,
        config.outcome_kind,
        vec!["x1".into(), "x2".into(), "x3".into()],
    )
    .expect("generated records satisfy the data contract");
    GeneratedReplicate {
        dataset,
        truth: ReplicateTruth {
            true_sace: config.true_sace(),
            s0: s0s,
            s1: s1s,
            y1: y1s,
            y0: y0s,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyMethod {
    SurvivorCase,
    Wzr,
    ProposedParametric,
    ProposedNonparametric,
}

impl StudyMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            StudyMethod::SurvivorCase => "survivor_case",
            StudyMethod::Wzr => "wzr",
            StudyMethod::ProposedParametric => "proposed_parametric",
            StudyMethod::ProposedNonparametric => "proposed_nonparametric",
        }
    }
}

impl std::str::FromStr for StudyMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sc" | "survivor-case" | "survivor_case" => Ok(StudyMethod::SurvivorCase),
            "wzr" => Ok(StudyMethod::Wzr),
            "proposed-parametric" | "proposed_parametric" | "pe" => {
                Ok(StudyMethod::ProposedParametric)
            }
            "proposed-nonparametric" | "proposed_nonparametric" | "npe" => {
                Ok(StudyMethod::ProposedNonparametric)
            }
            other => Err(Error::InvalidInput(format!(
                "unknown study method `{other}`"
            ))),
        }
    }
}

/// Full pipeline for one study method on one dataset: fit the nuisances,
/// evaluate the conditional-effect curve, and average it over the sample
/// (the study design draws the principal strata independently of the
/// covariates, so the SACE is the unweighted average of the curve).
pub fn study_estimate(ds: &Dataset, method: StudyMethod) -> Result<f64> {
    let (engine, formula) = match method {
        StudyMethod::SurvivorCase => (Engine::Parametric, Method::SurvivorCase),
        StudyMethod::Wzr => (Engine::Parametric, Method::Wzr),
        StudyMethod::ProposedParametric => (Engine::Parametric, Method::Proposed),
        StudyMethod::ProposedNonparametric => (Engine::Nonparametric, Method::Proposed),
    };
    let nu = estimators::fit_nuisances(ds, engine)?;
    let delta = |x: &[f64]| estimators::csace_at(&nu, &formula, x);
    estimators::aggregate(ds, &nu, &delta, Estimand::Sace, Regime::XIndepG, None)
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: StudyMethod,
    pub average_bias: f64,
    pub mean_absolute_bias: f64,
    pub sd_bias: f64,
    pub sd_absolute_bias: f64,
    pub reps_used: usize,
    pub reps_failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateRow {
    pub replicate: u64,
    pub method: StudyMethod,
    pub estimate: Option<f64>,
    pub bias: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyResult {
    pub config: SimulationConfig,
    pub true_value: f64,
    pub summaries: Vec<MethodSummary>,
    pub replicates: Vec<ReplicateRow>,
}

fn sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Run the replication study: for every replicate, generate data once and
/// run each requested method's full pipeline on it. Replicates execute in
/// parallel; aggregation is order-independent.
pub fn run_study(config: &SimulationConfig, methods: &[StudyMethod]) -> Result<StudyResult> {
    if methods.is_empty() {
        return Err(Error::InvalidInput("no study methods requested".into()));
    }
    let truth = config.true_sace();
    let per_rep: Vec<Vec<(StudyMethod, Result<f64>)>> = (0..config.reps as u64)
        .into_par_iter()
        .map(|rep| {
            let data = generate(config, rep);
            methods
                .iter()
                .map(|&m| (m, study_estimate(&data.dataset, m)))
                .collect()
        })
        .collect();

    let mut replicates = Vec::with_capacity(config.reps * methods.len());
    let mut summaries = Vec::with_capacity(methods.len());
    for (mi, &method) in methods.iter().enumerate() {
        let mut biases = Vec::new();
        let mut abs_biases = Vec::new();
        let mut failed = 0;
        for (rep, row) in per_rep.iter().enumerate() {
            match &row[mi].1 {
                Ok(est) => {
                    let bias = est - truth;
                    biases.push(bias);
                    abs_biases.push(bias.abs());
                    replicates.push(ReplicateRow {
                        replicate: rep as u64,
                        method,
                        estimate: Some(*est),
                        bias: Some(bias),
                        error: None,
                    });
                }
                Err(e) => {
                    failed += 1;
                    replicates.push(ReplicateRow {
                        replicate: rep as u64,
                        method,
                        estimate: None,
                        bias: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        if biases.is_empty() {
            return Err(Error::EmptyCell(format!(
                "method {} failed on every replicate",
                method.tag()
            )));
        }
        let used = biases.len();
        summaries.push(MethodSummary {
            method,
            average_bias: biases.iter().sum::<f64>() / used as f64,
            mean_absolute_bias: abs_biases.iter().sum::<f64>() / used as f64,
            sd_bias: sd(&biases),
            sd_absolute_bias: sd(&abs_biases),
            reps_used: used,
            reps_failed: failed,
        });
    }

    Ok(StudyResult {
        config: *config,
        true_value: truth,
        summaries,
        replicates,
    })
}

impl StudyResult {
    /// One row per method.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "method,average_bias,mean_absolute_bias,sd_bias,sd_absolute_bias,reps_used,reps_failed,true_value\n",
        );
        for s in &self.summaries {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                s.method.tag(),
                s.average_bias,
                s.mean_absolute_bias,
                s.sd_bias,
                s.sd_absolute_bias,
                s.reps_used,
                s.reps_failed,
                self.true_value
            ));
        }
        out
    }

    /// Plot-ready long format, one row per (replicate, method).
    pub fn replicates_csv(&self) -> String {
        let mut out = String::from("replicate,method,estimate,bias,error\n");
        for r in &self.replicates {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.replicate,
                r.method.tag(),
                r.estimate.map(|v| v.to_string()).unwrap_or_default(),
                r.bias.map(|v| v.to_string()).unwrap_or_default(),
                r.error
                    .as_deref()
                    .map(|e| e.replace(',', ";"))
                    .unwrap_or_default()
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism_bit_for_bit() {
        let cfg = SimulationConfig::preset(Setting::Three, OutcomeKind::Continuous, 500, 2, 42);
        let a = generate(&cfg, 1);
        let b = generate(&cfg, 1);
        assert_eq!(a.dataset.records(), b.dataset.records());
        let ra = run_study(&cfg, &[StudyMethod::SurvivorCase]).unwrap();
        let rb = run_study(&cfg, &[StudyMethod::SurvivorCase]).unwrap();
        assert_eq!(
            ra.summaries[0].average_bias.to_bits(),
            rb.summaries[0].average_bias.to_bits()
        );
    }

    #[test]
    fn replicates_differ_from_each_other() {
        let cfg = SimulationConfig::preset(Setting::One, OutcomeKind::Continuous, 100, 2, 42);
        let a = generate(&cfg, 0);
        let b = generate(&cfg, 1);
        assert_ne!(a.dataset.records(), b.dataset.records());
    }

    #[test]
    fn monotonicity_holds_by_construction() {
        let cfg = SimulationConfig::preset(Setting::Three, OutcomeKind::Binary, 20_000, 1, 9);
        let data = generate(&cfg, 0);
        for i in 0..cfg.n {
            assert!(data.truth.s1[i] >= data.truth.s0[i]);
        }
    }

    #[test]
    fn control_survival_marginal_matches() {
        // pr(S(0) = 1) = 0.6 within 0.003 over 1e6 draws
        let cfg = SimulationConfig::preset(Setting::One, OutcomeKind::Binary, 1_000_000, 1, 31);
        let data = generate(&cfg, 0);
        let rate = data.truth.s0.iter().map(|&s| f64::from(s)).sum::<f64>() / cfg.n as f64;
        assert!((rate - 0.6).abs() < 0.003, "pr(S(0)=1) = {rate}");
    }

    #[test]
    fn setting_one_has_no_direct_dependence_of_z_on_s0() {
        // logistic coefficient of S(0) in Z ~ (S0, X1, V) near zero
        let cfg = SimulationConfig::preset(Setting::One, OutcomeKind::Binary, 100_000, 1, 77);
        let data = generate(&cfg, 0);
        let rows: Vec<Vec<f64>> = (0..cfg.n)
            .map(|i| {
                let r = &data.dataset.records()[i];
                vec![
                    1.0,
                    f64::from(data.truth.s0[i]),
                    r.x[0],
                    f64::from(r.v.unwrap()),
                ]
            })
            .collect();
        let z: Vec<f64> = data
            .dataset
            .records()
            .iter()
            .map(|r| f64::from(r.z))
            .collect();
        let design = crate::glm::design_from_rows(&rows).unwrap();
        let fit = crate::glm::fit_logistic(&design, &z).unwrap();
        let se = fit.covariance[(1, 1)].sqrt();
        assert!(
            fit.coefficients[1].abs() < 3.0 * se,
            "S(0) coefficient {} (se {se})",
            fit.coefficients[1]
        );
    }

    #[test]
    fn ens_setting_biases_shrink_with_sample_size() {
        let methods = [
            StudyMethod::SurvivorCase,
            StudyMethod::Wzr,
            StudyMethod::ProposedParametric,
            StudyMethod::ProposedNonparametric,
        ];
        let small = run_study(
            &SimulationConfig::preset(Setting::Two, OutcomeKind::Continuous, 400, 100, 4),
            &methods,
        )
        .unwrap();
        let large = run_study(
            &SimulationConfig::preset(Setting::Two, OutcomeKind::Continuous, 3000, 100, 4),
            &methods,
        )
        .unwrap();
        for (s, l) in small.summaries.iter().zip(&large.summaries) {
            assert!(
                l.mean_absolute_bias < s.mean_absolute_bias,
                "{}: {} !< {}",
                s.method.tag(),
                l.mean_absolute_bias,
                s.mean_absolute_bias
            );
        }
    }
}
