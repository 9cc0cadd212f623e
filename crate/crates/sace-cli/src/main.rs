//! Command line front end: estimation, simulation studies, sensitivity
//! sweeps and assumption diagnostics, with reproducible seeded runs.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 estimation error.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use sace::checks;
use sace::data::{Dataset, OutcomeKind};
use sace::error::Error;
use sace::estimators::{
    self, ContingencyTable, Engine, Estimand, EstimateResult, Method, Regime, RhoSpec,
};
use sace::inference;
use sace::sensitivity::{self, SweepOptions};
use sace::simulation::{self, Setting, SimulationConfig, StudyMethod};

#[derive(Parser)]
#[command(
    name = "sace",
    version,
    about = "Survivor average causal effects under truncation by death"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a (conditional) survivor average causal effect from a CSV.
    Estimate(EstimateArgs),
    /// Run the simulation study and write bias tables.
    Simulate(SimulateArgs),
    /// Sensitivity sweeps over the substitutional odds ratio and the
    /// monotonicity parameter.
    Sensitivity(SensitivityArgs),
    /// Assumption diagnostics as one JSON document.
    Check(CheckArgs),
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    data: PathBuf,
    /// continuous | binary
    #[arg(long)]
    outcome: String,
    /// sc | proposed | rho | wzr | binary-nocov | binary-nocov-ens
    #[arg(long)]
    method: String,
    /// csace | sace | sacet | sacec
    #[arg(long, default_value = "sace")]
    estimand: String,
    /// Covariate value for csace, comma separated.
    #[arg(long)]
    at: Option<String>,
    /// parametric | nonparametric
    #[arg(long, default_value = "parametric")]
    engine: String,
    /// general | weak-s | x-indep-g
    #[arg(long, default_value = "general")]
    regime: String,
    /// Substitutional odds ratio for --method rho.
    #[arg(long)]
    rho: Option<f64>,
    /// Constant doomed/protected ratio r(x) for SACET under the general
    /// regime.
    #[arg(long)]
    r_value: Option<f64>,
    /// Bootstrap replicates (1000 when the flag is given bare).
    #[arg(long, num_args = 0..=1, default_missing_value = "1000")]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset 1..4; omit for a custom parameterization.
    #[arg(long)]
    setting: Option<u8>,
    #[arg(long)]
    a1: Option<f64>,
    #[arg(long)]
    a2: Option<f64>,
    #[arg(long)]
    b1: Option<f64>,
    #[arg(long)]
    b2: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
    #[arg(long, default_value_t = 3000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long)]
    outcome: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma list: sc, wzr, proposed-parametric, proposed-nonparametric.
    #[arg(long, default_value = "sc,wzr,proposed-parametric")]
    methods: String,
    /// Output prefix; writes <prefix>_summary.csv, <prefix>_summary.json
    /// and <prefix>_replicates.csv.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct SensitivityArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    outcome: String,
    /// rho | kappa
    #[arg(long, default_value = "rho")]
    param: String,
    /// Comma-separated rho grid; default exp(-1)..exp(1), 21 points.
    #[arg(long)]
    grid: Option<String>,
    /// Comma-separated kappa grid; default {exp(-1), exp(-0.5), exp(0.5), exp(1)}.
    #[arg(long)]
    kappa_grid: Option<String>,
    #[arg(long, default_value = "parametric")]
    engine: String,
    #[arg(long, default_value = "sace")]
    estimand: String,
    #[arg(long, default_value = "x-indep-g")]
    regime: String,
    #[arg(long, num_args = 0..=1, default_missing_value = "1000")]
    bootstrap: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    outcome: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Io(_) => "io",
        Error::Csv { .. } => "csv",
        Error::DataContract { .. } => "data_contract",
        Error::InvalidInput(_) => "invalid_input",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::RankDeficient => "rank_deficient",
        Error::Separation { .. } => "separation",
        Error::NonConvergence { .. } => "non_convergence",
        Error::ZeroVariance { .. } => "zero_variance",
        Error::ZeroCoefficientVariance { .. } => "zero_coefficient_variance",
        Error::Extrapolation { .. } => "extrapolation",
        Error::WeakSubstitution { .. } => "weak_substitution",
        Error::DegenerateDenominator { .. } => "degenerate_denominator",
        Error::WeightsNotZeroSum { .. } => "weights_not_zero_sum",
        Error::SurvivalOrdering { .. } => "survival_ordering",
        Error::EmptyCell(_) => "empty_cell",
        Error::NuisanceUnavailable { .. } => "nuisance_unavailable",
        Error::NotIdentifiable(_) => "not_identifiable",
        Error::BoundaryEstimate(_) => "boundary_estimate",
        Error::ScoreNotAtRoot { .. } => "score_not_at_root",
        Error::SingularJacobian => "singular_jacobian",
        Error::BootstrapFragile { .. } => "bootstrap_fragile",
    }
}

fn fail(e: Error) -> ExitCode {
    let payload = json!({"error": {"kind": error_kind(&e), "message": e.to_string()}});
    eprintln!("{payload}");
    if e.is_data_error() {
        ExitCode::from(3)
    } else {
        ExitCode::from(4)
    }
}

fn usage_fail(msg: &str) -> ExitCode {
    let payload = json!({"error": {"kind": "usage", "message": msg}});
    eprintln!("{payload}");
    ExitCode::from(2)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(Error::from),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct Envelope<T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    params: Value,
    result: T,
}

fn envelope<T: Serialize>(command: &'static str, seed: u64, params: Value, result: T) -> String {
    let env = Envelope {
        tool: "sace",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed,
        params,
        result,
    };
    serde_json::to_string_pretty(&env).expect("serializable envelope")
}

fn parse_floats(text: &str) -> Result<Vec<f64>, Error> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("not a number: `{t}`")))
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Estimate(args) => run_estimate(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Sensitivity(args) => run_sensitivity(args),
        Command::Check(args) => run_check(args),
    }
}

fn run_estimate(args: EstimateArgs) -> ExitCode {
    let outcome: OutcomeKind = match args.outcome.parse() {
        Ok(o) => o,
        Err(_) => return usage_fail("unknown --outcome (expected continuous|binary)"),
    };
    let engine: Engine = match args.engine.parse() {
        Ok(e) => e,
        Err(_) => return usage_fail("unknown --engine (expected parametric|nonparametric)"),
    };
    let regime: Regime = match args.regime.parse() {
        Ok(r) => r,
        Err(_) => return usage_fail("unknown --regime (expected general|weak-s|x-indep-g)"),
    };
    let ds = match Dataset::load_csv(&args.data, outcome) {
        Ok(ds) => ds,
        Err(e) => return fail(e),
    };

    let params = json!({
        "data": args.data,
        "outcome": args.outcome,
        "method": args.method,
        "estimand": args.estimand,
        "at": args.at,
        "engine": args.engine,
        "regime": args.regime,
        "rho": args.rho,
        "r_value": args.r_value,
        "bootstrap": args.bootstrap,
        "level": args.level,
    });

    let result = match args.method.as_str() {
        "binary-nocov" | "binary-nocov-ens" => {
            estimate_no_covariate(&ds, &args, args.method == "binary-nocov-ens")
        }
        "sc" | "proposed" | "rho" | "wzr" => estimate_with_curve(&ds, &args, engine, regime),
        other => {
            return usage_fail(&format!(
                "unknown --method `{other}` (expected sc|proposed|rho|wzr|binary-nocov|binary-nocov-ens)"
            ))
        }
    };
    match result {
        Ok(res) => {
            let text = envelope("estimate", args.seed, params, res);
            match emit(&args.out, &text) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
        Err(e) => fail(e),
    }
}

fn estimate_no_covariate(
    ds: &Dataset,
    args: &EstimateArgs,
    ens: bool,
) -> Result<EstimateResult, Error> {
    let tbl = ContingencyTable::from_dataset(ds)?;
    let mut diagnostics = BTreeMap::new();
    let (point, report, mover) = if ens {
        (
            estimators::binary_no_covariate_ens(&tbl)?,
            inference::closed_form_variance_ens(&tbl)?,
            inference::mover_logit_ci_ens(&tbl, args.level)?,
        )
    } else {
        (
            estimators::binary_no_covariate(&tbl)?,
            inference::closed_form_variance(&tbl)?,
            inference::mover_logit_ci(&tbl, args.level)?,
        )
    };
    if let Some(bias) = report.bias_correction {
        diagnostics.insert("bias_correction".into(), json!(bias));
    }
    if let Some(ci) = report.ci {
        diagnostics.insert(
            "wald_ci".into(),
            json!({"lower": ci.lower, "upper": ci.upper, "level": ci.level}),
        );
    }
    if !(0.0..=1.0).contains(&point) && !(-1.0..=0.0).contains(&point) {
        diagnostics.insert("out_of_range".into(), json!(true));
    }
    if let Some(b) = args.bootstrap {
        let est = |d: &Dataset| -> Result<f64, Error> {
            let t = ContingencyTable::from_dataset(d)?;
            if ens {
                estimators::binary_no_covariate_ens(&t)
            } else {
                estimators::binary_no_covariate(&t)
            }
        };
        let boot = inference::bootstrap(ds, &est, b, args.seed, args.level)?;
        diagnostics.insert("bootstrap_se".into(), json!(boot.se()));
        if let Some(ci) = boot.ci {
            diagnostics.insert(
                "bootstrap_ci".into(),
                json!({"lower": ci.lower, "upper": ci.upper, "level": ci.level}),
            );
        }
        diagnostics.insert("bootstrap_dropped".into(), json!(boot.replicates_dropped));
    }
    Ok(EstimateResult {
        estimand: "SACE".into(),
        method: if ens {
            "binary_ens".into()
        } else {
            "binary_closed_form".into()
        },
        point,
        se: Some(report.se()),
        ci: Some(inference::Ci {
            lower: mover.0,
            upper: mover.1,
            level: args.level,
        }),
        diagnostics,
    })
}

fn estimate_with_curve(
    ds: &Dataset,
    args: &EstimateArgs,
    engine: Engine,
    regime: Regime,
) -> Result<EstimateResult, Error> {
    let method = match args.method.as_str() {
        "sc" => Method::SurvivorCase,
        "proposed" => Method::Proposed,
        "wzr" => Method::Wzr,
        "rho" => {
            let rho = args
                .rho
                .ok_or_else(|| Error::InvalidInput("--method rho requires --rho".into()))?;
            Method::RhoAdjusted(RhoSpec::Constant(rho))
        }
        _ => unreachable!(),
    };
    let nu = estimators::fit_nuisances(ds, engine)?;
    let mut diagnostics = BTreeMap::new();
    for (name, reason) in nu.unavailable_reasons() {
        diagnostics.insert(format!("unavailable_{name}"), json!(reason));
    }

    let estimand_tag: String;
    let point: f64;
    let mut se = None;
    let mut ci = None;

    if args.estimand == "csace" {
        let at_text = args
            .at
            .as_deref()
            .ok_or_else(|| Error::InvalidInput("--estimand csace requires --at".into()))?;
        let x = parse_floats(at_text)?;
        if x.len() != ds.q() {
            return Err(Error::DimensionMismatch {
                expected: ds.q(),
                got: x.len(),
            });
        }
        point = estimators::csace_at(&nu, &method, &x)?;
        estimand_tag = format!("CSACE({at_text})");
        // analytic uncertainty where the theory provides it
        if matches!(method, Method::Proposed) {
            match engine {
                Engine::Parametric => {
                    let (_, report) = inference::proposed_parametric_sandwich(ds, &x, args.level)?;
                    se = Some(report.se());
                    ci = report.ci;
                    diagnostics.insert("se_method".into(), json!("sandwich"));
                }
                Engine::Nonparametric => {
                    let report = inference::kernel_plugin_variance(&nu, ds, &x, args.level)?;
                    se = Some(report.se());
                    ci = report.ci;
                    diagnostics.insert("se_method".into(), json!("kernel_plugin"));
                    diagnostics.insert(
                        "smoothing_bias".into(),
                        json!("not estimated; interval assumes undersmoothing"),
                    );
                }
            }
        }
        if let Some(b) = args.bootstrap {
            let x_owned = x.clone();
            let mref = &method;
            let est = move |d: &Dataset| -> Result<f64, Error> {
                let nu_b = estimators::fit_nuisances(d, engine)?;
                estimators::csace_at(&nu_b, mref, &x_owned)
            };
            let boot = inference::bootstrap(ds, &est, b, args.seed, args.level)?;
            se = Some(boot.se());
            ci = boot.ci;
            diagnostics.insert("se_method".into(), json!("bootstrap"));
            diagnostics.insert("bootstrap_dropped".into(), json!(boot.replicates_dropped));
        }
    } else {
        let estimand = match args.estimand.as_str() {
            "sace" => Estimand::Sace,
            "sacet" => Estimand::Sacet,
            "sacec" => Estimand::Sacec,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown --estimand `{other}` (expected csace|sace|sacet|sacec)"
                )))
            }
        };
        estimand_tag = estimand.tag().to_string();
        let r_fn = args
            .r_value
            .map(|r| move |_: &[f64]| -> Result<f64, Error> { Ok(r) });
        let delta = |x: &[f64]| estimators::csace_at(&nu, &method, x);
        point = match &r_fn {
            Some(f) => estimators::aggregate(ds, &nu, &delta, estimand, regime, Some(f))?,
            None => estimators::aggregate(ds, &nu, &delta, estimand, regime, None)?,
        };
        if let Some(b) = args.bootstrap {
            let mref = &method;
            let r_value = args.r_value;
            let est = move |d: &Dataset| -> Result<f64, Error> {
                let nu_b = estimators::fit_nuisances(d, engine)?;
                let delta_b = |x: &[f64]| estimators::csace_at(&nu_b, mref, x);
                match r_value {
                    Some(r) => {
                        let f = move |_: &[f64]| -> Result<f64, Error> { Ok(r) };
                        estimators::aggregate(d, &nu_b, &delta_b, estimand, regime, Some(&f))
                    }
                    None => estimators::aggregate(d, &nu_b, &delta_b, estimand, regime, None),
                }
            };
            let boot = inference::bootstrap(ds, &est, b, args.seed, args.level)?;
            se = Some(boot.se());
            ci = boot.ci;
            diagnostics.insert("se_method".into(), json!("bootstrap"));
            diagnostics.insert("bootstrap_dropped".into(), json!(boot.replicates_dropped));
        }
    }

    if ds.outcome_kind() == OutcomeKind::Binary && !(-1.0..=1.0).contains(&point) {
        diagnostics.insert("out_of_range".into(), json!(true));
    }
    Ok(EstimateResult {
        estimand: estimand_tag,
        method: method.tag().into(),
        point,
        se,
        ci,
        diagnostics,
    })
}

fn run_simulate(args: SimulateArgs) -> ExitCode {
    let outcome: OutcomeKind = match args.outcome.parse() {
        Ok(o) => o,
        Err(_) => return usage_fail("unknown --outcome (expected continuous|binary)"),
    };
    let config = match args.setting {
        Some(s) => {
            let setting = match s {
                1 => Setting::One,
                2 => Setting::Two,
                3 => Setting::Three,
                4 => Setting::Four,
                _ => return usage_fail("--setting must be 1..4"),
            };
            SimulationConfig::preset(setting, outcome, args.n, args.reps, args.seed)
        }
        None => {
            let p = (args.a1, args.a2, args.b1, args.b2, args.c1, args.c2);
            match p {
                (Some(a1), Some(a2), Some(b1), Some(b2), Some(c1), Some(c2)) => {
                    SimulationConfig::custom(
                        (a1, a2, b1, b2, c1, c2),
                        outcome,
                        args.n,
                        args.reps,
                        args.seed,
                    )
                }
                _ => {
                    return usage_fail(
                        "either --setting or all of --a1 --a2 --b1 --b2 --c1 --c2 are required",
                    )
                }
            }
        }
    };
    let methods: Result<Vec<StudyMethod>, Error> = args
        .methods
        .split(',')
        .map(|m| m.trim().parse::<StudyMethod>())
        .collect();
    let methods = match methods {
        Ok(m) => m,
        Err(_) => return usage_fail("unknown method in --methods"),
    };

    let study = match simulation::run_study(&config, &methods) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };

    #[derive(Serialize)]
    struct SummaryView<'a> {
        config: &'a SimulationConfig,
        true_value: f64,
        summaries: &'a [simulation::MethodSummary],
    }
    let summary_json = envelope(
        "simulate",
        args.seed,
        json!({"n": args.n, "reps": args.reps, "outcome": args.outcome, "methods": args.methods}),
        SummaryView {
            config: &study.config,
            true_value: study.true_value,
            summaries: &study.summaries,
        },
    );

    match &args.out {
        Some(prefix) => {
            let write = |suffix: &str, body: &str| -> Result<(), Error> {
                std::fs::write(format!("{prefix}{suffix}"), body).map_err(Error::from)
            };
            let result = write("_summary.csv", &study.summary_csv())
                .and_then(|_| write("_summary.json", &summary_json))
                .and_then(|_| write("_replicates.csv", &study.replicates_csv()));
            if let Err(e) = result {
                return fail(e);
            }
            println!("{}", study.summary_csv());
            ExitCode::SUCCESS
        }
        None => {
            println!("{summary_json}");
            ExitCode::SUCCESS
        }
    }
}

fn run_sensitivity(args: SensitivityArgs) -> ExitCode {
    let outcome: OutcomeKind = match args.outcome.parse() {
        Ok(o) => o,
        Err(_) => return usage_fail("unknown --outcome (expected continuous|binary)"),
    };
    let engine: Engine = match args.engine.parse() {
        Ok(e) => e,
        Err(_) => return usage_fail("unknown --engine"),
    };
    let regime: Regime = match args.regime.parse() {
        Ok(r) => r,
        Err(_) => return usage_fail("unknown --regime"),
    };
    let estimand = match args.estimand.as_str() {
        "sace" => Estimand::Sace,
        "sacet" => Estimand::Sacet,
        "sacec" => Estimand::Sacec,
        _ => return usage_fail("unknown --estimand (expected sace|sacet|sacec)"),
    };
    let ds = match Dataset::load_csv(&args.data, outcome) {
        Ok(ds) => ds,
        Err(e) => return fail(e),
    };
    let rho_grid = match &args.grid {
        Some(g) => match parse_floats(g) {
            Ok(v) => v,
            Err(e) => return fail(e),
        },
        None => sensitivity::default_rho_grid(),
    };
    let opts = SweepOptions {
        engine,
        estimand,
        regime,
        bootstrap: args.bootstrap.map(|b| (b, args.seed, args.level)),
    };

    let grid = match args.param.as_str() {
        "rho" => sensitivity::rho_sweep(&ds, &rho_grid, &opts),
        "kappa" => {
            let kappa_grid = match &args.kappa_grid {
                Some(g) => match parse_floats(g) {
                    Ok(v) => v,
                    Err(e) => return fail(e),
                },
                None => sensitivity::default_kappa_grid(),
            };
            sensitivity::kappa_monotonicity_sweep(&ds, &kappa_grid, &rho_grid, &opts)
        }
        _ => return usage_fail("unknown --param (expected rho|kappa)"),
    };
    match grid {
        Ok(grid) => {
            if grid.succeeded() == 0 {
                let first_error = grid
                    .points
                    .iter()
                    .find_map(|p| p.error.clone())
                    .unwrap_or_else(|| "no grid point succeeded".into());
                return fail(Error::EmptyCell(first_error));
            }
            match emit(&args.out, &grid.to_csv()) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
        Err(e) => fail(e),
    }
}

fn run_check(args: CheckArgs) -> ExitCode {
    let outcome: OutcomeKind = match args.outcome.parse() {
        Ok(o) => o,
        Err(_) => return usage_fail("unknown --outcome (expected continuous|binary)"),
    };
    let ds = match Dataset::load_csv(&args.data, outcome) {
        Ok(ds) => ds,
        Err(e) => return fail(e),
    };

    fn capture<T: Serialize>(r: Result<T, Error>) -> Value {
        match r {
            Ok(v) => json!({"ok": v}),
            Err(e) => json!({"error": e.to_string()}),
        }
    }

    let report = json!({
        "validation": ds.validate(),
        "substitution_relevance_p": capture(checks::check_substitution_relevance(&ds)),
        "exclusion_restriction": capture(checks::check_exclusion_restriction(&ds)),
        "monotonicity_signal_p": capture(checks::check_monotonicity_signal(&ds)),
        "ens_test_p": capture(checks::test_ens(&ds)),
        "positivity": checks::check_positivity(&ds),
        "notes": {
            "exclusion_restriction": "untestable; large p-values are merely consistent with it",
            "monotonicity": "untestable because the strata are unobserved; the treatment coefficient is supportive evidence only",
            "ens": "non-rejection licenses the survivor-case contrast"
        }
    });
    let text = envelope("check", 0, json!({"data": args.data}), report);
    match emit(&args.out, &text) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
