//! Acceptance suite. Every test prints one pass/fail line so the whole
//! gate can be read off `cargo test -p sace --test acceptance -- --nocapture`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sace::data::OutcomeKind;
use sace::estimators::{
    binary_no_covariate, csace_proposed, csace_rho_adjusted, csace_survivor_case, csace_wzr,
    ContingencyTable,
};
use sace::inference::{closed_form_variance, mover_logit_ci};
use sace::population::DiscretePopulation;
use sace::simulation::{run_study, Setting, SimulationConfig, StudyMethod};

const STUDY_SEED: u64 = 20240601;

fn report(criterion: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] acceptance {criterion}: {detail}");
    assert!(pass, "acceptance {criterion}: {detail}");
}

fn fixture(name: &str) -> DiscretePopulation {
    let json = match name {
        "nondiff_a" => include_str!("fixtures/nondiff_a.json"),
        "nondiff_b" => include_str!("fixtures/nondiff_b.json"),
        "nondiff_c" => include_str!("fixtures/nondiff_c.json"),
        "weak_s_a" => include_str!("fixtures/weak_s_a.json"),
        "weak_s_b" => include_str!("fixtures/weak_s_b.json"),
        "rho_two" => include_str!("fixtures/rho_two.json"),
        "rho_half" => include_str!("fixtures/rho_half.json"),
        "ens_confounded" => include_str!("fixtures/ens_confounded.json"),
        "ens_binary_nocov" => include_str!("fixtures/ens_binary_nocov.json"),
        other => panic!("unknown fixture {other}"),
    };
    DiscretePopulation::from_json(json).expect("valid fixture")
}

#[test]
fn criterion_1_oracle_identification() {
    let start = Instant::now();
    let nondiff = [
        "nondiff_a",
        "nondiff_b",
        "nondiff_c",
        "weak_s_a",
        "weak_s_b",
    ];
    let mut max_err: f64 = 0.0;
    for name in nondiff {
        let pop = fixture(name);
        assert!(pop.nondifferential(), "{name} must satisfy rho = 1");
        for i in 0..pop.cells().len() {
            let d = csace_proposed(
                pop.pi_t(1, i),
                pop.pi_t(0, i),
                pop.mu_t(1, i),
                pop.mu_t(0, i),
                pop.mu_0(i),
            )
            .unwrap();
            max_err = max_err.max((d - pop.true_delta(i)).abs());
        }
    }
    // rho-adjusted with the population's true odds ratio, including
    // populations where nondifferential substitution fails
    for name in ["nondiff_a", "nondiff_c", "rho_two", "rho_half"] {
        let pop = fixture(name);
        for i in 0..pop.cells().len() {
            let d = csace_rho_adjusted(
                pop.pi_t(1, i),
                pop.pi_t(0, i),
                pop.mu_t(1, i),
                pop.mu_t(0, i),
                pop.mu_0(i),
                pop.rho(i),
            )
            .unwrap();
            max_err = max_err.max((d - pop.true_delta(i)).abs());
        }
    }
    // principal-score weighting on weak-S-ignorable populations
    for name in ["weak_s_a", "weak_s_b"] {
        let pop = fixture(name);
        assert!(pop.z_ignores_strata(), "{name} must be weak-S-ignorable");
        for i in 0..pop.cells().len() {
            let d = csace_wzr(
                pop.pi_t(1, i),
                pop.pi_t(0, i),
                pop.pi_c(1, i),
                pop.pi_c(0, i),
                pop.mu_t(1, i),
                pop.mu_t(0, i),
                pop.mu_0(i),
            )
            .unwrap();
            max_err = max_err.max((d - pop.true_delta(i)).abs());
        }
    }
    let elapsed = start.elapsed();
    report(
        "criterion 1 (oracle identification)",
        max_err <= 1e-12 && elapsed.as_secs_f64() < 1.0,
        &format!("max |error| = {max_err:.2e} over 9 populations, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_2_reduction_identities() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut max_rho1: f64 = 0.0;
    let mut max_wzr: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let pc1: f64 = rng.gen_range(0.1..0.5);
        let pc0: f64 = rng.gen_range(0.1..0.5);
        let pt1: f64 = pc1 + rng.gen_range(0.15..0.4);
        let pt0: f64 = pc0 + rng.gen_range(0.15..0.4);
        let w1 = pt1 / (pt1 - pc1);
        let w0 = pt0 / (pt0 - pc0);
        if (w1 - w0).abs() < 0.5 {
            continue;
        }
        let m1: f64 = rng.gen_range(-2.0..2.0);
        let m0: f64 = rng.gen_range(-2.0..2.0);
        let mu0: f64 = rng.gen_range(-1.0..1.0);

        let a = csace_proposed(pt1, pt0, m1, m0, mu0).unwrap();
        let b = csace_rho_adjusted(pt1, pt0, m1, m0, mu0, 1.0).unwrap();
        max_rho1 = max_rho1.max((a - b).abs());

        let rho = ((1.0 - pt1) / (pt1 - pc1)) / ((1.0 - pt0) / (pt0 - pc0));
        let direct = csace_wzr(pt1, pt0, pc1, pc0, m1, m0, mu0).unwrap();
        let via_rho = csace_rho_adjusted(pt1, pt0, m1, m0, mu0, rho).unwrap();
        max_wzr = max_wzr.max((direct - via_rho).abs());
        checked += 1;
    }
    let elapsed = start.elapsed();
    report(
        "criterion 2 (reduction identities)",
        max_rho1 <= 1e-12 && max_wzr <= 1e-12 && elapsed.as_secs_f64() < 1.0,
        &format!(
            "rho=1 route max |diff| = {max_rho1:.2e}, wzr route max |diff| = {max_wzr:.2e}, {elapsed:.2?}"
        ),
    );
}

#[test]
fn criterion_3_ens_equivalence() {
    let mut max_err: f64 = 0.0;
    for name in ["ens_confounded", "ens_binary_nocov"] {
        let pop = fixture(name);
        assert!(pop.ens());
        for i in 0..pop.cells().len() {
            let sc = csace_survivor_case(pop.mu_1_sc(i), pop.mu_0(i));
            let prop = csace_proposed(
                pop.pi_t(1, i),
                pop.pi_t(0, i),
                pop.mu_t(1, i),
                pop.mu_t(0, i),
                pop.mu_0(i),
            )
            .unwrap();
            let wzr = csace_wzr(
                pop.pi_t(1, i),
                pop.pi_t(0, i),
                pop.pi_c(1, i),
                pop.pi_c(0, i),
                pop.mu_t(1, i),
                pop.mu_t(0, i),
                pop.mu_0(i),
            )
            .unwrap();
            max_err = max_err.max((sc - prop).abs()).max((sc - wzr).abs());
        }
    }
    report(
        "criterion 3 (ENS equivalence)",
        max_err <= 1e-12,
        &format!("max pairwise |diff| = {max_err:.2e}"),
    );
}

#[test]
fn criterion_4_closed_form_matches_plug_in() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut max_err: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let raw: Vec<f64> = (0..8).map(|_| rng.gen_range(0.02..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let den = (p[0] + p[1]) * p[5] - (p[2] + p[3]) * p[4];
        if den.abs() < 5e-3 {
            continue;
        }
        let tbl = ContingencyTable::from_proportions(
            &[
                (Some(0), 1, 1, Some(1), p[0]),
                (Some(0), 1, 1, Some(0), p[1]),
                (Some(1), 1, 1, Some(1), p[2]),
                (Some(1), 1, 1, Some(0), p[3]),
                (Some(0), 1, 0, None, p[4]),
                (Some(1), 1, 0, None, p[5]),
                (None, 0, 1, Some(1), p[6]),
                (None, 0, 1, Some(0), p[7]),
            ],
            100,
        )
        .unwrap();
        let closed = binary_no_covariate(&tbl).unwrap();
        let pv0 = p[0] + p[1] + p[4];
        let pv1 = p[2] + p[3] + p[5];
        let plug = match csace_proposed(
            (p[2] + p[3]) / pv1,
            (p[0] + p[1]) / pv0,
            p[2] / (p[2] + p[3]),
            p[0] / (p[0] + p[1]),
            p[6] / (p[6] + p[7]),
        ) {
            Ok(v) => v,
            Err(_) => continue,
        };
        max_err = max_err.max((closed - plug).abs());
        checked += 1;
    }
    report(
        "criterion 4 (closed form vs plug-in)",
        max_err <= 1e-12,
        &format!("max |diff| over 1000 tables = {max_err:.2e}"),
    );
}

#[test]
fn criterion_5_table_one_desk_scale() {
    let start = Instant::now();
    let n = 3000;
    let reps = 300;
    let s1 = run_study(
        &SimulationConfig::preset(Setting::One, OutcomeKind::Continuous, n, reps, STUDY_SEED),
        &[StudyMethod::SurvivorCase],
    )
    .unwrap();
    let s2 = run_study(
        &SimulationConfig::preset(Setting::Two, OutcomeKind::Continuous, n, reps, STUDY_SEED),
        &[StudyMethod::ProposedParametric],
    )
    .unwrap();
    let s3 = run_study(
        &SimulationConfig::preset(Setting::Three, OutcomeKind::Continuous, n, reps, STUDY_SEED),
        &[StudyMethod::Wzr, StudyMethod::ProposedParametric],
    )
    .unwrap();
    let sc1 = s1.summaries[0].average_bias;
    let pe2 = s2.summaries[0].average_bias;
    let wzr3 = s3.summaries[0].average_bias;
    let pe3 = s3.summaries[1].average_bias;
    let checks = [
        (
            "setting1 SC vs -1.2707 +-0.02",
            (sc1 + 1.2707).abs() <= 0.02,
            sc1,
        ),
        (
            "setting3 WZR vs 0.5926 +-0.03",
            (wzr3 - 0.5926).abs() <= 0.03,
            wzr3,
        ),
        (
            "setting3 PE vs 0.0590 +-0.03",
            (pe3 - 0.0590).abs() <= 0.03,
            pe3,
        ),
        ("setting2 |PE| <= 0.02", pe2.abs() <= 0.02, pe2),
    ];
    let pass = checks.iter().all(|c| c.1);
    let detail = checks
        .iter()
        .map(|(name, ok, value)| {
            format!(
                "{name}: got {value:+.4} [{}]",
                if *ok { "ok" } else { "off" }
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    report(
        "criterion 5 (table 1 desk scale, continuous)",
        pass,
        &format!("{detail}; runtime {:.1?}", start.elapsed()),
    );
}

#[test]
fn criterion_6_table_two_desk_scale() {
    let start = Instant::now();
    let n = 3000;
    let reps = 300;
    let s1 = run_study(
        &SimulationConfig::preset(Setting::One, OutcomeKind::Binary, n, reps, STUDY_SEED),
        &[StudyMethod::SurvivorCase],
    )
    .unwrap();
    let s3 = run_study(
        &SimulationConfig::preset(Setting::Three, OutcomeKind::Binary, n, reps, STUDY_SEED),
        &[StudyMethod::ProposedParametric],
    )
    .unwrap();
    let sc1 = s1.summaries[0].average_bias;
    let pe3 = s3.summaries[0].average_bias;
    let checks = [
        (
            "setting1 SC vs -0.1254 +-0.01",
            (sc1 + 0.1254).abs() <= 0.01,
            sc1,
        ),
        (
            "setting3 PE vs 0.0068 +-0.01",
            (pe3 - 0.0068).abs() <= 0.01,
            pe3,
        ),
    ];
    let pass = checks.iter().all(|c| c.1);
    let detail = checks
        .iter()
        .map(|(name, ok, value)| {
            format!(
                "{name}: got {value:+.4} [{}]",
                if *ok { "ok" } else { "off" }
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    report(
        "criterion 6 (table 2 desk scale, binary)",
        pass,
        &format!("{detail}; runtime {:.1?}", start.elapsed()),
    );
}

#[test]
fn criterion_7_nonparametric_spot_check() {
    let start = Instant::now();
    let study = run_study(
        &SimulationConfig::preset(
            Setting::Three,
            OutcomeKind::Continuous,
            1200,
            200,
            STUDY_SEED,
        ),
        &[StudyMethod::ProposedNonparametric],
    )
    .unwrap();
    let s = &study.summaries[0];
    report(
        "criterion 7 (nonparametric engine spot check)",
        s.average_bias.abs() <= 0.08,
        &format!(
            "average bias {:+.4} (|.| <= 0.08), mab {:.4}, sd {:.4}, failed {}/{}; runtime {:.1?}",
            s.average_bias,
            s.mean_absolute_bias,
            s.sd_bias,
            s.reps_failed,
            s.reps_failed + s.reps_used,
            start.elapsed()
        ),
    );
}

#[test]
fn criterion_8_closed_form_variance_calibration() {
    let start = Instant::now();
    let p = [0.10, 0.10, 0.15, 0.05, 0.05, 0.15, 0.20, 0.20];
    let cells = |props: &[f64]| {
        vec![
            (Some(0u8), 1u8, 1u8, Some(1u8), props[0]),
            (Some(0), 1, 1, Some(0), props[1]),
            (Some(1), 1, 1, Some(1), props[2]),
            (Some(1), 1, 1, Some(0), props[3]),
            (Some(0), 1, 0, None, props[4]),
            (Some(1), 1, 0, None, props[5]),
            (None, 0, 1, Some(1), props[6]),
            (None, 0, 1, Some(0), props[7]),
        ]
    };
    let n = 2000usize;
    let pop_tbl = ContingencyTable::from_proportions(&cells(&p), n).unwrap();
    let truth = binary_no_covariate(&pop_tbl).unwrap();
    let avar = closed_form_variance(&pop_tbl).unwrap().variance * n as f64;

    let draws = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cum = [0.0f64; 8];
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        cum[i] = acc;
    }
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut covered = 0usize;
    let coverage_reps = 5000;
    for rep in 0..draws {
        let mut counts = [0usize; 8];
        for _ in 0..n {
            let u: f64 = rng.gen();
            let idx = cum.iter().position(|&c| u < c).unwrap_or(7);
            counts[idx] += 1;
        }
        let props: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let tbl = ContingencyTable::from_proportions(&cells(&props), n).unwrap();
        let delta = binary_no_covariate(&tbl).unwrap();
        let scaled = (n as f64).sqrt() * (delta - truth);
        sum += scaled;
        sumsq += scaled * scaled;
        if rep < coverage_reps {
            if let Ok((lo, hi)) = mover_logit_ci(&tbl, 0.95) {
                if lo <= truth && truth <= hi {
                    covered += 1;
                }
            }
        }
    }
    let mean = sum / draws as f64;
    let emp_var = (sumsq - draws as f64 * mean * mean) / (draws as f64 - 1.0);
    let ratio = emp_var / avar;
    let coverage = covered as f64 / coverage_reps as f64;
    let elapsed = start.elapsed();
    report(
        "criterion 8 (closed-form variance calibration)",
        (0.9..=1.1).contains(&ratio)
            && (0.92..=0.975).contains(&coverage)
            && elapsed.as_secs_f64() < 180.0,
        &format!(
            "variance ratio {ratio:.3} (within 10%), MOVER coverage {coverage:.3} in [0.92, 0.975], {elapsed:.1?}"
        ),
    );
}

#[test]
fn criterion_9_sensitivity_correctness() {
    // (a) on a population with built-in rho* = 2, the sweep value at the
    // rho* grid point equals the truth exactly at exact conditionals
    let pop = fixture("rho_two");
    let grid = [1.0, 2.0f64.sqrt(), 2.0, 2.5];
    let mut at_truth: f64 = 0.0;
    let mut away_from_truth: f64 = f64::INFINITY;
    for &rho in &grid {
        let mut max_cell_err: f64 = 0.0;
        for i in 0..pop.cells().len() {
            let d = csace_rho_adjusted(
                pop.pi_t(1, i),
                pop.pi_t(0, i),
                pop.mu_t(1, i),
                pop.mu_t(0, i),
                pop.mu_0(i),
                rho,
            )
            .unwrap();
            max_cell_err = max_cell_err.max((d - pop.true_delta(i)).abs());
        }
        if (rho - 2.0).abs() < 1e-12 {
            at_truth = max_cell_err;
        } else {
            away_from_truth = away_from_truth.min(max_cell_err);
        }
    }
    let true_rho_err = (pop.rho(0) - 2.0).abs().max((pop.rho(1) - 2.0).abs());

    // (b) rho estimated from external interventional data is near 1 when
    // the substitution is nondifferential (b2 = 0)
    let obs_cfg = SimulationConfig::preset(Setting::Three, OutcomeKind::Continuous, 20_000, 1, 91);
    let obs = sace::simulation::generate(&obs_cfg, 0).dataset;
    let int_cfg = SimulationConfig::custom(
        (0.0, 0.0, 3.0, 0.0, 3.0, 0.0),
        OutcomeKind::Continuous,
        20_000,
        1,
        92,
    );
    let interventional = sace::simulation::generate(&int_cfg, 0).dataset;
    let x0 = [1.0, 1.0, 1.0];
    let rho_fn = sace::sensitivity::rho_from_external(&obs, &interventional).unwrap();
    let rho_hat = rho_fn(&x0).unwrap();

    // bootstrap se over joint resamples of both datasets
    let b = 80;
    let mut boots = Vec::with_capacity(b);
    for rep in 0..b {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + rep as u64);
        let idx_obs: Vec<usize> = (0..obs.n()).map(|_| rng.gen_range(0..obs.n())).collect();
        let idx_int: Vec<usize> = (0..interventional.n())
            .map(|_| rng.gen_range(0..interventional.n()))
            .collect();
        if let Ok(f) = sace::sensitivity::rho_from_external(
            &obs.resample(&idx_obs),
            &interventional.resample(&idx_int),
        ) {
            if let Ok(v) = f(&x0) {
                boots.push(v);
            }
        }
    }
    let m = boots.len() as f64;
    let mean = boots.iter().sum::<f64>() / m;
    let se = (boots.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();

    let pass = at_truth <= 1e-10
        && away_from_truth > 1e-4
        && true_rho_err < 1e-12
        && (rho_hat - 1.0).abs() <= 3.0 * se;
    report(
        "criterion 9 (sensitivity correctness)",
        pass,
        &format!(
            "sweep at rho*=2 err {at_truth:.2e} (exact), off-rho* min err {away_from_truth:.2e} (biased), \
             rho_hat = {rho_hat:.3} vs 1 within 3 se ({se:.3})"
        ),
    );
}
