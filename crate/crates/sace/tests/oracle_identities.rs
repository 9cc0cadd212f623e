//! Identification identities verified against exhaustive enumeration on
//! discrete populations: the population-level estimand formulas, the
//! treated-proportion expression with a known doomed/protected ratio, and
//! the table reduction under explainable nonrandom survival.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sace::data::OutcomeKind;
use sace::estimators::{
    self, aggregate, binary_no_covariate, binary_no_covariate_ens, csace_survivor_case, Estimand,
    Method, Regime,
};
use sace::population::{CovariateCell, DiscretePopulation, PopulationSpec, DD, LD, LL};

fn weak_s_population() -> DiscretePopulation {
    DiscretePopulation::from_json(include_str!("fixtures/weak_s_a.json")).unwrap()
}

fn nondiff_population() -> DiscretePopulation {
    DiscretePopulation::from_json(include_str!("fixtures/nondiff_a.json")).unwrap()
}

/// Enumerate `sum_x sum_v delta(x) w(v,x) p(v,x)` style ratios directly.
fn enumerate_ratio<F: Fn(&DiscretePopulation, u8, usize) -> f64>(
    pop: &DiscretePopulation,
    weight: F,
) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..pop.cells().len() {
        let cell_w = pop.cells()[i].weight;
        for v in 0..2u8 {
            // p(v | x): marginal over strata
            let p_v: f64 = (0..3)
                .map(|g| {
                    let pv = if v == 1 {
                        pop.cells()[i].v_given_g[g]
                    } else {
                        1.0 - pop.cells()[i].v_given_g[g]
                    };
                    pop.cells()[i].strata[g] * pv
                })
                .sum();
            let w = cell_w * p_v * weight(pop, v, i);
            num += pop.true_delta(i) * w;
            den += w;
        }
    }
    num / den
}

#[test]
fn population_estimand_formulas_match_enumeration_under_weak_s_ignorability() {
    let pop = weak_s_population();
    assert!(pop.z_ignores_strata());

    let sace = enumerate_ratio(&pop, |p, v, i| p.pi_c(v, i));
    assert!((sace - pop.true_sace()).abs() < 1e-12, "SACE {sace}");

    let sacet = enumerate_ratio(&pop, |p, v, i| p.pi_c(v, i) * p.e_vx(v, i));
    assert!((sacet - pop.true_sacet()).abs() < 1e-12, "SACET {sacet}");

    let sacec = enumerate_ratio(&pop, |p, v, i| p.pi_c(v, i) * (1.0 - p.e_vx(v, i)));
    assert!((sacec - pop.true_sacec()).abs() < 1e-12, "SACEC {sacec}");
}

#[test]
fn treated_proportion_formula_with_known_r_matches_enumeration() {
    // pr(G = LL | Z=1, V=v, x) = pi_T - (1 - pi_T)/r with r the
    // doomed/protected ratio; the SACET ratio built from it is exact
    let pop = nondiff_population();
    let sacet = enumerate_ratio(&pop, |p, v, i| {
        let pt = p.pi_t(v, i);
        let r = p.r_of_x(i);
        (pt - (1.0 - pt) / r) * p.e_vx(v, i)
    });
    assert!(
        (sacet - pop.true_sacet()).abs() < 1e-12,
        "SACET via r(x): {sacet} vs {}",
        pop.true_sacet()
    );
}

#[test]
fn x_independent_strata_collapse_all_estimands() {
    // identical strata structure in every covariate cell
    let template = |x: f64, w: f64, y1: [f64; 2], y0: f64| CovariateCell {
        x: vec![x],
        weight: w,
        strata: [0.5, 0.3, 0.2],
        v_given_g: [0.8, 0.3, 0.3],
        z_given_gv: [[0.4, 0.6], [0.25, 0.5], [0.25, 0.5]],
        mean_y1: y1,
        mean_y0: y0,
    };
    let pop = DiscretePopulation::new(PopulationSpec {
        outcome: OutcomeKind::Continuous,
        cells: vec![
            template(0.0, 0.5, [1.0, 0.2], 0.3),
            template(1.0, 0.5, [2.0, 0.7], 0.4),
        ],
    })
    .unwrap();
    let unweighted: f64 = (0..2).map(|i| 0.5 * pop.true_delta(i)).sum();
    assert!((pop.true_sace() - unweighted).abs() < 1e-12);
    assert!((pop.true_sacet() - unweighted).abs() < 1e-12);
    assert!((pop.true_sacec() - unweighted).abs() < 1e-12);
}

#[test]
fn estimand_equality_on_every_fixture() {
    for json in [
        include_str!("fixtures/nondiff_a.json"),
        include_str!("fixtures/nondiff_b.json"),
        include_str!("fixtures/weak_s_a.json"),
        include_str!("fixtures/rho_two.json"),
        include_str!("fixtures/ens_confounded.json"),
    ] {
        let pop = DiscretePopulation::from_json(json).unwrap();
        for i in 0..pop.cells().len() {
            assert!((pop.true_delta(i) - pop.true_delta_treated(i)).abs() < 1e-12);
        }
    }
}

#[test]
fn survivor_case_is_exact_under_ens() {
    let pop = DiscretePopulation::from_json(include_str!("fixtures/ens_confounded.json")).unwrap();
    for i in 0..pop.cells().len() {
        let sc = csace_survivor_case(pop.mu_1_sc(i), pop.mu_0(i));
        assert!((sc - pop.true_delta(i)).abs() < 1e-12);
    }
}

#[test]
fn survivor_case_is_biased_without_ens() {
    let pop = nondiff_population();
    let biased = (0..pop.cells().len()).any(|i| {
        (csace_survivor_case(pop.mu_1_sc(i), pop.mu_0(i)) - pop.true_delta(i)).abs() > 1e-3
    });
    assert!(
        biased,
        "confounded population should bias the survivor case"
    );
}

#[test]
fn ens_table_reduction_agrees_with_general_estimator() {
    let pop =
        DiscretePopulation::from_json(include_str!("fixtures/ens_binary_nocov.json")).unwrap();
    assert!(pop.ens());
    let tbl = pop.contingency_table().unwrap();
    let general = binary_no_covariate(&tbl).unwrap();
    let ens = binary_no_covariate_ens(&tbl).unwrap();
    assert!(
        (general - ens).abs() < 1e-12,
        "general {general} vs ens {ens}"
    );
    assert!((general - pop.true_delta(0)).abs() < 1e-12);
}

#[test]
fn empirical_aggregation_approaches_enumeration_on_sampled_data() {
    // aggregate() replaces the population integrals by sample averages;
    // with exact nuisance functions the only error is the empirical
    // (v, x) frequency, which vanishes at root-n rate
    let pop = weak_s_population();
    let nu = pop.nuisances();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let ds = pop.sample(200_000, &mut rng, true);
    let delta = |x: &[f64]| estimators::csace_at(&nu, &Method::Proposed, x);

    let sace = aggregate(&ds, &nu, &delta, Estimand::Sace, Regime::WeakSIgn, None).unwrap();
    assert!(
        (sace - pop.true_sace()).abs() < 0.02,
        "sace {sace} vs {}",
        pop.true_sace()
    );
    let sacet = aggregate(&ds, &nu, &delta, Estimand::Sacet, Regime::WeakSIgn, None).unwrap();
    assert!((sacet - pop.true_sacet()).abs() < 0.02);
    let sacec = aggregate(&ds, &nu, &delta, Estimand::Sacec, Regime::General, None).unwrap();
    assert!((sacec - pop.true_sacec()).abs() < 0.02);
}

#[test]
fn principal_scores_sum_to_one_given_treatment() {
    let pop = nondiff_population();
    for i in 0..pop.cells().len() {
        for v in 0..2u8 {
            let total: f64 = [LL, LD, DD]
                .iter()
                .map(|&g| pop.principal_score(g, v, i))
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
