//! Finite discrete populations with explicit principal-strata structure.
//! Every conditional probability and every estimand is computable by
//! exhaustive enumeration, which makes these populations exact reference
//! points for the identification formulas. A sampler wraps any population
//! for Monte Carlo work; the population itself is never sampled when used
//! as a reference.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ObservationRecord, OutcomeKind};
use crate::error::{Error, Result};
use crate::estimators::{clip_probability, ContingencyTable, Engine, NuisanceEstimates};

pub const LL: usize = 0;
pub const LD: usize = 1;
pub const DD: usize = 2;

/// One covariate value of the population, with the strata mixture and
/// conditional laws attached to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateCell {
    pub x: Vec<f64>,
    /// Marginal probability of this covariate value.
    pub weight: f64,
    /// P(G = g | x) for g in (LL, LD, DD). No harmed stratum exists, so
    /// monotonicity holds by construction.
    pub strata: [f64; 3],
    /// P(V = 1 | g, x).
    pub v_given_g: [f64; 3],
    /// P(Z = 1 | g, v, x), indexed `[g][v]`.
    pub z_given_gv: [[f64; 2]; 3],
    /// E[Y(1) | g, x] for g in (LL, LD); undefined for the doomed.
    pub mean_y1: [f64; 2],
    /// E[Y(0) | LL, x]; the only stratum with a defined control outcome.
    pub mean_y0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub outcome: OutcomeKind,
    pub cells: Vec<CovariateCell>,
}

#[derive(Debug, Clone)]
pub struct DiscretePopulation {
    spec: PopulationSpec,
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "{name} must be a probability, got {p}"
        )));
    }
    Ok(())
}

impl DiscretePopulation {
    pub fn new(spec: PopulationSpec) -> Result<Self> {
        if spec.cells.is_empty() {
            return Err(Error::InvalidInput("population has no cells".into()));
        }
        let q = spec.cells[0].x.len();
        let mut total = 0.0;
        for cell in &spec.cells {
            if cell.x.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: cell.x.len(),
                });
            }
            if cell.weight < 0.0 {
                return Err(Error::InvalidInput("negative cell weight".into()));
            }
            total += cell.weight;
            let ssum: f64 = cell.strata.iter().sum();
            if (ssum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "strata probabilities must sum to 1, got {ssum}"
                )));
            }
            for g in 0..3 {
                check_prob("strata probability", cell.strata[g])?;
                check_prob("P(V=1|g,x)", cell.v_given_g[g])?;
                for v in 0..2 {
                    check_prob("P(Z=1|g,v,x)", cell.z_given_gv[g][v])?;
                }
            }
            if spec.outcome == OutcomeKind::Binary {
                for m in cell.mean_y1.iter().chain(std::iter::once(&cell.mean_y0)) {
                    check_prob("binary outcome mean", *m)?;
                }
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "cell weights must sum to 1, got {total}"
            )));
        }
        Ok(DiscretePopulation { spec })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let spec: PopulationSpec = serde_json::from_str(json)
            .map_err(|e| Error::InvalidInput(format!("population spec: {e}")))?;
        Self::new(spec)
    }

    pub fn cells(&self) -> &[CovariateCell] {
        &self.spec.cells
    }

    pub fn outcome(&self) -> OutcomeKind {
        self.spec.outcome
    }

    fn cell(&self, i: usize) -> &CovariateCell {
        &self.spec.cells[i]
    }

    fn cell_index(&self, x: &[f64]) -> Result<usize> {
        self.spec
            .cells
            .iter()
            .position(|c| c.x == x)
            .ok_or_else(|| Error::InvalidInput(format!("x = {x:?} not in the support")))
    }

    /// Joint mass of (g, v, z) within cell i, conditional on the cell.
    fn mass(&self, i: usize, g: usize, v: u8, z: u8) -> f64 {
        let cell = self.cell(i);
        let pv = if v == 1 {
            cell.v_given_g[g]
        } else {
            1.0 - cell.v_given_g[g]
        };
        let pz = if z == 1 {
            cell.z_given_gv[g][v as usize]
        } else {
            1.0 - cell.z_given_gv[g][v as usize]
        };
        cell.strata[g] * pv * pz
    }

    /// P(S = 1 | Z = 1, V = v, x_i) — both survivor strata survive when
    /// treated.
    pub fn pi_t(&self, v: u8, i: usize) -> f64 {
        let alive = self.mass(i, LL, v, 1) + self.mass(i, LD, v, 1);
        let dead = self.mass(i, DD, v, 1);
        alive / (alive + dead)
    }

    /// P(S = 1 | Z = 0, V = v, x_i) — only always-survivors survive
    /// untreated.
    pub fn pi_c(&self, v: u8, i: usize) -> f64 {
        let alive = self.mass(i, LL, v, 0);
        let total: f64 = (0..3).map(|g| self.mass(i, g, v, 0)).sum();
        alive / total
    }

    /// P(S = 1 | Z = 0, x_i).
    pub fn pi_c_x(&self, i: usize) -> f64 {
        let alive: f64 = (0..2u8).map(|v| self.mass(i, LL, v, 0)).sum();
        let total: f64 = (0..3)
            .flat_map(|g| (0..2u8).map(move |v| (g, v)))
            .map(|(g, v)| self.mass(i, g, v, 0))
            .sum();
        alive / total
    }

    /// P(Z = 1 | x_i).
    pub fn e_x(&self, i: usize) -> f64 {
        let treated: f64 = (0..3)
            .flat_map(|g| (0..2u8).map(move |v| (g, v)))
            .map(|(g, v)| self.mass(i, g, v, 1))
            .sum();
        treated
    }

    /// P(Z = 1 | V = v, x_i).
    pub fn e_vx(&self, v: u8, i: usize) -> f64 {
        let treated: f64 = (0..3).map(|g| self.mass(i, g, v, 1)).sum();
        let total: f64 = (0..3)
            .map(|g| self.mass(i, g, v, 1) + self.mass(i, g, v, 0))
            .sum();
        treated / total
    }

    /// E(Y | Z = 1, S = 1, V = v, x_i).
    pub fn mu_t(&self, v: u8, i: usize) -> f64 {
        let cell = self.cell(i);
        let w_ll = self.mass(i, LL, v, 1);
        let w_ld = self.mass(i, LD, v, 1);
        (w_ll * cell.mean_y1[LL] + w_ld * cell.mean_y1[LD]) / (w_ll + w_ld)
    }

    /// E(Y | Z = 1, S = 1, x_i) — the survivor-case treated mean.
    pub fn mu_1_sc(&self, i: usize) -> f64 {
        let cell = self.cell(i);
        let w_ll: f64 = (0..2u8).map(|v| self.mass(i, LL, v, 1)).sum();
        let w_ld: f64 = (0..2u8).map(|v| self.mass(i, LD, v, 1)).sum();
        (w_ll * cell.mean_y1[LL] + w_ld * cell.mean_y1[LD]) / (w_ll + w_ld)
    }

    /// E(Y | Z = 0, S = 1, x_i) = E[Y(0) | LL, x_i] under monotonicity.
    pub fn mu_0(&self, i: usize) -> f64 {
        self.cell(i).mean_y0
    }

    /// Principal score P(G = g | Z = 1, V = v, x_i).
    pub fn principal_score(&self, g: usize, v: u8, i: usize) -> f64 {
        let total: f64 = (0..3).map(|h| self.mass(i, h, v, 1)).sum();
        self.mass(i, g, v, 1) / total
    }

    /// The doomed/protected odds ratio of V given Z = 1:
    /// `[pi_DD(1,x)/pi_LD(1,x)] / [pi_DD(0,x)/pi_LD(0,x)]`.
    pub fn rho(&self, i: usize) -> f64 {
        let r1 = self.principal_score(DD, 1, i) / self.principal_score(LD, 1, i);
        let r0 = self.principal_score(DD, 0, i) / self.principal_score(LD, 0, i);
        r1 / r0
    }

    /// The doomed/protected ratio `pi_DD(v,x)/pi_LD(v,x)` at v = 0.
    pub fn r_of_x(&self, i: usize) -> f64 {
        self.principal_score(DD, 0, i) / self.principal_score(LD, 0, i)
    }

    /// True conditional survivor average causal effect at cell i.
    pub fn true_delta(&self, i: usize) -> f64 {
        let cell = self.cell(i);
        cell.mean_y1[LL] - cell.mean_y0
    }

    /// True conditional effect among the treated at cell i, by enumeration
    /// over the treated always-survivors (equals `true_delta` under the
    /// constructive latent-ignorability of this population model).
    pub fn true_delta_treated(&self, i: usize) -> f64 {
        let cell = self.cell(i);
        let w: f64 = (0..2u8).map(|v| self.mass(i, LL, v, 1)).sum();
        if w <= 0.0 {
            return f64::NAN;
        }
        cell.mean_y1[LL] - cell.mean_y0
    }

    fn weighted_over_cells<F: Fn(usize) -> f64>(&self, cell_weight: F) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.spec.cells.len() {
            let w = self.spec.cells[i].weight * cell_weight(i);
            num += self.true_delta(i) * w;
            den += w;
        }
        num / den
    }

    /// P(G = LL | x_i).
    pub fn p_ll(&self, i: usize) -> f64 {
        self.cell(i).strata[LL]
    }

    /// True SACE by enumeration: E[Y(1) - Y(0) | G = LL].
    pub fn true_sace(&self) -> f64 {
        self.weighted_over_cells(|i| self.p_ll(i))
    }

    /// True SACET: condition additionally on Z = 1.
    pub fn true_sacet(&self) -> f64 {
        self.weighted_over_cells(|i| (0..2u8).map(|v| self.mass(i, LL, v, 1)).sum())
    }

    /// True SACEC: condition additionally on Z = 0.
    pub fn true_sacec(&self) -> f64 {
        self.weighted_over_cells(|i| (0..2u8).map(|v| self.mass(i, LL, v, 0)).sum())
    }

    /// Does V have the same distribution in the protected and doomed strata
    /// given treatment (nondifferential substitution)?
    pub fn nondifferential(&self) -> bool {
        (0..self.spec.cells.len()).all(|i| (self.rho(i) - 1.0).abs() < 1e-12)
    }

    /// Does Z ignore the strata given (V, X) (weak S-ignorability and more)?
    pub fn z_ignores_strata(&self) -> bool {
        self.spec.cells.iter().all(|c| {
            (0..2).all(|v| {
                (c.z_given_gv[LL][v] - c.z_given_gv[LD][v]).abs() < 1e-12
                    && (c.z_given_gv[LL][v] - c.z_given_gv[DD][v]).abs() < 1e-12
            })
        })
    }

    /// Explainable nonrandom survival: treated outcome means equal across
    /// the survivor strata.
    pub fn ens(&self) -> bool {
        self.spec
            .cells
            .iter()
            .all(|c| (c.mean_y1[LL] - c.mean_y1[LD]).abs() < 1e-12)
    }

    /// Exact conditionals packaged behind the estimator-facing interface;
    /// probability functions are clipped exactly like fitted ones.
    pub fn nuisances(&self) -> NuisanceEstimates {
        let this = self.clone();
        let pop = move || this.clone();
        let p1 = pop();
        let p2 = pop();
        let p3 = pop();
        let p4 = pop();
        let p5 = pop();
        let p6 = pop();
        let p7 = pop();
        let p8 = pop();
        NuisanceEstimates::empty(Engine::Parametric)
            .with_mu1_sc(Box::new(move |x| {
                let i = p1.cell_index(x)?;
                Ok(p1.mu_1_sc(i))
            }))
            .with_mu0(Box::new(move |x| {
                let i = p2.cell_index(x)?;
                Ok(p2.mu_0(i))
            }))
            .with_mu_t(Box::new(move |v, x| {
                let i = p3.cell_index(x)?;
                Ok(p3.mu_t(v, i))
            }))
            .with_pi_t(Box::new(move |v, x| {
                let i = p4.cell_index(x)?;
                Ok(clip_probability(p4.pi_t(v, i)))
            }))
            .with_pi_c_x(Box::new(move |x| {
                let i = p5.cell_index(x)?;
                Ok(clip_probability(p5.pi_c_x(i)))
            }))
            .with_pi_c_vx(Box::new(move |v, x| {
                let i = p6.cell_index(x)?;
                Ok(clip_probability(p6.pi_c(v, i)))
            }))
            .with_e_x(Box::new(move |x| {
                let i = p7.cell_index(x)?;
                Ok(clip_probability(p7.e_x(i)))
            }))
            .with_e_vx(Box::new(move |v, x| {
                let i = p8.cell_index(x)?;
                Ok(clip_probability(p8.e_vx(v, i)))
            }))
    }

    /// Exact population contingency table (requires a binary outcome and a
    /// single covariate cell; the no-covariate pathway).
    pub fn contingency_table(&self) -> Result<ContingencyTable> {
        if self.spec.outcome != OutcomeKind::Binary {
            return Err(Error::InvalidInput(
                "contingency table needs a binary-outcome population".into(),
            ));
        }
        let mut cells: Vec<(Option<u8>, u8, u8, Option<u8>, f64)> = Vec::new();
        for (i, cell) in self.spec.cells.iter().enumerate() {
            for g in 0..3 {
                for v in 0..2u8 {
                    for z in 0..2u8 {
                        let mass = cell.weight * self.mass(i, g, v, z);
                        if mass == 0.0 {
                            continue;
                        }
                        let s = match (g, z) {
                            (LL, _) => 1,
                            (LD, 1) => 1,
                            _ => 0,
                        };
                        if s == 0 {
                            cells.push((Some(v), z, 0, None, mass));
                        } else {
                            let mean = if z == 1 {
                                cell.mean_y1[g]
                            } else {
                                cell.mean_y0
                            };
                            cells.push((Some(v), z, 1, Some(1), mass * mean));
                            cells.push((Some(v), z, 1, Some(0), mass * (1.0 - mean)));
                        }
                    }
                }
            }
        }
        ContingencyTable::from_proportions(&cells, 0)
    }

    /// Draw an iid sample as an observed dataset. Continuous outcomes get
    /// unit Gaussian noise around the stratum mean.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R, v_observed_for_controls: bool) -> Dataset {
        let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
        let mut records = Vec::with_capacity(n);
        let k = self.spec.cells.len();
        for _ in 0..n {
            let mut u: f64 = rng.gen();
            let mut i = 0;
            for j in 0..k {
                if u < self.spec.cells[j].weight {
                    i = j;
                    break;
                }
                u -= self.spec.cells[j].weight;
                i = j;
            }
            let cell = self.cell(i);
            let mut ug: f64 = rng.gen();
            let mut g = 0;
            for h in 0..3 {
                if ug < cell.strata[h] {
                    g = h;
                    break;
                }
                ug -= cell.strata[h];
                g = h;
            }
            let v = u8::from(rng.gen::<f64>() < cell.v_given_g[g]);
            let z = u8::from(rng.gen::<f64>() < cell.z_given_gv[g][v as usize]);
            let s = match (g, z) {
                (LL, _) => 1,
                (LD, 1) => 1,
                _ => 0,
            };
            let y = if s == 1 {
                let mean = if z == 1 {
                    cell.mean_y1[g]
                } else {
                    cell.mean_y0
                };
                Some(match self.spec.outcome {
                    OutcomeKind::Binary => f64::from(rng.gen::<f64>() < mean),
                    OutcomeKind::Continuous => mean + std_normal.sample(rng),
                })
            } else {
                None
            };
            let v_field = if z == 1 || v_observed_for_controls {
                Some(v)
            } else {
                None
            };
            records.push(ObservationRecord {
                z,
                s,
                y,
                v: v_field,
                x: cell.x.clone(),
            });
        }
        let names = (0..self.spec.cells[0].x.len())
            .map(|j| format!("x{}", j + 1))
            .collect();
        Dataset::new(records, self.spec.outcome, names)
            .expect("sampled records satisfy the data contract")
    }
}
