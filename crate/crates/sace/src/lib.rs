//! Survivor average causal effects when outcomes are truncated by death.
//!
//! Identification, estimation, inference, simulation and sensitivity
//! analysis for (conditional) survivor average causal effects in
//! observational studies where treatment assignment, survival and the
//! outcome process may all be confounded. The identification engine is a
//! binary substitutional variable correlated with the principal strata;
//! the survivor-case contrast and the principal-score-weighted estimator
//! are provided for comparison, together with an odds-ratio-adjusted
//! variant for sensitivity analysis.

pub mod checks;
pub mod data;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod inference;
pub mod kernel;
pub mod population;
pub mod sensitivity;
pub mod simulation;

pub use data::{Dataset, ObservationRecord, OutcomeKind, ValidationReport};
pub use error::{Error, Result};
pub use estimators::{
    aggregate, csace_at, csace_proposed, csace_proposed_discrete, csace_rho_adjusted,
    csace_survivor_case, csace_wzr, fit_nuisances, ContingencyTable, Engine, Estimand,
    EstimateResult, Method, NuisanceEstimates, Regime, RhoSpec,
};
pub use inference::{bootstrap, Ci, VarianceMethod, VarianceReport};
pub use simulation::{run_study, SimulationConfig, StudyMethod, StudyResult};
