//! Dataset representation, CSV ingestion and structural validation for
//! truncation-by-death data.
//!
//! A record holds a binary treatment `z`, a binary survival status `s`, an
//! outcome `y` that is defined if and only if the subject survived, a fixed
//! length covariate vector `x`, and an optional binary substitutional
//! variable `v`. The CSV schema is `z,s,y[,v],<covariates...>` with empty
//! fields encoding "undefined"/"absent".

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

impl std::str::FromStr for OutcomeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "continuous" => Ok(OutcomeKind::Continuous),
            "binary" => Ok(OutcomeKind::Binary),
            other => Err(Error::InvalidInput(format!(
                "unknown outcome kind `{other}` (expected continuous|binary)"
            ))),
        }
    }
}

/// One subject. `y` is `Some` exactly when `s == 1`; `v` may be absent,
/// typically for control records when the substitutional variable was only
/// collected in the treated arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub z: u8,
    pub s: u8,
    pub y: Option<f64>,
    pub v: Option<u8>,
    pub x: Vec<f64>,
}

impl ObservationRecord {
    fn check(&self, line: usize, q: usize) -> Result<()> {
        if self.z > 1 {
            return Err(Error::DataContract {
                line,
                msg: format!("z must be 0 or 1, got {}", self.z),
            });
        }
        if self.s > 1 {
            return Err(Error::DataContract {
                line,
                msg: format!("s must be 0 or 1, got {}", self.s),
            });
        }
        match (self.s, self.y.is_some()) {
            (0, true) => {
                return Err(Error::DataContract {
                    line,
                    msg: "outcome present for a non-survivor (s=0)".into(),
                })
            }
            (1, false) => {
                return Err(Error::DataContract {
                    line,
                    msg: "outcome missing for a survivor (s=1)".into(),
                })
            }
            _ => {}
        }
        if let Some(v) = self.v {
            if v > 1 {
                return Err(Error::DataContract {
                    line,
                    msg: format!("v must be 0 or 1, got {v}"),
                });
            }
        }
        if self.x.len() != q {
            return Err(Error::DataContract {
                line,
                msg: format!("expected {q} covariates, got {}", self.x.len()),
            });
        }
        if let Some(y) = self.y {
            if !y.is_finite() {
                return Err(Error::DataContract {
                    line,
                    msg: "non-finite outcome".into(),
                });
            }
        }
        if self.x.iter().any(|c| !c.is_finite()) {
            return Err(Error::DataContract {
                line,
                msg: "non-finite covariate".into(),
            });
        }
        Ok(())
    }
}

/// Immutable dataset; safe to share across concurrent readers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<ObservationRecord>,
    outcome_kind: OutcomeKind,
    covariate_names: Vec<String>,
    v_available_for_all: bool,
}

impl Dataset {
    pub fn new(
        records: Vec<ObservationRecord>,
        outcome_kind: OutcomeKind,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let q = covariate_names.len();
        for (i, rec) in records.iter().enumerate() {
            rec.check(i + 2, q)?; // +2: header is line 1
            if outcome_kind == OutcomeKind::Binary {
                if let Some(y) = rec.y {
                    if y != 0.0 && y != 1.0 {
                        return Err(Error::DataContract {
                            line: i + 2,
                            msg: format!("binary outcome must be 0 or 1, got {y}"),
                        });
                    }
                }
            }
        }
        let v_available_for_all = !records.is_empty() && records.iter().all(|r| r.v.is_some());
        Ok(Dataset {
            records,
            outcome_kind,
            covariate_names,
            v_available_for_all,
        })
    }

    pub fn load_csv<P: AsRef<Path>>(path: P, outcome_kind: OutcomeKind) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, outcome_kind)
    }

    pub fn from_csv_reader<R: Read>(reader: R, outcome_kind: OutcomeKind) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Csv {
                line: 1,
                msg: e.to_string(),
            })?
            .iter()
            .map(|h| h.to_string())
            .collect();
        if headers.len() < 3 || headers[0] != "z" || headers[1] != "s" || headers[2] != "y" {
            return Err(Error::Csv {
                line: 1,
                msg: format!("header must start with z,s,y; got {:?}", headers),
            });
        }
        let has_v = headers.len() > 3 && headers[3] == "v";
        let cov_start = if has_v { 4 } else { 3 };
        let covariate_names: Vec<String> = headers[cov_start..].to_vec();
        let q = covariate_names.len();

        let mut records = Vec::new();
        for (idx, row) in rdr.records().enumerate() {
            let line = idx + 2;
            let row = row.map_err(|e| Error::Csv {
                line,
                msg: e.to_string(),
            })?;
            if row.len() != headers.len() {
                return Err(Error::Csv {
                    line,
                    msg: format!("expected {} fields, got {}", headers.len(), row.len()),
                });
            }
            let parse_u8 = |field: &str, name: &str| -> Result<u8> {
                field.parse::<u8>().map_err(|_| Error::Csv {
                    line,
                    msg: format!("field {name}: expected integer, got `{field}`"),
                })
            };
            let parse_f64 = |field: &str, name: &str| -> Result<f64> {
                field.parse::<f64>().map_err(|_| Error::Csv {
                    line,
                    msg: format!("field {name}: expected number, got `{field}`"),
                })
            };
            let z = parse_u8(&row[0], "z")?;
            let s = parse_u8(&row[1], "s")?;
            let y = if row[2].is_empty() {
                None
            } else {
                Some(parse_f64(&row[2], "y")?)
            };
            let v = if has_v {
                if row[3].is_empty() {
                    None
                } else {
                    Some(parse_u8(&row[3], "v")?)
                }
            } else {
                None
            };
            let mut x = Vec::with_capacity(q);
            for (j, name) in covariate_names.iter().enumerate() {
                x.push(parse_f64(&row[cov_start + j], name)?);
            }
            let rec = ObservationRecord { z, s, y, v, x };
            rec.check(line, q)?;
            records.push(rec);
        }
        Self::new(records, outcome_kind, covariate_names)
    }

    /// Serialize back to the ingestion schema. Round trips with `load_csv`
    /// up to numeric formatting.
    pub fn to_csv_string(&self) -> String {
        let has_v = self.records.iter().any(|r| r.v.is_some());
        let mut out = String::from("z,s,y");
        if has_v {
            out.push_str(",v");
        }
        for name in &self.covariate_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for rec in &self.records {
            out.push_str(&format!("{},{}", rec.z, rec.s));
            out.push(',');
            if let Some(y) = rec.y {
                out.push_str(&format_float(y));
            }
            if has_v {
                out.push(',');
                if let Some(v) = rec.v {
                    out.push_str(&v.to_string());
                }
            }
            for c in &rec.x {
                out.push(',');
                out.push_str(&format_float(*c));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn records(&self) -> &[ObservationRecord] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn q(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn v_available_for_all(&self) -> bool {
        self.v_available_for_all
    }

    pub fn v_available_for_treated(&self) -> bool {
        self.records
            .iter()
            .filter(|r| r.z == 1)
            .all(|r| r.v.is_some())
            && self.records.iter().any(|r| r.z == 1)
    }

    /// New dataset consisting of the rows at `indices` (with repetitions);
    /// used by the bootstrap.
    pub fn resample(&self, indices: &[usize]) -> Dataset {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Dataset {
            records,
            outcome_kind: self.outcome_kind,
            covariate_names: self.covariate_names.clone(),
            v_available_for_all: self.v_available_for_all,
        }
    }

    pub fn validate(&self) -> ValidationReport {
        ValidationReport::build(self)
    }
}

fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        let mut s = format!("{v}");
        if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
            s.push_str(".0");
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CovariateSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

/// Which estimation pathways the data can support, with reasons for the
/// ones it cannot.
#[derive(Debug, Clone, Serialize)]
pub struct Admissibility {
    pub survivor_case: bool,
    pub proposed: bool,
    pub rho_adjusted: bool,
    pub wzr: bool,
    pub binary_no_covariate: bool,
    pub reasons: BTreeMap<String, String>,
}

/// Report-only structural summary: cell counts, covariate summaries and
/// which estimators are admissible given data availability.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub n: usize,
    /// Counts indexed by `[z][s]`.
    pub cell_counts: [[usize; 2]; 2],
    /// Counts indexed by `[v][z][s]` where the outer index 2 means "v absent".
    pub v_cell_counts: [[[usize; 2]; 2]; 3],
    pub covariates: Vec<CovariateSummary>,
    pub admissible: Admissibility,
}

impl ValidationReport {
    fn build(ds: &Dataset) -> Self {
        let mut cell = [[0usize; 2]; 2];
        let mut vcell = [[[0usize; 2]; 2]; 3];
        for r in ds.records() {
            cell[r.z as usize][r.s as usize] += 1;
            let vi = r.v.map(|v| v as usize).unwrap_or(2);
            vcell[vi][r.z as usize][r.s as usize] += 1;
        }
        let q = ds.q();
        let mut covariates = Vec::with_capacity(q);
        for j in 0..q {
            let vals: Vec<f64> = ds.records().iter().map(|r| r.x[j]).collect();
            let n = vals.len().max(1) as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            covariates.push(CovariateSummary {
                name: ds.covariate_names()[j].clone(),
                mean,
                sd: var.sqrt(),
                min: vals.iter().cloned().fold(f64::INFINITY, f64::min),
                max: vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            });
        }

        let mut reasons = BTreeMap::new();
        let treated_survivors = cell[1][1];
        let control_survivors = cell[0][1];
        let mut survivor_case = true;
        if treated_survivors == 0 {
            survivor_case = false;
            reasons.insert(
                "survivor_case".into(),
                "no treated survivors: mu_1 inestimable".into(),
            );
        }
        if control_survivors == 0 {
            survivor_case = false;
            reasons.insert(
                "mu_0".into(),
                "no control survivors: mu_0 inestimable".into(),
            );
        }

        let v_treated = ds.v_available_for_treated();
        let both_v_cells_treated =
            vcell[0][1].iter().sum::<usize>() > 0 && vcell[1][1].iter().sum::<usize>() > 0;
        let mut proposed = survivor_case;
        if !v_treated {
            proposed = false;
            reasons.insert(
                "proposed".into(),
                "substitutional variable missing for some treated records".into(),
            );
        } else if !both_v_cells_treated {
            proposed = false;
            reasons.insert(
                "proposed".into(),
                "treated arm does not contain both v values".into(),
            );
        }
        let rho_adjusted = proposed;
        let mut wzr = proposed;
        if !ds.v_available_for_all() {
            wzr = false;
            reasons.insert(
                "wzr".into(),
                "substitutional variable required on control records".into(),
            );
        }
        let mut binary_no_covariate = proposed;
        if ds.outcome_kind() != OutcomeKind::Binary {
            binary_no_covariate = false;
            reasons.insert("binary_no_covariate".into(), "outcome is not binary".into());
        }

        ValidationReport {
            n: ds.n(),
            cell_counts: cell,
            v_cell_counts: vcell,
            covariates,
            admissible: Admissibility {
                survivor_case,
                proposed,
                rho_adjusted,
                wzr,
                binary_no_covariate,
                reasons,
            },
        }
    }
}
