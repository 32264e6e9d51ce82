//! JSON problem files and CSV sample files.
//!
//! ```json
//! {
//!   "first_stage": { "c": [..], "F": [[..]], "g": [..], "E": [[..]], "e": [..],
//!                    "lower": [0, null], "upper": [null, 5] },
//!   "recourse":    { "B": [[..]], "equality": { "T": [[..]], "W": [[..]], "h": [..] } },
//!   "uncertainty": { "site": "constraints", "z0": [..], "Z": [[..]],
//!                    "A0": [[..]], "A_terms": [[[..]]], "b0": [..], "b_terms": [[..]] }
//! }
//! ```
//!
//! `F`, `g`, `E`, `e`, `equality` are optional. `lower` defaults to zero and
//! `upper` to unbounded. For the objective site `Z` is required and the
//! `A`/`b` terms default to zero; for the constraint site `A_terms` or
//! `b_terms` fixes the dimension of `ξ` and `Z` defaults to zero.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{AffineUncertainty, Polytope, RecourseEquality, SampleSet, TwoStageProblem, UncertaintySite};
use crate::error::{dim_err, Error, Result};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FirstStageFile {
    c: Vec<f64>,
    #[serde(rename = "F", default)]
    f: Rows,
    #[serde(default)]
    g: Vec<f64>,
    #[serde(rename = "E", default)]
    e_matrix: Rows,
    #[serde(rename = "e", default)]
    e_rhs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lower: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    upper: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EqualityFile {
    #[serde(rename = "T")]
    t: Rows,
    #[serde(rename = "W")]
    w: Rows,
    h: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecourseFile {
    #[serde(rename = "B")]
    b: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    equality: Option<EqualityFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct UncertaintyFile {
    site: UncertaintySite,
    z0: Vec<f64>,
    #[serde(rename = "Z", default, skip_serializing_if = "Option::is_none")]
    z: Option<Rows>,
    #[serde(rename = "A0")]
    a0: Rows,
    #[serde(rename = "A_terms", default, skip_serializing_if = "Option::is_none")]
    a_terms: Option<Vec<Rows>>,
    b0: Vec<f64>,
    #[serde(rename = "b_terms", default, skip_serializing_if = "Option::is_none")]
    b_terms: Option<Rows>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemFile {
    first_stage: FirstStageFile,
    recourse: RecourseFile,
    uncertainty: UncertaintyFile,
}

fn matrix(rows: &Rows, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return dim_err(format!("{what}: every row must have {ncols} entries"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows_of(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ProblemFile {
    fn into_problem(self) -> Result<TwoStageProblem> {
        let fs = self.first_stage;
        let n = fs.c.len();
        let mut polytope = Polytope::nonnegative(n);
        polytope.ineq_matrix = matrix(&fs.f, n, "F")?;
        polytope.ineq_rhs = DVector::from_vec(fs.g);
        polytope.eq_matrix = matrix(&fs.e_matrix, n, "E")?;
        polytope.eq_rhs = DVector::from_vec(fs.e_rhs);
        if let Some(l) = fs.lower {
            polytope.lower = l;
        }
        if let Some(u) = fs.upper {
            polytope.upper = u;
        }

        let unc = self.uncertainty;
        let n_y = unc.z0.len();
        let k = unc.b0.len();
        let b = matrix(&self.recourse.b, n_y, "B")?;
        let equality = self
            .recourse
            .equality
            .map(|e| -> Result<RecourseEquality> {
                Ok(RecourseEquality {
                    t: matrix(&e.t, n, "T")?,
                    w: matrix(&e.w, n_y, "W")?,
                    h: DVector::from_vec(e.h),
                })
            })
            .transpose()?;

        let dim_xi = match unc.site {
            UncertaintySite::Objective => unc
                .z
                .as_ref()
                .map(|z| z.len())
                .ok_or_else(|| Error::Input("objective site requires Z".into()))?,
            UncertaintySite::Constraints => unc
                .a_terms
                .as_ref()
                .map(|a| a.len())
                .or(unc.b_terms.as_ref().map(|b| b.len()))
                .ok_or_else(|| Error::Input("constraint site requires A_terms or b_terms".into()))?,
        };
        let z = match &unc.z {
            Some(z) => matrix(z, n_y, "Z")?,
            None => DMatrix::zeros(dim_xi, n_y),
        };
        let a_terms = match &unc.a_terms {
            Some(a) => a.iter().map(|m| matrix(m, n, "A_terms")).collect::<Result<Vec<_>>>()?,
            None => vec![DMatrix::zeros(k, n); dim_xi],
        };
        let b_terms = match unc.b_terms {
            Some(b) => b.into_iter().map(DVector::from_vec).collect(),
            None => vec![DVector::zeros(k); dim_xi],
        };
        let uncertainty = AffineUncertainty::new(
            DVector::from_vec(unc.z0),
            z,
            matrix(&unc.a0, n, "A0")?,
            a_terms,
            DVector::from_vec(unc.b0),
            b_terms,
        )?;
        TwoStageProblem::new(DVector::from_vec(fs.c), polytope, b, equality, uncertainty, unc.site)
    }

    fn from_problem(p: &TwoStageProblem) -> Self {
        let fs = &p.first_stage;
        let u = &p.uncertainty;
        ProblemFile {
            first_stage: FirstStageFile {
                c: p.c.iter().copied().collect(),
                f: rows_of(&fs.ineq_matrix),
                g: fs.ineq_rhs.iter().copied().collect(),
                e_matrix: rows_of(&fs.eq_matrix),
                e_rhs: fs.eq_rhs.iter().copied().collect(),
                lower: Some(fs.lower.clone()),
                upper: Some(fs.upper.clone()),
            },
            recourse: RecourseFile {
                b: rows_of(&p.recourse),
                equality: p.recourse_eq.as_ref().map(|e| EqualityFile {
                    t: rows_of(&e.t),
                    w: rows_of(&e.w),
                    h: e.h.iter().copied().collect(),
                }),
            },
            uncertainty: UncertaintyFile {
                site: p.site,
                z0: u.z0.iter().copied().collect(),
                z: Some(rows_of(&u.z_matrix)),
                a0: rows_of(&u.a0),
                a_terms: Some(u.a_terms.iter().map(rows_of).collect()),
                b0: u.b0.iter().copied().collect(),
                b_terms: Some(u.b_terms.iter().map(|b| b.iter().copied().collect()).collect()),
            },
        }
    }
}

pub fn problem_from_json(text: &str) -> Result<TwoStageProblem> {
    serde_json::from_str::<ProblemFile>(text)?.into_problem()
}

pub fn problem_to_json(problem: &TwoStageProblem) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ProblemFile::from_problem(problem))?)
}

pub fn load_problem(path: impl AsRef<Path>) -> Result<TwoStageProblem> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    problem_from_json(&text)
}

pub fn save_problem(problem: &TwoStageProblem, path: impl AsRef<Path>) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(problem_to_json(problem)?.as_bytes())?;
    Ok(())
}

/// Reads one sample per row. A first row that does not parse as numbers is
/// treated as a header.
pub fn read_samples_csv(reader: impl Read) -> Result<SampleSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Input(format!("sample row {}: {e}", i + 1))),
        }
    }
    SampleSet::from_rows(rows)
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<SampleSet> {
    read_samples_csv(File::open(path)?)
}

pub fn write_samples_csv(samples: &SampleSet, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record((0..samples.dim()).map(|j| format!("xi{}", j + 1)))?;
    for s in samples.iter() {
        w.write_record(s.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_samples(samples: &SampleSet, path: impl AsRef<Path>) -> Result<()> {
    write_samples_csv(samples, File::create(path)?)
}
