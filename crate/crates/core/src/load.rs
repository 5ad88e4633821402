//! CSV loading with declared column roles.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, Dataset};
use crate::error::{Error, Result};

/// What to do with a row whose required cell is empty or not a number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    Drop,
    Fail,
}

impl FromStr for MissingPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(Self::Drop),
            "fail" => Ok(Self::Fail),
            _ => Err(Error::InvalidConfig(format!("missing-value policy must be 'drop' or 'fail', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CovariateKind {
    Continuous,
    Discrete,
    /// One indicator per level except `baseline` (first level in sorted order
    /// when absent).
    Categorical {
        baseline: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: CovariateKind,
}

impl FromStr for CovariateSpec {
    type Err = Error;
    /// `name`, `name:continuous`, `name:discrete`, `name:categorical` or
    /// `name:categorical=baseline`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, kind) = match s.split_once(':') {
            None => (s, CovariateKind::Continuous),
            Some((n, k)) => {
                let kind = match k.split_once('=') {
                    Some(("categorical", b)) => CovariateKind::Categorical { baseline: Some(b.to_string()) },
                    None if k == "categorical" => CovariateKind::Categorical { baseline: None },
                    None if k == "continuous" => CovariateKind::Continuous,
                    None if k == "discrete" => CovariateKind::Discrete,
                    _ => return Err(Error::InvalidConfig(format!("unknown column kind in '{s}'"))),
                };
                (n, kind)
            }
        };
        if name.is_empty() {
            return Err(Error::InvalidConfig(format!("empty column name in '{s}'")));
        }
        Ok(Self { name: name.to_string(), kind })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub response: String,
    pub covariates: Vec<CovariateSpec>,
    /// Categorical column splitting the rows into groups.
    pub group: Option<String>,
    #[serde(default)]
    pub missing: MissingPolicy,
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: Dataset,
    /// Group label per kept row, when a group column was declared.
    pub groups: Option<Vec<String>>,
    pub rows_read: usize,
    pub dropped: usize,
    pub warnings: Vec<String>,
}

pub fn load_csv(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<LoadedData> {
    load_csv_reader(File::open(path)?, roles)
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL" | ".")
}

enum Cell {
    Number(f64),
    Label(String),
}

pub fn load_csv_reader<R: Read>(reader: R, roles: &ColumnRoles) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    // (column name, header index, parse as number)
    let mut columns = vec![(roles.response.clone(), index(&roles.response)?, true)];
    for c in &roles.covariates {
        columns.push((c.name.clone(), index(&c.name)?, !matches!(c.kind, CovariateKind::Categorical { .. })));
    }
    if let Some(g) = &roles.group {
        columns.push((g.clone(), index(g)?, false));
    }

    let mut kept: Vec<Vec<Cell>> = Vec::new();
    let mut rows_read = 0;
    let mut dropped = 0;
    let mut warnings = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        rows_read += 1;
        // Data rows are numbered from 1, the header being row 0.
        let row = r + 1;
        let mut cells = Vec::with_capacity(columns.len());
        let mut problem = None;
        for (name, idx, numeric) in &columns {
            let raw = rec.get(*idx);
            let msg = match raw {
                None => Some("row has too few fields".to_string()),
                Some(s) if is_missing(s) => Some("missing value".to_string()),
                Some(s) if *numeric => match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => {
                        cells.push(Cell::Number(v));
                        None
                    }
                    _ => Some(format!("cannot parse '{s}' as a number")),
                },
                Some(s) => {
                    cells.push(Cell::Label(s.to_string()));
                    None
                }
            };
            if let Some(m) = msg {
                problem = Some((name.clone(), m));
                break;
            }
        }
        match problem {
            None => kept.push(cells),
            Some((column, message)) => match roles.missing {
                MissingPolicy::Fail => return Err(Error::Csv { row, column, message }),
                MissingPolicy::Drop => {
                    dropped += 1;
                    warnings.push(format!("dropped row {row}: column '{column}': {message}"));
                }
            },
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptySample);
    }

    let label = |c: &Cell| match c {
        Cell::Label(s) => s.clone(),
        Cell::Number(v) => v.to_string(),
    };
    let number = |c: &Cell| match c {
        Cell::Number(v) => *v,
        Cell::Label(_) => unreachable!("numeric column parsed as label"),
    };
    let y: Vec<f64> = kept.iter().map(|c| number(&c[0])).collect();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); kept.len()];
    let mut kinds = Vec::new();
    let mut names = Vec::new();
    for (k, spec) in roles.covariates.iter().enumerate() {
        let col = k + 1;
        match &spec.kind {
            CovariateKind::Continuous | CovariateKind::Discrete => {
                for (row, cells) in rows.iter_mut().zip(&kept) {
                    row.push(number(&cells[col]));
                }
                kinds.push(if spec.kind == CovariateKind::Discrete {
                    ColumnKind::Discrete
                } else {
                    ColumnKind::Continuous
                });
                names.push(spec.name.clone());
            }
            CovariateKind::Categorical { baseline } => {
                let levels: BTreeSet<String> = kept.iter().map(|c| label(&c[col])).collect();
                let base = match baseline {
                    Some(b) if levels.contains(b) => b.clone(),
                    Some(b) => {
                        return Err(Error::InvalidConfig(format!(
                            "baseline '{b}' does not occur in column '{}'",
                            spec.name
                        )))
                    }
                    None => levels.iter().next().cloned().expect("at least one row"),
                };
                for level in levels.iter().filter(|l| **l != base) {
                    for (row, cells) in rows.iter_mut().zip(&kept) {
                        row.push(if label(&cells[col]) == *level { 1.0 } else { 0.0 });
                    }
                    kinds.push(ColumnKind::Discrete);
                    names.push(format!("{}={}", spec.name, level));
                }
            }
        }
    }
    let groups = roles.group.as_ref().map(|_| kept.iter().map(|c| label(c.last().expect("group cell"))).collect());
    let data = Dataset::from_rows(&rows, y, kinds)?.with_names(names);
    Ok(LoadedData { data, groups, rows_read, dropped, warnings })
}
