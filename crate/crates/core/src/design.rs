//! Matched designs, outcome matrices, and the CSV exchange format.
//!
//! A design is an ordered list of strata, each holding exactly one treated
//! unit and at least one control. Outcomes are stored column-major and are
//! aligned with the flattened unit order of the design.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub unit_id: String,
    pub treated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratum {
    pub stratum_id: String,
    pub units: Vec<Unit>,
}

/// Validated matched design. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatchedDesign {
    strata: Vec<Stratum>,
    offsets: Vec<usize>,
    treated: Vec<usize>,
}

impl MatchedDesign {
    pub fn new(strata: Vec<Stratum>) -> Result<Self> {
        if strata.is_empty() {
            return Err(Error::Validation("design has no strata".into()));
        }
        let mut seen_strata = HashSet::new();
        let mut offsets = Vec::with_capacity(strata.len() + 1);
        let mut treated = Vec::with_capacity(strata.len());
        let mut total = 0usize;
        for s in &strata {
            if !seen_strata.insert(s.stratum_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate stratum_id `{}`",
                    s.stratum_id
                )));
            }
            if s.units.len() < 2 {
                return Err(Error::Validation(format!(
                    "stratum `{}` has {} unit(s); at least 2 are required",
                    s.stratum_id,
                    s.units.len()
                )));
            }
            let mut seen_units = HashSet::new();
            for u in &s.units {
                if !seen_units.insert(u.unit_id.as_str()) {
                    return Err(Error::Validation(format!(
                        "duplicate unit `{}` in stratum `{}`",
                        u.unit_id, s.stratum_id
                    )));
                }
            }
            let treated_idx: Vec<usize> = s
                .units
                .iter()
                .enumerate()
                .filter(|(_, u)| u.treated)
                .map(|(j, _)| j)
                .collect();
            if treated_idx.len() != 1 {
                return Err(Error::Validation(format!(
                    "stratum `{}` has {} treated units; exactly one is required",
                    s.stratum_id,
                    treated_idx.len()
                )));
            }
            offsets.push(total);
            treated.push(treated_idx[0]);
            total += s.units.len();
        }
        offsets.push(total);
        Ok(Self {
            strata,
            offsets,
            treated,
        })
    }

    /// `b` matched pairs with ids `"1".."b"`; `first_treated[i]` picks the treated unit.
    pub fn pairs(first_treated: &[bool]) -> Result<Self> {
        let strata = first_treated
            .iter()
            .enumerate()
            .map(|(i, &t)| Stratum {
                stratum_id: (i + 1).to_string(),
                units: vec![
                    Unit {
                        unit_id: "a".into(),
                        treated: t,
                    },
                    Unit {
                        unit_id: "b".into(),
                        treated: !t,
                    },
                ],
            })
            .collect();
        Self::new(strata)
    }

    /// Strata of the given sizes with the first unit treated.
    pub fn with_sizes(sizes: &[usize]) -> Result<Self> {
        let strata = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| Stratum {
                stratum_id: (i + 1).to_string(),
                units: (0..n)
                    .map(|j| Unit {
                        unit_id: (j + 1).to_string(),
                        treated: j == 0,
                    })
                    .collect(),
            })
            .collect();
        Self::new(strata)
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    /// Number of strata, B.
    pub fn num_strata(&self) -> usize {
        self.strata.len()
    }

    /// Total number of units, N.
    pub fn num_units(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn stratum_size(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.num_strata())
            .map(|i| self.stratum_size(i))
            .collect()
    }

    /// Flat index range of stratum `i`.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Position of the treated unit within stratum `i`.
    pub fn treated_position(&self, i: usize) -> usize {
        self.treated[i]
    }

    /// Flat index of the treated unit of stratum `i`.
    pub fn treated_unit(&self, i: usize) -> usize {
        self.offsets[i] + self.treated[i]
    }

    /// Treatment indicator Z in flat unit order.
    pub fn treatment_vector(&self) -> Vec<bool> {
        let mut z = vec![false; self.num_units()];
        for i in 0..self.num_strata() {
            z[self.treated_unit(i)] = true;
        }
        z
    }

    /// Log10 of |Omega| = prod n_i.
    pub fn log10_assignments(&self) -> f64 {
        (0..self.num_strata())
            .map(|i| (self.stratum_size(i) as f64).log10())
            .sum()
    }

    pub fn is_pairs(&self) -> bool {
        (0..self.num_strata()).all(|i| self.stratum_size(i) == 2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

/// N x K outcome values aligned with the unit order of a design.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    kinds: Vec<OutcomeKind>,
}

impl OutcomeMatrix {
    pub fn new(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        kinds: Vec<OutcomeKind>,
    ) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Validation(
                "at least one outcome column is required".into(),
            ));
        }
        if names.len() != columns.len() || kinds.len() != columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} names, {} kinds, {} columns",
                names.len(),
                kinds.len(),
                columns.len()
            )));
        }
        let n = columns[0].len();
        for (k, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "outcome `{}` has {} rows, expected {n}",
                    names[k],
                    col.len()
                )));
            }
            if let Some(bad) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "outcome `{}` has a missing or non-finite value at unit {bad}",
                    names[k]
                )));
            }
            if kinds[k] == OutcomeKind::Binary && col.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Validation(format!(
                    "outcome `{}` is tagged binary but has values outside {{0,1}}",
                    names[k]
                )));
            }
        }
        Ok(Self {
            names,
            columns,
            kinds,
        })
    }

    /// Build with kinds inferred from the data: a {0,1}-valued column is binary.
    pub fn inferred(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        let kinds = columns.iter().map(|c| infer_kind(c)).collect();
        Self::new(names, columns, kinds)
    }

    pub fn num_outcomes(&self) -> usize {
        self.columns.len()
    }

    pub fn num_units(&self) -> usize {
        self.columns[0].len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[OutcomeKind] {
        &self.kinds
    }

    pub fn kind(&self, k: usize) -> Result<OutcomeKind> {
        self.kinds.get(k).copied().ok_or(Error::OutcomeIndex {
            index: k,
            count: self.num_outcomes(),
        })
    }

    pub fn column(&self, k: usize) -> Result<&[f64]> {
        self.columns
            .get(k)
            .map(|c| c.as_slice())
            .ok_or(Error::OutcomeIndex {
                index: k,
                count: self.num_outcomes(),
            })
    }

    /// Override the kind of outcome `k`; binary requires a {0,1} column.
    pub fn set_kind(&mut self, k: usize, kind: OutcomeKind) -> Result<()> {
        let col = self.column(k)?;
        if kind == OutcomeKind::Binary && infer_kind(col) != OutcomeKind::Binary {
            return Err(Error::Validation(format!(
                "outcome `{}` cannot be tagged binary",
                self.names[k]
            )));
        }
        self.kinds[k] = kind;
        Ok(())
    }
}

fn infer_kind(col: &[f64]) -> OutcomeKind {
    if col.iter().all(|&v| v == 0.0 || v == 1.0) {
        OutcomeKind::Binary
    } else {
        OutcomeKind::Continuous
    }
}

const FIXED_COLUMNS: [&str; 3] = ["stratum_id", "unit_id", "treated"];

/// Read a design CSV: `stratum_id,unit_id,treated,<outcomes...>`.
///
/// Rows of one stratum need not be contiguous; strata keep the order of
/// their first appearance and units keep file order within a stratum.
pub fn load_design_csv(path: impl AsRef<Path>) -> Result<(MatchedDesign, OutcomeMatrix)> {
    let file = std::fs::File::open(path)?;
    read_design_csv(file)
}

pub fn read_design_csv<R: Read>(reader: R) -> Result<(MatchedDesign, OutcomeMatrix)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_err(1, "header", e.to_string()))?
        .clone();
    for (pos, want) in FIXED_COLUMNS.iter().enumerate() {
        match headers.get(pos) {
            Some(h) if h == *want => {}
            other => {
                return Err(csv_err(
                    1,
                    want,
                    format!(
                        "expected column `{want}` at position {}, found {:?}",
                        pos + 1,
                        other
                    ),
                ))
            }
        }
    }
    let names: Vec<String> = headers.iter().skip(3).map(str::to_owned).collect();
    if names.is_empty() {
        return Err(csv_err(1, "header", "no outcome columns".into()));
    }

    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Vec<(Unit, Vec<f64>)>> = Default::default();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_err(row, "record", e.to_string()))?;
        if rec.len() != headers.len() {
            return Err(csv_err(
                row,
                "record",
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        let stratum_id = rec[0].to_owned();
        let unit_id = rec[1].to_owned();
        if stratum_id.is_empty() {
            return Err(csv_err(row, "stratum_id", "empty identifier".into()));
        }
        if unit_id.is_empty() {
            return Err(csv_err(row, "unit_id", "empty identifier".into()));
        }
        let treated = match &rec[2] {
            "1" => true,
            "0" => false,
            other => {
                return Err(csv_err(
                    row,
                    "treated",
                    format!("expected 0 or 1, found `{other}`"),
                ))
            }
        };
        let mut values = Vec::with_capacity(names.len());
        for (k, name) in names.iter().enumerate() {
            let raw = &rec[3 + k];
            let v: f64 = raw
                .parse()
                .map_err(|_| csv_err(row, name, format!("non-numeric value `{raw}`")))?;
            if !v.is_finite() {
                return Err(csv_err(row, name, format!("non-finite value `{raw}`")));
            }
            values.push(v);
        }
        let entry = groups.entry(stratum_id.clone()).or_insert_with(|| {
            order.push(stratum_id.clone());
            Vec::new()
        });
        if entry.iter().any(|(u, _)| u.unit_id == unit_id) {
            return Err(csv_err(
                row,
                "unit_id",
                format!("duplicate unit `{unit_id}` in stratum `{stratum_id}`"),
            ));
        }
        entry.push((Unit { unit_id, treated }, values));
    }

    let mut strata = Vec::with_capacity(order.len());
    let mut columns = vec![Vec::new(); names.len()];
    for sid in order {
        let rows = groups.remove(&sid).unwrap();
        let mut units = Vec::with_capacity(rows.len());
        for (u, vals) in rows {
            units.push(u);
            for (k, v) in vals.into_iter().enumerate() {
                columns[k].push(v);
            }
        }
        strata.push(Stratum {
            stratum_id: sid,
            units,
        });
    }
    let design = MatchedDesign::new(strata)?;
    let outcomes = OutcomeMatrix::inferred(names, columns)?;
    Ok((design, outcomes))
}

/// Write a design CSV readable by [`load_design_csv`]. Floats use the
/// shortest representation that round-trips exactly.
pub fn write_design_csv<W: Write>(
    writer: W,
    design: &MatchedDesign,
    outcomes: &OutcomeMatrix,
) -> Result<()> {
    if outcomes.num_units() != design.num_units() {
        return Err(Error::ShapeMismatch(format!(
            "design has {} units, outcomes have {}",
            design.num_units(),
            outcomes.num_units()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(outcomes.names().iter().map(String::as_str));
    w.write_record(&header).map_err(io_err)?;
    let mut flat = 0usize;
    for s in design.strata() {
        for u in &s.units {
            let mut rec = vec![
                s.stratum_id.clone(),
                u.unit_id.clone(),
                if u.treated { "1".into() } else { "0".into() },
            ];
            for k in 0..outcomes.num_outcomes() {
                rec.push(format!("{}", outcomes.columns[k][flat]));
            }
            w.write_record(&rec).map_err(io_err)?;
            flat += 1;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_design_csv(
    path: impl AsRef<Path>,
    design: &MatchedDesign,
    outcomes: &OutcomeMatrix,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_design_csv(std::io::BufWriter::new(file), design, outcomes)
}

fn csv_err(row: usize, column: &str, message: String) -> Error {
    Error::Csv {
        row,
        column: column.to_owned(),
        message,
    }
}

fn io_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let text = "stratum_id,unit_id,treated,y\ns,a,1,0.5\ns,b,0,1.5\ns,c,0,2\n";
        let (d, o) = read_design_csv(text.as_bytes()).unwrap();
        assert_eq!(d.num_strata(), 1);
        assert_eq!(d.stratum_size(0), 3);
        assert_eq!(d.num_units(), 3);
        assert_eq!(o.kinds(), &[OutcomeKind::Continuous]);
        assert_eq!(d.treatment_vector(), vec![true, false, false]);
    }

    #[test]
    fn two_treated_names_stratum() {
        let text = "stratum_id,unit_id,treated,y\ns1,a,1,0\ns1,b,1,1\n";
        let err = read_design_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("s1"), "{err}");
        assert!(err.contains("2 treated"), "{err}");
    }

    #[test]
    fn zero_treated_rejected() {
        let text = "stratum_id,unit_id,treated,y\ns1,a,0,0\ns1,b,0,1\n";
        assert!(read_design_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn singleton_stratum_rejected() {
        let text = "stratum_id,unit_id,treated,y\ns1,a,1,0\n";
        let err = read_design_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("at least 2"), "{err}");
    }

    #[test]
    fn non_numeric_names_row_and_column() {
        let text = "stratum_id,unit_id,treated,y,z\ns1,a,1,0,1\ns1,b,0,x,2\n";
        match read_design_csv(text.as_bytes()).unwrap_err() {
            Error::Csv { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_value_rejected() {
        let text = "stratum_id,unit_id,treated,y\ns1,a,1,\ns1,b,0,1\n";
        assert!(matches!(
            read_design_csv(text.as_bytes()).unwrap_err(),
            Error::Csv { row: 2, .. }
        ));
    }

    #[test]
    fn duplicate_unit_rejected() {
        let text = "stratum_id,unit_id,treated,y\ns1,a,1,0\ns1,a,0,1\n";
        let err = read_design_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("duplicate unit"), "{err}");
    }

    #[test]
    fn binary_inferred_and_overridable() {
        let text = "stratum_id,unit_id,treated,y\ns1,a,1,0\ns1,b,0,1\n";
        let (_, mut o) = read_design_csv(text.as_bytes()).unwrap();
        assert_eq!(o.kind(0).unwrap(), OutcomeKind::Binary);
        o.set_kind(0, OutcomeKind::Continuous).unwrap();
        assert_eq!(o.kind(0).unwrap(), OutcomeKind::Continuous);
    }

    #[test]
    fn wrong_header() {
        let text = "stratum,unit_id,treated,y\ns1,a,1,0\ns1,b,0,1\n";
        assert!(read_design_csv(text.as_bytes()).is_err());
    }
}
