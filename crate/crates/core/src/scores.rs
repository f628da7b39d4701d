//! Score construction for sum statistics `T_k = Z' q_k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::design::{MatchedDesign, OutcomeKind, OutcomeMatrix};
use crate::error::{Error, Result};

/// Default Huber clipping constant.
pub const DEFAULT_TRIM: f64 = 2.5;

/// Per-outcome statistic choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Statistic {
    /// Mantel-Haenszel for binary outcomes, Huber with the default trim otherwise.
    Auto,
    MantelHaenszel,
    Huber {
        trim: f64,
    },
    /// Scores equal to the observed outcome.
    Raw,
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Statistic::Auto => write!(f, "auto"),
            Statistic::MantelHaenszel => write!(f, "mh"),
            Statistic::Huber { trim } => write!(f, "huber:{trim}"),
            Statistic::Raw => write!(f, "raw"),
        }
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "auto" => Ok(Statistic::Auto),
            "mh" => Ok(Statistic::MantelHaenszel),
            "raw" => Ok(Statistic::Raw),
            "huber" => Ok(Statistic::Huber { trim: DEFAULT_TRIM }),
            _ => {
                if let Some(t) = s.strip_prefix("huber:") {
                    let trim: f64 = t
                        .parse()
                        .map_err(|_| Error::Config(format!("bad huber trim `{t}`")))?;
                    if !(trim > 0.0 && trim.is_finite()) {
                        return Err(Error::Config(format!(
                            "huber trim must be positive, got {trim}"
                        )));
                    }
                    Ok(Statistic::Huber { trim })
                } else {
                    Err(Error::Config(format!(
                        "unknown statistic `{s}` (expected auto, mh, raw, huber or huber:<trim>)"
                    )))
                }
            }
        }
    }
}

impl TryFrom<String> for Statistic {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Statistic> for String {
    fn from(s: Statistic) -> String {
        s.to_string()
    }
}

/// N x K scores aligned with the design's unit order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    columns: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl ScoreMatrix {
    pub fn new(columns: Vec<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::Validation(
                "score matrix needs at least one column".into(),
            ));
        }
        if labels.len() != columns.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} score columns",
                labels.len(),
                columns.len()
            )));
        }
        let n = columns[0].len();
        for (k, c) in columns.iter().enumerate() {
            if c.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "score column {k} has {} rows, expected {n}",
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "score column {k} has non-finite entries"
                )));
            }
        }
        Ok(Self { columns, labels })
    }

    /// Raw columns with generic labels; handy for hand-built fixtures.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let labels = (0..columns.len()).map(|_| "raw".to_string()).collect();
        Self::new(columns, labels)
    }

    pub fn num_outcomes(&self) -> usize {
        self.columns.len()
    }

    pub fn num_units(&self) -> usize {
        self.columns[0].len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn column(&self, k: usize) -> Result<&[f64]> {
        self.columns
            .get(k)
            .map(|c| c.as_slice())
            .ok_or(Error::OutcomeIndex {
                index: k,
                count: self.columns.len(),
            })
    }

    /// Keep only the listed outcomes, in the given order.
    pub fn select(&self, outcomes: &[usize]) -> Result<Self> {
        let mut cols = Vec::with_capacity(outcomes.len());
        let mut labels = Vec::with_capacity(outcomes.len());
        for &k in outcomes {
            cols.push(self.column(k)?.to_vec());
            labels.push(self.labels[k].clone());
        }
        Self::new(cols, labels)
    }

    pub(crate) fn check_design(&self, design: &MatchedDesign) -> Result<()> {
        if self.num_units() != design.num_units() {
            return Err(Error::ShapeMismatch(format!(
                "design has {} units, scores have {}",
                design.num_units(),
                self.num_units()
            )));
        }
        Ok(())
    }
}

/// `T_k`: the sum of treated-unit scores.
pub fn sum_statistic(design: &MatchedDesign, scores: &ScoreMatrix, k: usize) -> Result<f64> {
    scores.check_design(design)?;
    let q = scores.column(k)?;
    Ok((0..design.num_strata())
        .map(|i| q[design.treated_unit(i)])
        .sum())
}

/// Mantel-Haenszel scores: the binary outcome itself.
pub fn mh_scores(outcomes: &OutcomeMatrix, k: usize) -> Result<Vec<f64>> {
    let col = outcomes.column(k)?;
    if outcomes.kind(k)? != OutcomeKind::Binary {
        return Err(Error::NotBinary { outcome: k });
    }
    Ok(col.to_vec())
}

/// Huber-type psi, scaled so that it saturates at +/-1.
pub fn huber_psi(y: f64, trim: f64) -> f64 {
    y.signum() * (y.abs() / trim).min(1.0)
}

/// M-statistic scores with clipping constant `trim`.
///
/// The scale is the median absolute treated-minus-control difference over
/// all strata; `q_ij = (1/n_i) sum_{j' != j} psi((R_ij - R_ij') / s)`.
pub fn huber_m_scores(
    design: &MatchedDesign,
    outcomes: &OutcomeMatrix,
    k: usize,
    trim: f64,
) -> Result<Vec<f64>> {
    if !(trim > 0.0 && trim.is_finite()) {
        return Err(Error::Config(format!(
            "huber trim must be positive, got {trim}"
        )));
    }
    let r = outcomes.column(k)?;
    if r.len() != design.num_units() {
        return Err(Error::ShapeMismatch(format!(
            "design has {} units, outcomes have {}",
            design.num_units(),
            r.len()
        )));
    }
    let mut diffs = Vec::with_capacity(design.num_units());
    for i in 0..design.num_strata() {
        let t = design.treated_unit(i);
        for u in design.range(i) {
            if u != t {
                diffs.push((r[t] - r[u]).abs());
            }
        }
    }
    let scale = median(&mut diffs);
    if !(scale > 0.0) {
        return Err(Error::DegenerateScale { outcome: k });
    }
    let mut q = vec![0.0; r.len()];
    for i in 0..design.num_strata() {
        let range = design.range(i);
        let n = range.len() as f64;
        for a in range.clone() {
            let mut acc = 0.0;
            for b in range.clone() {
                if a != b {
                    acc += huber_psi((r[a] - r[b]) / scale, trim);
                }
            }
            q[a] = acc / n;
        }
    }
    Ok(q)
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Build a score matrix with one statistic per outcome. A single choice is
/// broadcast over all outcomes.
pub fn build_scores(
    design: &MatchedDesign,
    outcomes: &OutcomeMatrix,
    choices: &[Statistic],
) -> Result<ScoreMatrix> {
    let k_total = outcomes.num_outcomes();
    if choices.len() != 1 && choices.len() != k_total {
        return Err(Error::Config(format!(
            "{} statistic choices for {k_total} outcomes",
            choices.len()
        )));
    }
    let mut columns = Vec::with_capacity(k_total);
    let mut labels = Vec::with_capacity(k_total);
    for k in 0..k_total {
        let choice = if choices.len() == 1 {
            choices[0]
        } else {
            choices[k]
        };
        let resolved = match choice {
            Statistic::Auto => match outcomes.kind(k)? {
                OutcomeKind::Binary => Statistic::MantelHaenszel,
                OutcomeKind::Continuous => Statistic::Huber { trim: DEFAULT_TRIM },
            },
            c => c,
        };
        let col = match resolved {
            Statistic::MantelHaenszel => mh_scores(outcomes, k)?,
            Statistic::Huber { trim } => huber_m_scores(design, outcomes, k, trim)?,
            Statistic::Raw => outcomes.column(k)?.to_vec(),
            Statistic::Auto => unreachable!(),
        };
        columns.push(col);
        labels.push(resolved.to_string());
    }
    ScoreMatrix::new(columns, labels)
}
