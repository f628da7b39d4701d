//! FDP sensitivity reports: `v*`, the sensitivity set, generalized
//! sensitivity values and the naive comparator for one subset.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::closed::{
    gsv, naive_gsv, naive_v_screened, normalize_subset, screen, v_star_screened, ClosedTestConfig,
    Diagnostics, Verdict,
};
use crate::design::MatchedDesign;
use crate::error::{Error, Result};
use crate::model::GammaBound;
use crate::scores::ScoreMatrix;
use crate::worst_case::{SensitivityValue, GAMMA_TOL};

/// Bumped on any breaking change to the JSON layout.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdpReport {
    pub schema_version: u32,
    pub subset: Vec<usize>,
    pub subset_names: Vec<String>,
    pub gamma: f64,
    pub alpha: f64,
    pub v_star: usize,
    /// `{0, 1/|R|, ..., v*/|R|}`.
    pub sensitivity_set: Vec<f64>,
    pub naive_v: Option<usize>,
    /// `r -> Gamma*(R, r)` for `r = 0..|R|-1`.
    pub gsv_table: BTreeMap<usize, SensitivityValue>,
    pub naive_gsv_table: Option<BTreeMap<usize, SensitivityValue>>,
    pub screening: Vec<Verdict>,
    pub worst_case_p: Vec<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub alpha: f64,
    /// Compute the generalized sensitivity value table.
    pub gsv: bool,
    /// Also compute the naive comparator (and its GSV table when `gsv`).
    pub compare: bool,
    pub gamma_hi: f64,
    pub tol: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            gsv: true,
            compare: false,
            gamma_hi: 10.0,
            tol: GAMMA_TOL,
        }
    }
}

pub fn sensitivity_set(v_star: usize, subset_size: usize) -> Vec<f64> {
    (0..=v_star)
        .map(|v| v as f64 / subset_size as f64)
        .collect()
}

/// `r -> Gamma*(R, r)` for every `r < |R|`.
pub fn gsv_table(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    subset: &[usize],
    opts: &AnalysisOptions,
    naive: bool,
) -> Result<BTreeMap<usize, SensitivityValue>> {
    (0..subset.len())
        .map(|r| {
            let g = if naive {
                naive_gsv(
                    design,
                    scores,
                    subset,
                    r,
                    opts.alpha,
                    opts.gamma_hi,
                    opts.tol,
                )?
            } else {
                gsv(
                    design,
                    scores,
                    subset,
                    r,
                    opts.alpha,
                    opts.gamma_hi,
                    opts.tol,
                )?
            };
            Ok((r, g))
        })
        .collect()
}

/// One report per Gamma in `gammas`, sharing the GSV tables.
pub fn analyze_subset(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    names: &[String],
    subset: &[usize],
    gammas: &[f64],
    opts: &AnalysisOptions,
) -> Result<Vec<FdpReport>> {
    let k_total = scores.num_outcomes();
    let subset = normalize_subset(subset, k_total)?;
    let gsv_tab = if opts.gsv {
        gsv_table(design, scores, &subset, opts, false)?
    } else {
        BTreeMap::new()
    };
    let naive_tab = if opts.gsv && opts.compare {
        Some(gsv_table(design, scores, &subset, opts, true)?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let cfg = ClosedTestConfig::new(opts.alpha, k_total, GammaBound::new(g)?)?;
        let verdict = screen(design, scores, &cfg)?;
        let (v, diag) = v_star_screened(design, scores, &subset, &cfg, &verdict)?;
        let naive = if opts.compare {
            Some(naive_v_screened(&subset, &cfg, &verdict)?)
        } else {
            None
        };
        out.push(FdpReport {
            schema_version: SCHEMA_VERSION,
            subset_names: subset
                .iter()
                .map(|&k| names.get(k).cloned().unwrap_or_else(|| format!("y{k}")))
                .collect(),
            subset: subset.clone(),
            gamma: g,
            alpha: opts.alpha,
            v_star: v,
            sensitivity_set: sensitivity_set(v, subset.len()),
            naive_v: naive,
            gsv_table: gsv_tab.clone(),
            naive_gsv_table: naive_tab.clone(),
            screening: verdict.decisions,
            worst_case_p: verdict.worst_case_p,
            diagnostics: diag,
        });
    }
    check_reports(&out)?;
    Ok(out)
}

/// Internal consistency: dominance over the naive count, the sensitivity set
/// shape, GSV monotone in `r`, and `v*` monotone in Gamma.
pub fn check_reports(reports: &[FdpReport]) -> Result<()> {
    for rep in reports {
        if let Some(n) = rep.naive_v {
            if rep.v_star > n {
                return Err(Error::Invariant(format!(
                    "v* = {} exceeds the naive count {n} at Gamma = {}",
                    rep.v_star, rep.gamma
                )));
            }
        }
        if rep.sensitivity_set != sensitivity_set(rep.v_star, rep.subset.len()) {
            return Err(Error::Invariant("sensitivity set does not match v*".into()));
        }
        for tab in std::iter::once(&rep.gsv_table).chain(rep.naive_gsv_table.as_ref()) {
            let vals: Vec<f64> = tab.values().map(|s| s.gamma).collect();
            if vals.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::Invariant(format!(
                    "GSV table decreases in r: {vals:?}"
                )));
            }
        }
        if let Some(nv) = &rep.naive_gsv_table {
            for (r, e) in &rep.gsv_table {
                // naive counts dominate, so the naive changepoint is never later
                if nv.get(r).is_some_and(|n| n.gamma > e.gamma) {
                    return Err(Error::Invariant(format!(
                        "naive GSV {} above exact {} at r = {r}",
                        nv[r].gamma, e.gamma
                    )));
                }
            }
        }
    }
    let mut by_subset: BTreeMap<&[usize], Vec<(f64, usize)>> = BTreeMap::new();
    for rep in reports {
        by_subset
            .entry(&rep.subset)
            .or_default()
            .push((rep.gamma, rep.v_star));
    }
    for (subset, mut pts) in by_subset {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err(Error::Invariant(format!(
                "v* decreases in Gamma for subset {subset:?}: {pts:?}"
            )));
        }
    }
    Ok(())
}
