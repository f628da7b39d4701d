//! Monte Carlo studies: v* distributions, screening frequency, subset
//! selection under confounding, runtime and coverage.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    calibrate_effect, gen_confounded_pairs, gen_matched_pairs, ConfoundedAssignmentSpec,
    ExperimentSpec, SigmaKind, SimulatedData, TauKind,
};
use crate::closed::{
    enumerative_oracle, naive_v_screened, screen, subset_search, v_star_screened, ClosedTestConfig,
    SubsetSearchConfig, Verdict,
};
use crate::error::Result;
use crate::model::GammaBound;
use crate::scores::{build_scores, ScoreMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    Naive,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Exact => "exact",
            Method::Naive => "naive",
        })
    }
}

fn scores_for(spec: &ExperimentSpec, data: &SimulatedData) -> Result<ScoreMatrix> {
    build_scores(&data.design, &data.outcomes, &[spec.statistic])
}

/// v* of `[K]` for both methods at one Gamma.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedV {
    pub exact: usize,
    pub naive: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub gamma: f64,
    pub method: Method,
    /// Share of replicates with `v* = 0, 1, ..., K`.
    pub proportions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2Result {
    pub spec: ExperimentSpec,
    pub rows: Vec<Table2Row>,
    /// `values[g][rep]` for `spec.gamma_grid[g]`.
    pub values: Vec<Vec<PairedV>>,
}

/// Distribution of `v*_Gamma([K])` under the exact and naive procedures.
pub fn run_table2(spec: &ExperimentSpec) -> Result<Table2Result> {
    spec.validate()?;
    let k = spec.outcomes;
    let all: Vec<usize> = (0..k).collect();
    let per_rep: Vec<Vec<PairedV>> = (0..spec.replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let data = gen_matched_pairs(spec, rep)?;
            let scores = scores_for(spec, &data)?;
            spec.gamma_grid
                .iter()
                .map(|&g| {
                    let cfg = ClosedTestConfig::new(spec.alpha, k, GammaBound::new(g)?)?;
                    let verdict = screen(&data.design, &scores, &cfg)?;
                    let naive = naive_v_screened(&all, &cfg, &verdict)?;
                    let (exact, _) = v_star_screened(&data.design, &scores, &all, &cfg, &verdict)?;
                    Ok(PairedV { exact, naive })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let values: Vec<Vec<PairedV>> = (0..spec.gamma_grid.len())
        .map(|g| per_rep.iter().map(|r| r[g]).collect())
        .collect();
    let mut rows = Vec::new();
    for (g, &gamma) in spec.gamma_grid.iter().enumerate() {
        for method in [Method::Exact, Method::Naive] {
            let mut counts = vec![0usize; k + 1];
            for v in &values[g] {
                counts[match method {
                    Method::Exact => v.exact,
                    Method::Naive => v.naive,
                }] += 1;
            }
            rows.push(Table2Row {
                gamma,
                method,
                proportions: counts
                    .iter()
                    .map(|&c| c as f64 / spec.replicates as f64)
                    .collect(),
            });
        }
    }
    Ok(Table2Result {
        spec: spec.clone(),
        rows,
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningRow {
    pub gamma: f64,
    pub pairs: usize,
    /// Share of replicates where some outcome is left undecided by screening.
    pub called_at_least_once: f64,
    /// Mean share of outcomes left undecided.
    pub average_frequency: f64,
}

/// How often the singleton screen leaves outcomes undecided, by Gamma and B.
pub fn run_screening_study(
    spec: &ExperimentSpec,
    pair_grid: &[usize],
) -> Result<Vec<ScreeningRow>> {
    spec.validate()?;
    let k = spec.outcomes;
    let mut rows = Vec::new();
    for &b in pair_grid {
        let s = ExperimentSpec {
            pairs: b,
            ..spec.clone()
        };
        s.validate()?;
        // undecided counts per replicate, per Gamma
        let counts: Vec<Vec<usize>> = (0..s.replicates as u64)
            .into_par_iter()
            .map(|rep| {
                let data = gen_matched_pairs(&s, rep)?;
                let scores = scores_for(&s, &data)?;
                s.gamma_grid
                    .iter()
                    .map(|&g| {
                        let cfg = ClosedTestConfig::new(s.alpha, k, GammaBound::new(g)?)?;
                        Ok(screen(&data.design, &scores, &cfg)?
                            .decisions
                            .iter()
                            .filter(|d| **d == Verdict::Undecided)
                            .count())
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (gi, &gamma) in s.gamma_grid.iter().enumerate() {
            let n = counts.len() as f64;
            rows.push(ScreeningRow {
                gamma,
                pairs: b,
                called_at_least_once: counts.iter().filter(|c| c[gi] > 0).count() as f64 / n,
                average_frequency: counts.iter().map(|c| c[gi] as f64 / k as f64).sum::<f64>() / n,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectorRow {
    /// Correlation between the two affected outcomes.
    pub rho: f64,
    /// Calibrated effect on the affected outcomes.
    pub effect: f64,
    pub naive: f64,
    pub gsv_selector: f64,
    pub replicates: usize,
}

/// Covariance for the selector study: outcomes 0 and 1 (affected) with
/// correlation `rho`, outcomes 2 and 3 (confounded nulls) with correlation
/// `null_rho`, independent blocks.
pub fn selector_sigma(rho: f64, null_rho: f64) -> SigmaKind {
    SigmaKind::Custom {
        rows: vec![
            vec![1.0, rho, 0.0, 0.0],
            vec![rho, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, null_rho],
            vec![0.0, 0.0, null_rho, 1.0],
        ],
    }
}

/// Default confounding for the selector study: outcomes 2 and 3 drive assignment.
pub fn selector_confounding() -> ConfoundedAssignmentSpec {
    ConfoundedAssignmentSpec {
        bias_strength: 1.5,
        driver_outcomes: vec![2, 3],
    }
}

/// Naive smallest-p selector against the `Gamma*(R, 1)` selector for
/// size-2 subsets of four outcomes, two affected and two confounded nulls.
/// Success means the chosen pair contains an affected outcome.
pub fn run_selector_study(
    spec: &ExperimentSpec,
    confound: &ConfoundedAssignmentSpec,
    rhos: &[f64],
) -> Result<Vec<SelectorRow>> {
    let mut rows = Vec::new();
    for &rho in rhos {
        let base = ExperimentSpec {
            outcomes: 4,
            sigma: selector_sigma(rho, 0.2),
            tau: TauKind::Custom {
                values: vec![0.0; 4],
            },
            ..spec.clone()
        };
        base.validate()?;
        confound.validate(4)?;
        let effect = calibrate_effect(&base, confound)?;
        let s = ExperimentSpec {
            tau: TauKind::Custom {
                values: vec![effect, effect, 0.0, 0.0],
            },
            ..base
        };
        let search_cfg = SubsetSearchConfig {
            alpha: s.alpha,
            ..SubsetSearchConfig::default()
        };
        let hits: Vec<(bool, bool)> = (0..s.replicates as u64)
            .into_par_iter()
            .map(|rep| {
                let data = gen_confounded_pairs(&s, confound, rep)?;
                let scores = scores_for(&s, &data)?;
                let cfg = ClosedTestConfig::new(s.alpha, 4, GammaBound::ONE)?;
                let p = screen(&data.design, &scores, &cfg)?.worst_case_p;
                let mut order: Vec<usize> = (0..4).collect();
                order.sort_by(|&a, &b| p[a].total_cmp(&p[b]).then(a.cmp(&b)));
                let naive_pick = [order[0], order[1]];
                let ranked = subset_search(&data.design, &scores, 2, 1, &search_cfg)?;
                let gsv_pick = &ranked[0].subset;
                Ok((
                    naive_pick.iter().any(|&k| data.truth[k]),
                    gsv_pick.iter().any(|&k| data.truth[k]),
                ))
            })
            .collect::<Result<_>>()?;
        let n = hits.len() as f64;
        rows.push(SelectorRow {
            rho,
            effect,
            naive: hits.iter().filter(|h| h.0).count() as f64 / n,
            gsv_selector: hits.iter().filter(|h| h.1).count() as f64 / n,
            replicates: hits.len(),
        });
    }
    Ok(rows)
}

/// One cell of the runtime grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSetting {
    pub setting: usize,
    pub tau: TauKind,
    pub sigma: SigmaKind,
    pub gamma: f64,
}

/// The twelve settings: tau x Sigma x Gamma in {1.25, 1.5, 1.75}.
pub fn runtime_settings() -> Vec<RuntimeSetting> {
    let mut out = Vec::new();
    for tau in [TauKind::linspace(), TauKind::half()] {
        for sigma in [SigmaKind::Identity, SigmaKind::equicorrelated()] {
            for gamma in [1.25, 1.5, 1.75] {
                out.push(RuntimeSetting {
                    setting: out.len() + 1,
                    tau: tau.clone(),
                    sigma: sigma.clone(),
                    gamma,
                });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeRow {
    pub setting: usize,
    pub tau: String,
    pub sigma: String,
    pub gamma: f64,
    pub replicates: usize,
    /// Replicates where screening left some outcome undecided.
    pub indecisive: usize,
    pub mean_v_star_secs: f64,
    pub mean_oracle_secs: f64,
    /// Median over replicates of oracle time / v* time.
    pub median_speedup: f64,
    pub min_speedup: f64,
    /// Median speedup over indecisive replicates only (NaN if none).
    pub median_speedup_indecisive: f64,
    /// Both computations returned the same value in every replicate.
    pub agree: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Wall time of `v*_Gamma([K])` by branch-and-bound against the enumerative
/// computation, both including the same screening step. Replicates run
/// sequentially so timings are not distorted by contention; one untimed
/// warm-up run precedes each setting.
pub fn run_runtime_study(
    spec: &ExperimentSpec,
    settings: &[RuntimeSetting],
) -> Result<Vec<RuntimeRow>> {
    let k = spec.outcomes;
    let all: Vec<usize> = (0..k).collect();
    let mut rows = Vec::new();
    for st in settings {
        let s = ExperimentSpec {
            tau: st.tau.clone(),
            sigma: st.sigma.clone(),
            gamma_grid: vec![st.gamma],
            ..spec.clone()
        };
        s.validate()?;
        let cfg = ClosedTestConfig::new(s.alpha, k, GammaBound::new(st.gamma)?)?;
        let mut t_fast = Vec::new();
        let mut t_slow = Vec::new();
        let mut speed = Vec::new();
        let mut speed_ind = Vec::new();
        let mut indecisive = 0;
        let mut agree = true;
        for rep in 0..s.replicates as u64 {
            let data = gen_matched_pairs(&s, rep)?;
            let scores = scores_for(&s, &data)?;
            if rep == 0 {
                let v = screen(&data.design, &scores, &cfg)?;
                v_star_screened(&data.design, &scores, &all, &cfg, &v)?;
            }
            let t0 = Instant::now();
            let verdict = screen(&data.design, &scores, &cfg)?;
            let (v_fast, _) = v_star_screened(&data.design, &scores, &all, &cfg, &verdict)?;
            let fast = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let slow_out = enumerative_oracle(&data.design, &scores, &all, &cfg)?;
            let slow = t1.elapsed().as_secs_f64();
            agree &= v_fast == slow_out.v;
            let ratio = slow / fast.max(1e-9);
            if verdict.num_undecided() > 0 {
                indecisive += 1;
                speed_ind.push(ratio);
            }
            t_fast.push(fast);
            t_slow.push(slow);
            speed.push(ratio);
        }
        let n = t_fast.len() as f64;
        rows.push(RuntimeRow {
            setting: st.setting,
            tau: st.tau.label(),
            sigma: st.sigma.label(),
            gamma: st.gamma,
            replicates: s.replicates,
            indecisive,
            mean_v_star_secs: t_fast.iter().sum::<f64>() / n,
            mean_oracle_secs: t_slow.iter().sum::<f64>() / n,
            min_speedup: speed.iter().copied().fold(f64::INFINITY, f64::min),
            median_speedup: median(speed),
            median_speedup_indecisive: median(speed_ind),
            agree,
        });
    }
    Ok(rows)
}

/// A fixed family of ten subsets of `[K]` used for simultaneous coverage.
pub fn default_subset_family(k: usize) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..k).collect();
    let h = k / 2;
    let mut fam = vec![
        all.clone(),
        (0..h.max(1)).collect(),
        (h..k).collect(),
        vec![0],
        vec![k - 1],
        vec![0, k - 1],
        all.iter().copied().filter(|j| j % 2 == 0).collect(),
        all.iter().copied().filter(|j| j % 2 == 1).collect(),
        (0..3.min(k)).collect(),
        (h.saturating_sub(1)..(h + 2).min(k)).collect(),
    ];
    for s in fam.iter_mut() {
        s.sort_unstable();
        s.dedup();
    }
    fam.retain(|s| !s.is_empty());
    fam
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub gamma: f64,
    pub replicates: usize,
    pub subsets: Vec<Vec<usize>>,
    /// Share of replicates with `V(R) <= v*(R)` for every subset at once.
    pub simultaneous: f64,
    pub per_subset: Vec<f64>,
}

/// Frequency with which the sensitivity sets cover the true number of nulls.
/// With `confound`, data are drawn with that bias and `gamma` should be at
/// least its strength.
pub fn run_coverage_study(
    spec: &ExperimentSpec,
    subsets: &[Vec<usize>],
    gamma: f64,
    confound: Option<&ConfoundedAssignmentSpec>,
) -> Result<CoverageResult> {
    spec.validate()?;
    let k = spec.outcomes;
    let cfg = ClosedTestConfig::new(spec.alpha, k, GammaBound::new(gamma)?)?;
    let covered: Vec<Vec<bool>> = (0..spec.replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let data = match confound {
                Some(c) => gen_confounded_pairs(spec, c, rep)?,
                None => gen_matched_pairs(spec, rep)?,
            };
            let scores = scores_for(spec, &data)?;
            let verdict = screen(&data.design, &scores, &cfg)?;
            subsets
                .iter()
                .map(|r| {
                    let (v, _) = v_star_screened(&data.design, &scores, r, &cfg, &verdict)?;
                    Ok(data.true_nulls_in(r) <= v)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = covered.len() as f64;
    Ok(CoverageResult {
        gamma,
        replicates: covered.len(),
        subsets: subsets.to_vec(),
        simultaneous: covered.iter().filter(|c| c.iter().all(|&x| x)).count() as f64 / n,
        per_subset: (0..subsets.len())
            .map(|j| covered.iter().filter(|c| c[j]).count() as f64 / n)
            .collect(),
    })
}
