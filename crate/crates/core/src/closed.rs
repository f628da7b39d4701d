//! Closed testing under worst-case bias: screening, `v*_Gamma(R)` by
//! branch-and-bound over outcome inclusion, the enumerative reference
//! computation, the naive Holm comparator and generalized sensitivity values.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::MatchedDesign;
use crate::error::{Error, Result};
use crate::minimax::{decide, zeta_flat, MinimaxTolerances, ZetaProblem};
use crate::model::{moments_flat, AssignmentProbabilities, GammaBound};
use crate::scores::{sum_statistic, ScoreMatrix};
use crate::stats::{chi2_1_quantile_upper, chi2_1_upper_tail, holm_rejections};
use crate::worst_case::{
    bisect_gamma, worst_case_assignment_column, worst_case_from_column, SensitivityValue,
};

/// Largest outcome count handled by the bitmask search.
pub const MAX_OUTCOMES: usize = 64;
/// Guard for the enumerative computation (`2^K` local tests).
pub const MAX_ORACLE_OUTCOMES: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedTestConfig {
    pub alpha: f64,
    /// Total number of outcomes tested.
    pub num_outcomes: usize,
    pub gamma: GammaBound,
    /// Drop outcomes with `p* <= alpha/K` (and `p* <= alpha/v` for size-`v`
    /// searches) from the candidate intersections.
    #[serde(default = "default_true")]
    pub restrict_pool: bool,
    /// Reject an intersection early when one of its members has
    /// `p* <= alpha/|J|`.
    #[serde(default = "default_true")]
    pub singleton_screening: bool,
    #[serde(skip, default)]
    pub tolerances: MinimaxTolerances,
}

fn default_true() -> bool {
    true
}

impl ClosedTestConfig {
    pub fn new(alpha: f64, num_outcomes: usize, gamma: GammaBound) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        if num_outcomes == 0 {
            return Err(Error::Config("at least one outcome is required".into()));
        }
        Ok(Self {
            alpha,
            num_outcomes,
            gamma,
            restrict_pool: true,
            singleton_screening: true,
            tolerances: MinimaxTolerances::default(),
        })
    }

    pub fn with_gamma(&self, gamma: GammaBound) -> Self {
        Self {
            gamma,
            ..self.clone()
        }
    }

    fn check(&self, scores: &ScoreMatrix) -> Result<()> {
        if self.num_outcomes != scores.num_outcomes() {
            return Err(Error::ShapeMismatch(format!(
                "config has K = {} but the score matrix has {} outcomes",
                self.num_outcomes,
                scores.num_outcomes()
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Reject,
    FailToReject,
    Undecided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreeningVerdict {
    pub decisions: Vec<Verdict>,
    pub worst_case_p: Vec<f64>,
    pub alpha: f64,
}

impl ScreeningVerdict {
    pub fn num_undecided(&self) -> usize {
        self.decisions
            .iter()
            .filter(|d| **d == Verdict::Undecided)
            .count()
    }
}

/// The singleton trichotomy at the configured Gamma for every outcome.
pub fn screen(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    config: &ClosedTestConfig,
) -> Result<ScreeningVerdict> {
    config.check(scores)?;
    scores.check_design(design)?;
    let k_total = scores.num_outcomes();
    let g = config.gamma.value();
    let ps = (0..k_total)
        .map(|k| {
            let q = scores.column(k)?;
            let spread = (0..design.num_strata()).any(|i| {
                let s = &q[design.range(i)];
                s.iter().any(|&x| x != s[0])
            });
            if !spread {
                return Err(Error::DegenerateOutcome { outcome: k });
            }
            let t = sum_statistic(design, scores, k)?;
            Ok(worst_case_from_column(design, q, t, g).pvalue)
        })
        .collect::<Result<Vec<f64>>>()?;
    let a = config.alpha;
    let decisions = ps
        .iter()
        .map(|&p| {
            if p <= a / k_total as f64 {
                Verdict::Reject
            } else if p > a {
                Verdict::FailToReject
            } else {
                Verdict::Undecided
            }
        })
        .collect();
    Ok(ScreeningVerdict {
        decisions,
        worst_case_p: ps,
        alpha: a,
    })
}

/// `r_max = #{k in R : p* > alpha/K}` and the pool `{k : p* > alpha/K}`.
pub fn candidate_pool(verdict: &ScreeningVerdict, subset: &[usize]) -> (usize, Vec<usize>) {
    let pool: Vec<usize> = verdict
        .decisions
        .iter()
        .enumerate()
        .filter(|(_, d)| **d != Verdict::Reject)
        .map(|(k, _)| k)
        .collect();
    let r_max = subset
        .iter()
        .filter(|&&k| verdict.decisions[k] != Verdict::Reject)
        .count();
    (r_max, pool)
}

/// Validate a subset of `[K]`; returns it sorted and deduplicated.
pub fn normalize_subset(subset: &[usize], num_outcomes: usize) -> Result<Vec<usize>> {
    if subset.is_empty() {
        return Err(Error::Config("the subset R must be nonempty".into()));
    }
    let mut r = subset.to_vec();
    r.sort_unstable();
    r.dedup();
    if let Some(&k) = r.iter().find(|&&k| k >= num_outcomes) {
        return Err(Error::OutcomeIndex {
            index: k,
            count: num_outcomes,
        });
    }
    Ok(r)
}

fn mask_of(ks: &[usize]) -> u64 {
    ks.iter().fold(0u64, |m, &k| m | (1u64 << k))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `(r, v)` subproblems that required a search.
    pub ip_invocations: usize,
    pub nodes_explored: usize,
    pub solver_calls: usize,
    pub newton_steps: usize,
    pub wall_time_secs: f64,
}

impl Diagnostics {
    pub fn absorb(&mut self, other: &Diagnostics) {
        self.ip_invocations += other.ip_invocations;
        self.nodes_explored += other.nodes_explored;
        self.solver_calls += other.solver_calls;
        self.newton_steps += other.newton_steps;
        self.wall_time_secs += other.wall_time_secs;
    }
}

/// Per-outcome data shared by a search.
struct Columns<'a> {
    qs: Vec<&'a [f64]>,
    ts: Vec<f64>,
}

impl<'a> Columns<'a> {
    fn new(design: &MatchedDesign, scores: &'a ScoreMatrix) -> Result<Self> {
        let k = scores.num_outcomes();
        let mut qs = Vec::with_capacity(k);
        let mut ts = Vec::with_capacity(k);
        for j in 0..k {
            qs.push(scores.column(j)?);
            ts.push(sum_statistic(design, scores, j)?);
        }
        Ok(Self { qs, ts })
    }
}

/// Branch-and-bound state across the `(r, v)` loop of one `v*` computation.
struct Search<'a> {
    design: &'a MatchedDesign,
    scores: &'a ScoreMatrix,
    cols: Columns<'a>,
    config: &'a ClosedTestConfig,
    p: Vec<f64>,
    in_r: u64,
    /// Known feasible `(mask, v)` with a witness assignment.
    feasible: Vec<(u64, usize, usize)>,
    witnesses: Vec<Vec<f64>>,
    /// Known infeasible `(mask, v)`.
    infeasible: Vec<(u64, usize)>,
    exact: HashMap<(u64, usize), Option<usize>>,
    single_rho: HashMap<usize, Vec<f64>>,
    diag: Diagnostics,
}

impl<'a> Search<'a> {
    fn kappa(&self, v: usize) -> f64 {
        chi2_1_quantile_upper(self.config.alpha / v as f64)
    }

    fn single_witness(&mut self, k: usize) -> &[f64] {
        let (design, g) = (self.design, self.config.gamma.value());
        let (q, t) = (self.cols.qs[k], self.cols.ts[k]);
        self.single_rho.entry(k).or_insert_with(|| {
            worst_case_assignment_column(design, q, t, g)
                .as_flat()
                .to_vec()
        })
    }

    /// Feasibility of the local test on `mask` at level `alpha/v`; returns the
    /// index of a stored witness when feasible.
    fn check(
        &mut self,
        mask: u64,
        members: &[usize],
        v: usize,
        parent: Option<usize>,
    ) -> Result<Option<usize>> {
        if let Some(&hit) = self.exact.get(&(mask, v)) {
            return Ok(hit);
        }
        // monotonicity: supersets of infeasible sets are infeasible, and a
        // larger v only relaxes the test
        if self
            .infeasible
            .iter()
            .any(|&(m, vv)| vv >= v && m & mask == m)
        {
            self.exact.insert((mask, v), None);
            return Ok(None);
        }
        if let Some(&(_, _, w)) = self
            .feasible
            .iter()
            .find(|&&(m, vv, _)| vv <= v && m & mask == mask)
        {
            self.exact.insert((mask, v), Some(w));
            return Ok(Some(w));
        }
        let mut hints: Vec<Vec<f64>> = Vec::new();
        if let Some(w) = parent {
            hints.push(self.witnesses[w].clone());
        }
        if members.len() == 1 {
            hints.push(self.single_witness(members[0]).to_vec());
        }
        let hint_refs: Vec<&[f64]> = hints.iter().map(|h| h.as_slice()).collect();
        let prob = ZetaProblem::new(
            self.design,
            self.scores,
            members,
            self.config.alpha / v as f64,
            self.config.gamma,
        )?;
        self.diag.solver_calls += 1;
        let dec = decide(&prob, &self.config.tolerances, &hint_refs)
            .map_err(|e| e.with_context(format!("outcomes {members:?}, v = {v}")))?;
        self.diag.newton_steps += dec.iterations;
        let out = if dec.feasible {
            self.witnesses.push(dec.rho);
            let w = self.witnesses.len() - 1;
            self.feasible.push((mask, v, w));
            Some(w)
        } else {
            self.infeasible.push((mask, v));
            None
        };
        self.exact.insert((mask, v), out);
        Ok(out)
    }

    /// Does some `J` of size `v` drawn from `cands` with `|J ∩ R| >= r`
    /// pass its local test?
    fn search(&mut self, cands: &[usize], r: usize, v: usize) -> Result<bool> {
        let mut members = Vec::with_capacity(v);
        self.dfs(cands, r, v, 0, &mut members, None)
    }

    fn dfs(
        &mut self,
        cands: &[usize],
        r: usize,
        v: usize,
        start: usize,
        members: &mut Vec<usize>,
        witness: Option<usize>,
    ) -> Result<bool> {
        self.diag.nodes_explored += 1;
        let mask = mask_of(members);
        let in_r = (mask & self.in_r).count_ones() as usize;
        if members.len() == v {
            return Ok(in_r >= r);
        }
        if let Some(w) = witness {
            if self.complete_greedily(cands, r, v, start, mask, w) {
                return Ok(true);
            }
        }
        let rest = &cands[start..];
        let mut rest_r = rest.iter().filter(|&&k| self.in_r >> k & 1 == 1).count();
        for (off, &k) in rest.iter().enumerate() {
            let left = rest.len() - off;
            if members.len() + left < v || in_r + rest_r < r {
                break;
            }
            let k_in_r = self.in_r >> k & 1 == 1;
            if k_in_r {
                rest_r -= 1;
            }
            members.push(k);
            let found = match self.check(mask | 1 << k, members, v, witness)? {
                Some(w) => self.dfs(cands, r, v, start + off + 1, members, Some(w))?,
                None => false,
            };
            members.pop();
            if found {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// With a witness for the current set, add every remaining candidate
    /// whose zeta stays inside the band at that same assignment.
    fn complete_greedily(
        &mut self,
        cands: &[usize],
        r: usize,
        v: usize,
        start: usize,
        mask: u64,
        w: usize,
    ) -> bool {
        let kappa = self.kappa(v);
        let rho = &self.witnesses[w];
        let bound = self.config.tolerances.boundary;
        let members_now = mask.count_ones() as usize;
        let mut in_r = (mask & self.in_r).count_ones() as usize;
        let mut witness_ok = true;
        // the witness must itself hold for the current members at this v
        for k in 0..self.cols.qs.len() {
            if mask >> k & 1 == 1
                && zeta_flat(self.design, self.cols.qs[k], self.cols.ts[k], rho, kappa) > bound
            {
                witness_ok = false;
                break;
            }
        }
        if !witness_ok {
            return false;
        }
        let (mut add_r, mut add_o) = (0usize, 0usize);
        for &k in &cands[start..] {
            if zeta_flat(self.design, self.cols.qs[k], self.cols.ts[k], rho, kappa) <= bound {
                if self.in_r >> k & 1 == 1 {
                    add_r += 1;
                } else {
                    add_o += 1;
                }
            }
        }
        let need = v - members_now;
        let take_r = add_r.min(need);
        in_r += take_r;
        let take_o = add_o.min(need - take_r);
        take_r + take_o == need && in_r >= r
    }
}

/// `v*_Gamma(R)`: the worst-case size of the largest subset of `R` whose
/// intersection null survives closed testing.
pub fn v_star(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    subset: &[usize],
    config: &ClosedTestConfig,
) -> Result<(usize, Diagnostics)> {
    let verdict = screen(design, scores, config)?;
    v_star_screened(design, scores, subset, config, &verdict)
}

/// As [`v_star`] with a screening verdict already computed at the same
/// Gamma and alpha.
pub fn v_star_screened(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    subset: &[usize],
    config: &ClosedTestConfig,
    verdict: &ScreeningVerdict,
) -> Result<(usize, Diagnostics)> {
    let start = Instant::now();
    config.check(scores)?;
    let k_total = scores.num_outcomes();
    if k_total > MAX_OUTCOMES {
        return Err(Error::Capacity {
            what: "outcome count K",
            size: k_total as u128,
            limit: MAX_OUTCOMES as u128,
            hint: "split the outcomes into families",
        });
    }
    let subset = normalize_subset(subset, k_total)?;
    let (r_max, pool) = if config.restrict_pool {
        candidate_pool(verdict, &subset)
    } else {
        (subset.len(), (0..k_total).collect())
    };
    let mut search = Search {
        design,
        scores,
        cols: Columns::new(design, scores)?,
        config,
        p: verdict.worst_case_p.clone(),
        in_r: mask_of(&subset),
        feasible: Vec::new(),
        witnesses: Vec::new(),
        infeasible: Vec::new(),
        exact: HashMap::new(),
        single_rho: HashMap::new(),
        diag: Diagnostics::default(),
    };
    let outside = pool.iter().filter(|&&k| search.in_r >> k & 1 == 0).count();
    let mut answer = 0;
    'outer: for r in (1..=r_max).rev() {
        for v in r..=(r + outside) {
            let mut cands: Vec<usize> = if config.restrict_pool {
                pool.iter()
                    .copied()
                    .filter(|&k| search.p[k] > config.alpha / v as f64)
                    .collect()
            } else {
                pool.clone()
            };
            let cand_r = cands.iter().filter(|&&k| search.in_r >> k & 1 == 1).count();
            if cands.len() < v || cand_r < r {
                continue;
            }
            cands.sort_by(|&a, &b| search.p[a].total_cmp(&search.p[b]).then(a.cmp(&b)));
            search.diag.ip_invocations += 1;
            if search.search(&cands, r, v)? {
                answer = r;
                break 'outer;
            }
        }
    }
    let mut diag = search.diag;
    diag.wall_time_secs = start.elapsed().as_secs_f64();
    Ok((answer, diag))
}

/// Worst-case local test on `J` at level `alpha/|J|`: `true` when it fails to
/// reject for some assignment in the polytope.
pub fn local_test_accepts(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    outcomes: &[usize],
    config: &ClosedTestConfig,
) -> Result<bool> {
    let prob = ZetaProblem::new(
        design,
        scores,
        outcomes,
        config.alpha / outcomes.len() as f64,
        config.gamma,
    )?;
    Ok(decide(&prob, &config.tolerances, &[])?.feasible)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub v: usize,
    /// Indexed by bitmask over `[K]`: `true` when the closed procedure
    /// rejects that intersection.
    pub closed_rejections: Vec<bool>,
    pub local_tests: usize,
    pub solver_calls: usize,
    pub wall_time_secs: f64,
}

/// `v*_Gamma(R)` by evaluating every intersection's worst-case local test
/// and closing the rejections.
pub fn enumerative_oracle_v(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    subset: &[usize],
    config: &ClosedTestConfig,
) -> Result<usize> {
    Ok(enumerative_oracle(design, scores, subset, config)?.v)
}

pub fn enumerative_oracle(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    subset: &[usize],
    config: &ClosedTestConfig,
) -> Result<OracleOutcome> {
    let start = Instant::now();
    config.check(scores)?;
    let k_total = scores.num_outcomes();
    if k_total > MAX_ORACLE_OUTCOMES {
        return Err(Error::Capacity {
            what: "enumerated intersections 2^K",
            size: 1u128 << k_total,
            limit: 1u128 << MAX_ORACLE_OUTCOMES,
            hint: "use v_star, which searches the intersections instead",
        });
    }
    let subset = normalize_subset(subset, k_total)?;
    let p = if config.singleton_screening {
        screen(design, scores, config)?.worst_case_p
    } else {
        Vec::new()
    };
    let full = 1usize << k_total;
    // accept[mask]: the local test on mask fails to reject
    let mut accept = vec![false; full];
    let mut solver_calls = 0;
    let mut members = Vec::with_capacity(k_total);
    for mask in 1..full {
        members.clear();
        members.extend((0..k_total).filter(|k| mask >> k & 1 == 1));
        let level = config.alpha / members.len() as f64;
        if config.singleton_screening && members.iter().any(|&k| p[k] <= level) {
            continue;
        }
        solver_calls += 1;
        accept[mask] = local_test_accepts(design, scores, &members, config)?;
    }
    // closure: H_I survives iff some superset's local test accepts
    let mut survives = accept;
    for b in 0..k_total {
        for mask in 0..full {
            if mask >> b & 1 == 0 {
                survives[mask] |= survives[mask | 1 << b];
            }
        }
    }
    let r_mask = mask_of(&subset) as usize;
    let mut v = 0;
    for mask in 1..full {
        if mask & !r_mask == 0 && survives[mask] {
            v = v.max(mask.count_ones() as usize);
        }
    }
    Ok(OracleOutcome {
        v,
        closed_rejections: survives.iter().map(|s| !s).collect(),
        local_tests: full - 1,
        solver_calls,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

/// Count of outcomes in `R` left unrejected by Holm at level alpha.
fn holm_count(p: &[f64], subset: &[usize], alpha: f64) -> usize {
    let rej = holm_rejections(p, alpha);
    subset.iter().filter(|&&k| !rej[k]).count()
}

/// Holm on the per-outcome worst-case p-values.
pub fn naive_v(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    subset: &[usize],
    config: &ClosedTestConfig,
) -> Result<usize> {
    let verdict = screen(design, scores, config)?;
    naive_v_screened(subset, config, &verdict)
}

pub fn naive_v_screened(
    subset: &[usize],
    config: &ClosedTestConfig,
    verdict: &ScreeningVerdict,
) -> Result<usize> {
    let subset = normalize_subset(subset, verdict.worst_case_p.len())?;
    Ok(holm_count(&verdict.worst_case_p, &subset, config.alpha))
}

/// `v_rho(R)` for a fully specified assignment: Holm over all K p-values.
pub fn v_known_rho(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    subset: &[usize],
    rho: &AssignmentProbabilities,
    alpha: f64,
) -> Result<usize> {
    scores.check_design(design)?;
    rho.check_design(design)?;
    let subset = normalize_subset(subset, scores.num_outcomes())?;
    let p = known_rho_pvalues(design, scores, rho)?;
    Ok(holm_count(&p, &subset, alpha))
}

/// Two-sided chi-square p-values of every outcome at a fixed assignment.
pub fn known_rho_pvalues(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    rho: &AssignmentProbabilities,
) -> Result<Vec<f64>> {
    (0..scores.num_outcomes())
        .map(|k| {
            let t = sum_statistic(design, scores, k)?;
            let m = moments_flat(design, scores.column(k)?, rho.as_flat());
            let dev = (t - m.mu).powi(2);
            Ok(if m.sigma2 > 0.0 {
                chi2_1_upper_tail(dev / m.sigma2)
            } else if dev == 0.0 {
                1.0
            } else {
                0.0
            })
        })
        .collect()
}

/// Smallest Gamma at which `v*_Gamma(R) > r`.
pub fn gsv(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    subset: &[usize],
    r: usize,
    alpha: f64,
    gamma_hi: f64,
    tol: f64,
) -> Result<SensitivityValue> {
    let subset = normalize_subset(subset, scores.num_outcomes())?;
    if r >= subset.len() {
        return Err(Error::Config(format!(
            "r must be below |R| = {}, got {r}",
            subset.len()
        )));
    }
    let base = ClosedTestConfig::new(alpha, scores.num_outcomes(), GammaBound::ONE)?;
    bisect_gamma(gamma_hi, tol, |g| {
        Ok(v_star(design, scores, &subset, &base.with_gamma(g))?.0 > r)
    })
}

/// The same changepoint computed from the naive count.
pub fn naive_gsv(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    subset: &[usize],
    r: usize,
    alpha: f64,
    gamma_hi: f64,
    tol: f64,
) -> Result<SensitivityValue> {
    let subset = normalize_subset(subset, scores.num_outcomes())?;
    if r >= subset.len() {
        return Err(Error::Config(format!(
            "r must be below |R| = {}, got {r}",
            subset.len()
        )));
    }
    let base = ClosedTestConfig::new(alpha, scores.num_outcomes(), GammaBound::ONE)?;
    bisect_gamma(gamma_hi, tol, |g| {
        Ok(naive_v(design, scores, &subset, &base.with_gamma(g))? > r)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetSearchConfig {
    pub alpha: f64,
    pub gamma_hi: f64,
    pub tol: f64,
    /// Maximum number of subsets evaluated.
    pub cap: u64,
    /// Draw subsets from these outcomes only.
    pub prefilter: Option<Vec<usize>>,
}

impl Default for SubsetSearchConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            gamma_hi: 10.0,
            tol: crate::worst_case::GAMMA_TOL,
            cap: 5_000,
            prefilter: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedSubset {
    pub subset: Vec<usize>,
    pub gsv: SensitivityValue,
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

fn combinations(items: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(size);
    fn rec(
        items: &[usize],
        size: usize,
        start: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < size - cur.len() {
                break;
            }
            cur.push(items[i]);
            rec(items, size, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(items, size, 0, &mut cur, &mut out);
    out
}

/// Rank every subset of the given size by `Gamma*(R, r)`, largest first;
/// ties go to the lexicographically smaller index set.
pub fn subset_search(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    subset_size: usize,
    r: usize,
    config: &SubsetSearchConfig,
) -> Result<Vec<RankedSubset>> {
    let k_total = scores.num_outcomes();
    let items = match &config.prefilter {
        Some(p) => normalize_subset(p, k_total)?,
        None => (0..k_total).collect(),
    };
    if subset_size == 0 || subset_size > items.len() {
        return Err(Error::Config(format!(
            "subset size must lie in 1..={}, got {subset_size}",
            items.len()
        )));
    }
    let count = binomial(items.len(), subset_size);
    if count > config.cap as u128 {
        return Err(Error::Capacity {
            what: "candidate subsets",
            size: count,
            limit: config.cap as u128,
            hint: "restrict the candidates with a prefilter (for example outcomes with p <= 0.05 at Gamma = 1)",
        });
    }
    let subsets = combinations(&items, subset_size);
    let mut ranked = subsets
        .into_par_iter()
        .map(|s| {
            let g = gsv(
                design,
                scores,
                &s,
                r,
                config.alpha,
                config.gamma_hi,
                config.tol,
            )?;
            Ok(RankedSubset { subset: s, gsv: g })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        b.gsv
            .gamma
            .total_cmp(&a.gsv.gamma)
            .then_with(|| a.subset.cmp(&b.subset))
    });
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::uniform_assignment;

    fn fixture() -> (MatchedDesign, ScoreMatrix) {
        let d = MatchedDesign::pairs(&[true; 8]).unwrap();
        let mk = |d: &[f64]| -> Vec<f64> { d.iter().flat_map(|&x| [x / 2.0, -x / 2.0]).collect() };
        let a = mk(&[1.0, 0.9, 0.8, 1.1, 0.7, 1.0, 0.95, 0.85]);
        let b = mk(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.6, -0.1]);
        let c = mk(&[0.8, 0.6, -0.2, 0.9, 0.7, 0.5, 0.4, 0.3]);
        (d, ScoreMatrix::from_columns(vec![a, b, c]).unwrap())
    }

    #[test]
    fn pool_rules() {
        let v = ScreeningVerdict {
            decisions: vec![Verdict::Reject, Verdict::Undecided, Verdict::FailToReject],
            worst_case_p: vec![0.001, 0.03, 0.5],
            alpha: 0.05,
        };
        assert_eq!(candidate_pool(&v, &[0, 1]), (1, vec![1, 2]));
        assert_eq!(candidate_pool(&v, &[0]), (0, vec![1, 2]));
    }

    #[test]
    fn gamma_one_matches_known_rho() {
        let (d, s) = fixture();
        let cfg = ClosedTestConfig::new(0.05, 3, GammaBound::ONE).unwrap();
        let u = uniform_assignment(&d);
        for r in [vec![0], vec![1, 2], vec![0, 1, 2]] {
            let (v, _) = v_star(&d, &s, &r, &cfg).unwrap();
            assert_eq!(v, v_known_rho(&d, &s, &r, &u, 0.05).unwrap());
        }
    }

    #[test]
    fn matches_oracle_and_is_dominated() {
        let (d, s) = fixture();
        for g in [1.0, 1.2, 1.5, 2.0, 3.0] {
            let cfg = ClosedTestConfig::new(0.05, 3, GammaBound::new(g).unwrap()).unwrap();
            for r in [vec![0], vec![1], vec![0, 2], vec![0, 1, 2]] {
                let (v, _) = v_star(&d, &s, &r, &cfg).unwrap();
                assert_eq!(
                    v,
                    enumerative_oracle_v(&d, &s, &r, &cfg).unwrap(),
                    "Gamma {g} R {r:?}"
                );
                assert!(naive_v(&d, &s, &r, &cfg).unwrap() >= v);
            }
        }
    }

    #[test]
    fn gsv_is_monotone_in_r() {
        let (d, s) = fixture();
        let r_set = [0, 1, 2];
        let g: Vec<f64> = (0..3)
            .map(|r| gsv(&d, &s, &r_set, r, 0.05, 10.0, 1e-3).unwrap().gamma)
            .collect();
        assert!(g[0] <= g[1] + 1e-12 && g[1] <= g[2] + 1e-12, "{g:?}");
    }

    #[test]
    fn combinations_and_binomial() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(combinations(&[0, 1, 2, 3], 2).len(), 6);
        assert_eq!(combinations(&[0, 1, 2], 2)[0], vec![0, 1]);
    }
}
