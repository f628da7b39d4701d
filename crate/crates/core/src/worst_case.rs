//! Worst-case two-sided p-values and single-outcome sensitivity values.
//!
//! Under an assignment `rho` the deviate `(T - mu)^2 / sigma^2` is referred to
//! chi2(1). The worst case over the polytope minimizes this ratio. When `T`
//! lies outside the attainable expectation interval, every minimizer
//! maximizes `2 theta * mu_i(rho_i) + sigma_i^2(rho_i)` stratum by stratum for
//! a single scalar `theta = G / F >= 0`. Each stratum's solution traces its
//! upper hull in the `(E q, E q^2)` plane as `theta` grows, so the deviate
//! along the whole family is piecewise rational with closed-form minima on
//! every piece. The `theta -> inf` end of the family is the usual separable
//! rule (maximize the expectation, then the variance).

use serde::{Deserialize, Serialize};

use crate::design::MatchedDesign;
use crate::error::{Error, Result};
use crate::model::{AssignmentProbabilities, GammaBound};
use crate::scores::{sum_statistic, ScoreMatrix};
use crate::stats::chi2_1_upper_tail;

/// Default absolute bisection tolerance on Gamma.
pub const GAMMA_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCasePValue {
    pub statistic: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    /// Smallest chi2(1) deviate over the polytope.
    pub deviate: f64,
    pub pvalue: f64,
    /// Deviate at the expectation-optimal, variance-maximizing vertex.
    pub separable_deviate: f64,
}

impl WorstCasePValue {
    pub fn separable_pvalue(&self) -> f64 {
        chi2_1_upper_tail(self.separable_deviate)
    }
}

#[derive(Clone, Copy, Debug)]
struct HullVertex {
    a: f64,
    b: f64,
    bottom: usize,
    top: usize,
}

/// Per-stratum candidate vertices are "Gamma on the `bottom` smallest and
/// `top` largest scores"; every upper-hull vertex in the `(E q, E q^2)` plane
/// has this form because the supporting linear functional is a convex
/// quadratic in the score.
fn stratum_hull(
    sorted: &[f64],
    gamma: f64,
    cand: &mut Vec<HullVertex>,
    hull: &mut Vec<HullVertex>,
) {
    let n = sorted.len();
    cand.clear();
    hull.clear();
    let lo = sorted[0];
    let hi = sorted[n - 1];
    if gamma == 1.0 || hi == lo {
        let a = sorted.iter().sum::<f64>() / n as f64;
        let b = sorted.iter().map(|x| x * x).sum::<f64>() / n as f64;
        hull.push(HullVertex {
            a,
            b,
            bottom: 0,
            top: 0,
        });
        return;
    }
    if n == 2 {
        let (s0, s1) = (sorted[0], sorted[1]);
        let d = gamma + 1.0;
        hull.push(HullVertex {
            a: (gamma * s0 + s1) / d,
            b: (gamma * s0 * s0 + s1 * s1) / d,
            bottom: 1,
            top: 0,
        });
        hull.push(HullVertex {
            a: (s0 + gamma * s1) / d,
            b: (s0 * s0 + gamma * s1 * s1) / d,
            bottom: 0,
            top: 1,
        });
        return;
    }
    let mut p1 = vec![0.0; n + 1];
    let mut p2 = vec![0.0; n + 1];
    for j in 0..n {
        p1[j + 1] = p1[j] + sorted[j];
        p2[j + 1] = p2[j] + sorted[j] * sorted[j];
    }
    let (t1, t2) = (p1[n], p2[n]);
    for m in 1..n {
        let denom = m as f64 * gamma + (n - m) as f64;
        for bottom in 0..=m {
            let top = m - bottom;
            let s1 = p1[bottom] + (t1 - p1[n - top]);
            let s2 = p2[bottom] + (t2 - p2[n - top]);
            cand.push(HullVertex {
                a: (gamma * s1 + (t1 - s1)) / denom,
                b: (gamma * s2 + (t2 - s2)) / denom,
                bottom,
                top,
            });
        }
    }
    cand.sort_by(|x, y| x.a.total_cmp(&y.a).then(y.b.total_cmp(&x.b)));
    let scale = hi.abs().max(lo.abs()).max(1e-300);
    let eps = 1e-14 * scale;
    for &p in cand.iter() {
        if let Some(last) = hull.last() {
            if (p.a - last.a).abs() <= eps {
                continue;
            }
        }
        while hull.len() >= 2 {
            let o = hull[hull.len() - 2];
            let m = hull[hull.len() - 1];
            let cross = (m.a - o.a) * (p.b - o.b) - (m.b - o.b) * (p.a - o.a);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
}

/// Contribution of one stratum piece to `F = f0 + f1 θ` and `G = g0 + g2 θ^2`.
#[derive(Clone, Copy, Debug, Default)]
struct Piece {
    f0: f64,
    f1: f64,
    g0: f64,
    g2: f64,
}

impl Piece {
    fn vertex(v: &HullVertex) -> Self {
        Piece {
            f0: -v.a,
            f1: 0.0,
            g0: v.b - v.a * v.a,
            g2: 0.0,
        }
    }

    fn segment(p: &HullVertex, q: &HullVertex) -> Self {
        let s = (q.b - p.b) / (q.a - p.a);
        let c = 0.5 * s;
        let beta0 = p.b + (c - p.a) * s;
        Piece {
            f0: -c,
            f1: -1.0,
            g0: beta0 - c * c,
            g2: -1.0,
        }
    }

    fn minus(self, o: Piece) -> Piece {
        Piece {
            f0: self.f0 - o.f0,
            f1: self.f1 - o.f1,
            g0: self.g0 - o.g0,
            g2: self.g2 - o.g2,
        }
    }
}

/// Piece index along the hull: even = vertex `idx/2`, odd = segment into vertex `(idx+1)/2`.
fn piece_breaks(hull: &[HullVertex]) -> impl Iterator<Item = f64> + '_ {
    (0..hull.len().saturating_sub(1)).flat_map(move |e| {
        let (p, q) = (&hull[e], &hull[e + 1]);
        let s = (q.b - p.b) / (q.a - p.a);
        [p.a - 0.5 * s, q.a - 0.5 * s]
    })
}

fn piece_at(hull: &[HullVertex], idx: usize) -> Piece {
    if idx % 2 == 0 {
        Piece::vertex(&hull[idx / 2])
    } else {
        Piece::segment(&hull[idx / 2], &hull[idx / 2 + 1])
    }
}

struct Sweep {
    deviate: f64,
    theta: f64,
    separable: f64,
}

/// Shared scratch for the per-stratum hulls.
struct Scratch {
    sorted: Vec<f64>,
    cand: Vec<HullVertex>,
    hull: Vec<HullVertex>,
}

impl Scratch {
    fn new() -> Self {
        Self {
            sorted: Vec::new(),
            cand: Vec::new(),
            hull: Vec::new(),
        }
    }

    fn load(&mut self, q: &[f64], sign: f64, gamma: f64) {
        self.sorted.clear();
        self.sorted.extend(q.iter().map(|x| sign * x));
        self.sorted.sort_by(f64::total_cmp);
        stratum_hull(&self.sorted, gamma, &mut self.cand, &mut self.hull);
    }
}

fn expectation_range(design: &MatchedDesign, q: &[f64], gamma: f64) -> (f64, f64) {
    let mut scratch = Scratch::new();
    let mut lo = 0.0;
    let mut hi = 0.0;
    for i in 0..design.num_strata() {
        scratch.load(&q[design.range(i)], 1.0, gamma);
        lo += scratch.hull[0].a;
        hi += scratch.hull.last().unwrap().a;
    }
    (lo, hi)
}

/// Minimize `F^2/G` along the theta-family with scores multiplied by `sign`
/// and `t = sign * T > mu_max`.
fn sweep(design: &MatchedDesign, q: &[f64], t: f64, sign: f64, gamma: f64) -> Sweep {
    let mut scratch = Scratch::new();
    let mut events: Vec<(f64, Piece)> = Vec::new();
    let mut cur = Piece {
        f0: t,
        ..Piece::default()
    };
    let mut tail = Piece {
        f0: t,
        ..Piece::default()
    };
    for i in 0..design.num_strata() {
        scratch.load(&q[design.range(i)], sign, gamma);
        let hull = &scratch.hull;
        let last = Piece::vertex(hull.last().unwrap());
        tail.f0 += last.f0;
        tail.g0 += last.g0;
        let breaks: Vec<f64> = piece_breaks(hull).collect();
        let mut idx = breaks.iter().take_while(|&&b| b <= 0.0).count();
        let p0 = piece_at(hull, idx);
        cur.f0 += p0.f0;
        cur.f1 += p0.f1;
        cur.g0 += p0.g0;
        cur.g2 += p0.g2;
        let mut prev = p0;
        while idx < breaks.len() {
            let next = piece_at(hull, idx + 1);
            events.push((breaks[idx], next.minus(prev)));
            prev = next;
            idx += 1;
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let eval = |p: &Piece, th: f64| -> f64 {
        let f = p.f0 + p.f1 * th;
        let g = p.g0 + p.g2 * th * th;
        if g > 0.0 {
            f * f / g
        } else if f.abs() == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let separable = eval(&tail, 0.0);
    let mut best = (separable, f64::INFINITY);
    let consider = |p: &Piece, th: f64, best: &mut (f64, f64)| {
        let v = eval(p, th);
        if v < best.0 {
            *best = (v, th);
        }
    };
    let mut lo = 0.0;
    let mut k = 0;
    loop {
        let hi = if k < events.len() {
            events[k].0
        } else {
            f64::INFINITY
        };
        if hi > lo {
            consider(&cur, lo, &mut best);
            if hi.is_finite() {
                consider(&cur, hi, &mut best);
            }
            if cur.g2 != 0.0 && cur.f0 != 0.0 {
                let tc = cur.f1 * cur.g0 / (cur.f0 * cur.g2);
                if tc > lo && tc < hi {
                    consider(&cur, tc, &mut best);
                }
            }
            lo = hi;
        }
        if k >= events.len() {
            break;
        }
        let d = events[k].1;
        cur.f0 += d.f0;
        cur.f1 += d.f1;
        cur.g0 += d.g0;
        cur.g2 += d.g2;
        k += 1;
    }
    Sweep {
        deviate: best.0,
        theta: best.1,
        separable,
    }
}

fn has_spread(design: &MatchedDesign, q: &[f64]) -> bool {
    (0..design.num_strata()).any(|i| {
        let s = &q[design.range(i)];
        s.iter().any(|&x| x != s[0])
    })
}

/// Worst-case (maximal) normal-approximation p-value of `H_k` over the polytope.
pub fn worst_case_single_pvalue(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    k: usize,
    gamma: GammaBound,
) -> Result<WorstCasePValue> {
    let t = sum_statistic(design, scores, k)?;
    let q = scores.column(k)?;
    if !has_spread(design, q) {
        return Err(Error::DegenerateOutcome { outcome: k });
    }
    Ok(worst_case_from_column(design, q, t, gamma.value()))
}

pub(crate) fn worst_case_from_column(
    design: &MatchedDesign,
    q: &[f64],
    t: f64,
    gamma: f64,
) -> WorstCasePValue {
    let (mu_min, mu_max) = expectation_range(design, q, gamma);
    let (deviate, separable_deviate) = if t > mu_max {
        let s = sweep(design, q, t, 1.0, gamma);
        (s.deviate, s.separable)
    } else if t < mu_min {
        let s = sweep(design, q, -t, -1.0, gamma);
        (s.deviate, s.separable)
    } else {
        (0.0, 0.0)
    };
    WorstCasePValue {
        statistic: t,
        mu_min,
        mu_max,
        deviate,
        pvalue: chi2_1_upper_tail(deviate),
        separable_deviate,
    }
}

/// An assignment attaining the worst-case p-value.
pub fn worst_case_assignment(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    k: usize,
    gamma: GammaBound,
) -> Result<AssignmentProbabilities> {
    let t = sum_statistic(design, scores, k)?;
    let q = scores.column(k)?;
    Ok(worst_case_assignment_column(design, q, t, gamma.value()))
}

pub(crate) fn worst_case_assignment_column(
    design: &MatchedDesign,
    q: &[f64],
    t: f64,
    gamma: f64,
) -> AssignmentProbabilities {
    let (mu_min, mu_max) = expectation_range(design, q, gamma);
    let mut values = vec![0.0; design.num_units()];
    let (sign, theta) = if t > mu_max {
        (1.0, Some(sweep(design, q, t, 1.0, gamma).theta))
    } else if t < mu_min {
        (-1.0, Some(sweep(design, q, -t, -1.0, gamma).theta))
    } else {
        (1.0, None)
    };
    let mut scratch = Scratch::new();
    for i in 0..design.num_strata() {
        let range = design.range(i);
        let qs = &q[range.clone()];
        let n = qs.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| (sign * qs[x]).total_cmp(&(sign * qs[y])));
        scratch.load(qs, sign, gamma);
        let hull = &scratch.hull;
        let vertex_rho = |v: &HullVertex| -> Vec<f64> {
            let m = v.bottom + v.top;
            let denom = m as f64 * gamma + (n - m) as f64;
            let mut r = vec![0.0; n];
            for (rank, &j) in order.iter().enumerate() {
                let up = m > 0 && (rank < v.bottom || rank >= n - v.top);
                r[j] = if up { gamma } else { 1.0 } / denom;
            }
            r
        };
        let rho_i = match theta {
            None => {
                // any point with mean T works; uniform is interior enough for a hint
                vec![1.0 / n as f64; n]
            }
            Some(th) if th.is_infinite() => vertex_rho(hull.last().unwrap()),
            Some(th) => {
                let breaks: Vec<f64> = piece_breaks(hull).collect();
                let idx = breaks.iter().take_while(|&&b| b <= th).count();
                if idx % 2 == 0 {
                    vertex_rho(&hull[idx / 2])
                } else {
                    let (p, r) = (&hull[idx / 2], &hull[idx / 2 + 1]);
                    let s = (r.b - p.b) / (r.a - p.a);
                    let a = th + 0.5 * s;
                    let w = ((a - p.a) / (r.a - p.a)).clamp(0.0, 1.0);
                    let (x, y) = (vertex_rho(p), vertex_rho(r));
                    x.iter()
                        .zip(&y)
                        .map(|(u, v)| (1.0 - w) * u + w * v)
                        .collect()
                }
            }
        };
        values[range].copy_from_slice(&rho_i);
    }
    AssignmentProbabilities::from_flat(design, values)
}

/// Result of a Gamma bisection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityValue {
    /// Reported changepoint: the midpoint of the final bracket.
    pub gamma: f64,
    /// Largest Gamma known to keep the conclusion.
    pub lower: f64,
    /// Smallest Gamma known to overturn it.
    pub upper: f64,
    /// The conclusion survives the whole search range.
    pub saturated: bool,
}

/// Bisection for the smallest Gamma where `overturned(Gamma)` holds, assuming
/// the predicate is monotone in Gamma.
pub fn bisect_gamma<F>(gamma_hi: f64, tol: f64, mut overturned: F) -> Result<SensitivityValue>
where
    F: FnMut(GammaBound) -> Result<bool>,
{
    if !(gamma_hi >= 1.0 && gamma_hi.is_finite()) {
        return Err(Error::Config(format!(
            "gamma_hi must be >= 1, got {gamma_hi}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if overturned(GammaBound::ONE)? {
        return Ok(SensitivityValue {
            gamma: 1.0,
            lower: 1.0,
            upper: 1.0,
            saturated: false,
        });
    }
    if !overturned(GammaBound::new(gamma_hi)?)? {
        return Ok(SensitivityValue {
            gamma: gamma_hi,
            lower: gamma_hi,
            upper: gamma_hi,
            saturated: true,
        });
    }
    let (mut lo, mut hi) = (1.0, gamma_hi);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if overturned(GammaBound::new(mid)?)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SensitivityValue {
        gamma: 0.5 * (lo + hi),
        lower: lo,
        upper: hi,
        saturated: false,
    })
}

/// Smallest Gamma at which the worst-case p-value of outcome `k` exceeds `alpha`.
pub fn single_sensitivity_value(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    k: usize,
    alpha: f64,
    gamma_hi: f64,
    tol: f64,
) -> Result<SensitivityValue> {
    let t = sum_statistic(design, scores, k)?;
    let q = scores.column(k)?;
    if !has_spread(design, q) {
        return Err(Error::DegenerateOutcome { outcome: k });
    }
    bisect_gamma(gamma_hi, tol, |g| {
        Ok(worst_case_from_column(design, q, t, g.value()).pvalue > alpha)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{membership_check, moments, uniform_assignment, MEMBERSHIP_TOL};
    use crate::stats::chi2_1_upper_tail;

    fn pairs_fixture() -> (MatchedDesign, ScoreMatrix) {
        let d = MatchedDesign::pairs(&[true, true, true, true, false, true]).unwrap();
        let q = vec![
            0.4, -0.4, -0.1, 0.1, 0.5, -0.5, 0.3, -0.3, -0.2, 0.2, 0.45, -0.45,
        ];
        (d, ScoreMatrix::from_columns(vec![q]).unwrap())
    }

    #[test]
    fn gamma_one_is_uniform_pvalue() {
        let (d, s) = pairs_fixture();
        let w = worst_case_single_pvalue(&d, &s, 0, GammaBound::ONE).unwrap();
        let m = moments(&d, &s, 0, &uniform_assignment(&d)).unwrap();
        let t = sum_statistic(&d, &s, 0).unwrap();
        let p = chi2_1_upper_tail((t - m.mu).powi(2) / m.sigma2);
        assert!((w.pvalue - p).abs() < 1e-14);
    }

    #[test]
    fn large_gamma_gives_one() {
        let (d, s) = pairs_fixture();
        let w = worst_case_single_pvalue(&d, &s, 0, GammaBound::new(50.0).unwrap()).unwrap();
        assert!(w.mu_min <= w.statistic && w.statistic <= w.mu_max);
        assert_eq!(w.pvalue, 1.0);
    }

    #[test]
    fn exact_is_at_least_separable() {
        let (d, s) = pairs_fixture();
        for g in [1.0, 1.2, 1.5, 2.0] {
            let w = worst_case_single_pvalue(&d, &s, 0, GammaBound::new(g).unwrap()).unwrap();
            assert!(w.deviate <= w.separable_deviate + 1e-12);
        }
    }

    #[test]
    fn assignment_attains_deviate() {
        let (d, s) = pairs_fixture();
        let g = GammaBound::new(1.4).unwrap();
        let w = worst_case_single_pvalue(&d, &s, 0, g).unwrap();
        let rho = worst_case_assignment(&d, &s, 0, g).unwrap();
        assert!(membership_check(&d, &rho, g, MEMBERSHIP_TOL).unwrap());
        let m = moments(&d, &s, 0, &rho).unwrap();
        let dev = (w.statistic - m.mu).powi(2) / m.sigma2;
        assert!(
            (dev - w.deviate).abs() < 1e-10 * (1.0 + dev),
            "{dev} vs {}",
            w.deviate
        );
    }

    #[test]
    fn degenerate_outcome_errors() {
        let d = MatchedDesign::pairs(&[true, true]).unwrap();
        let s = ScoreMatrix::from_columns(vec![vec![1.0, 1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            worst_case_single_pvalue(&d, &s, 0, GammaBound::ONE),
            Err(Error::DegenerateOutcome { outcome: 0 })
        ));
    }

    #[test]
    fn null_statistic_sensitivity_is_one() {
        // T equals its uniform expectation exactly
        let d = MatchedDesign::pairs(&[true, false]).unwrap();
        let s = ScoreMatrix::from_columns(vec![vec![1.0, -1.0, 1.0, -1.0]]).unwrap();
        let sv = single_sensitivity_value(&d, &s, 0, 0.05, 10.0, GAMMA_TOL).unwrap();
        assert_eq!(sv.gamma, 1.0);
        assert!(!sv.saturated);
    }

    #[test]
    fn general_strata_hull_contains_extremes() {
        let mut cand = Vec::new();
        let mut hull = Vec::new();
        let sorted = [-1.0, 0.2, 0.3, 2.0];
        stratum_hull(&sorted, 3.0, &mut cand, &mut hull);
        // rightmost vertex = Gamma on the single largest score
        let last = hull.last().unwrap();
        assert_eq!((last.bottom, last.top), (0, 1));
        let first = hull[0];
        assert_eq!((first.bottom, first.top), (1, 0));
        for w in hull.windows(2) {
            assert!(w[1].a > w[0].a);
        }
    }
}
