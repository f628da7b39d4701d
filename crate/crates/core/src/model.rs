//! The Gamma sensitivity model: bounded within-stratum assignment odds.

use serde::{Deserialize, Serialize};

use crate::design::MatchedDesign;
use crate::error::{Error, Result};
use crate::scores::ScoreMatrix;

/// Default additive tolerance for [`membership_check`].
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Enumeration guard for exact randomization tails.
pub const MAX_ENUMERATED_ASSIGNMENTS: u128 = 1_000_000;

/// Sensitivity parameter: the maximum within-stratum odds ratio of treatment.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GammaBound(f64);

impl GammaBound {
    pub const ONE: GammaBound = GammaBound(1.0);

    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma >= 1.0 {
            Ok(Self(gamma))
        } else {
            Err(Error::Config(format!(
                "Gamma must be finite and >= 1, got {gamma}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_one(self) -> bool {
        self.0 == 1.0
    }
}

impl TryFrom<f64> for GammaBound {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GammaBound> for f64 {
    fn from(g: GammaBound) -> f64 {
        g.0
    }
}

/// Per-stratum treatment probabilities, stored flat in unit order.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentProbabilities {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl AssignmentProbabilities {
    /// From one probability vector per stratum. Only shape is checked here;
    /// use [`membership_check`] for the polytope conditions.
    pub fn from_strata(strata: Vec<Vec<f64>>) -> Self {
        let mut offsets = Vec::with_capacity(strata.len() + 1);
        let mut values = Vec::new();
        for s in strata {
            offsets.push(values.len());
            values.extend(s);
        }
        offsets.push(values.len());
        Self { values, offsets }
    }

    pub(crate) fn from_flat(design: &MatchedDesign, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), design.num_units());
        Self {
            values,
            offsets: design.offsets().to_vec(),
        }
    }

    pub fn num_strata(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn stratum(&self, i: usize) -> &[f64] {
        &self.values[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn check_design(&self, design: &MatchedDesign) -> Result<()> {
        if self.offsets != design.offsets() {
            return Err(Error::ShapeMismatch(
                "assignment probabilities do not match the design's strata".into(),
            ));
        }
        Ok(())
    }
}

/// The no-hidden-bias assignment: `1/n_i` within every stratum.
pub fn uniform_assignment(design: &MatchedDesign) -> AssignmentProbabilities {
    let mut values = Vec::with_capacity(design.num_units());
    for i in 0..design.num_strata() {
        let n = design.stratum_size(i);
        values.extend(std::iter::repeat_n(1.0 / n as f64, n));
    }
    AssignmentProbabilities::from_flat(design, values)
}

/// True iff every stratum vector is nonnegative, sums to one, and satisfies
/// `rho_j <= Gamma * rho_j'` for all pairs, each within additive `tol`.
pub fn membership_check(
    design: &MatchedDesign,
    rho: &AssignmentProbabilities,
    gamma: GammaBound,
    tol: f64,
) -> Result<bool> {
    rho.check_design(design)?;
    let g = gamma.value();
    for i in 0..rho.num_strata() {
        let p = rho.stratum(i);
        if p.iter().any(|&x| !(x >= -tol)) {
            return Ok(false);
        }
        if (p.iter().sum::<f64>() - 1.0).abs() > tol {
            return Ok(false);
        }
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > g * lo + tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// The vertex-form probability vector `rho_j ∝ Gamma^{u_j}`.
pub fn vertex_assignment(gamma: GammaBound, u: &[bool]) -> Vec<f64> {
    let g = gamma.value();
    let w: Vec<f64> = u.iter().map(|&b| if b { g } else { 1.0 }).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Expectation and variance of `T_k` under an assignment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentPair {
    pub mu: f64,
    pub sigma2: f64,
}

pub fn moments(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    k: usize,
    rho: &AssignmentProbabilities,
) -> Result<MomentPair> {
    scores.check_design(design)?;
    rho.check_design(design)?;
    let q = scores.column(k)?;
    Ok(moments_flat(design, q, rho.as_flat()))
}

pub(crate) fn moments_flat(design: &MatchedDesign, q: &[f64], rho: &[f64]) -> MomentPair {
    let mut mu = 0.0;
    let mut sigma2 = 0.0;
    for i in 0..design.num_strata() {
        let r = design.range(i);
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for u in r {
            m1 += rho[u] * q[u];
            m2 += rho[u] * q[u] * q[u];
        }
        mu += m1;
        sigma2 += (m2 - m1 * m1).max(0.0);
    }
    MomentPair { mu, sigma2 }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// `P(T >= a)`.
    Upper,
    /// `P(|T - mu| >= |a - mu|)` with `mu` the expectation under `rho`.
    TwoSided,
}

/// Exact tail probability of `T_k` by enumerating every assignment in Omega.
pub fn exact_tail_probability(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    k: usize,
    rho: &AssignmentProbabilities,
    a: f64,
    side: Side,
) -> Result<f64> {
    scores.check_design(design)?;
    rho.check_design(design)?;
    let q = scores.column(k)?;
    let mut omega: u128 = 1;
    for i in 0..design.num_strata() {
        omega = omega.saturating_mul(design.stratum_size(i) as u128);
        if omega > MAX_ENUMERATED_ASSIGNMENTS {
            return Err(Error::Capacity {
                what: "assignment space |Omega|",
                size: omega,
                limit: MAX_ENUMERATED_ASSIGNMENTS,
                hint: "use the normal-approximation worst-case p-value instead",
            });
        }
    }
    let mu = moments_flat(design, q, rho.as_flat()).mu;
    let scale: f64 = q.iter().map(|v| v.abs()).sum::<f64>() + a.abs() + 1.0;
    let eps = 1e-12 * scale;
    let threshold = match side {
        Side::Upper => a,
        Side::TwoSided => (a - mu).abs(),
    };
    let p = rho.as_flat();
    let b = design.num_strata();
    let mut choice = vec![0usize; b];
    let mut total = 0.0;
    loop {
        let mut t = 0.0;
        let mut w = 1.0;
        for (i, &c) in choice.iter().enumerate() {
            let u = design.offsets()[i] + c;
            t += q[u];
            w *= p[u];
        }
        let hit = match side {
            Side::Upper => t >= threshold - eps,
            Side::TwoSided => (t - mu).abs() >= threshold - eps,
        };
        if hit {
            total += w;
        }
        // odometer
        let mut i = 0;
        loop {
            if i == b {
                return Ok(total.min(1.0));
            }
            choice[i] += 1;
            if choice[i] < design.stratum_size(i) {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}
