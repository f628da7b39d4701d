//! The zeta statistic and the convex inner problem
//! `min_{rho in P_Gamma} max_{k in J} zeta_k(rho; c)`.
//!
//! Each `zeta_k` is a convex quadratic in `rho` (the expectation is affine and
//! the variance concave), so the min-max is a convex program. It is solved in
//! epigraph form with a primal-dual interior point method (Mehrotra
//! predictor-corrector). The polytope rows are kept primal feasible, so every
//! iterate is a member of the polytope and `max_k zeta_k(rho)` is a valid
//! upper bound; a
//! valid lower bound comes from linearizing a dual-weighted combination of the
//! `zeta_k` and minimizing the linearization exactly over the polytope
//! vertices. Decisions are taken only when one of these bounds settles them.

use nalgebra::{DMatrix, DVector};

use crate::design::MatchedDesign;
use crate::error::{Error, Result};
use crate::model::{moments_flat, uniform_assignment, AssignmentProbabilities, GammaBound};
use crate::scores::{sum_statistic, ScoreMatrix};
use crate::stats::chi2_1_quantile_upper;

/// `(T_k - mu)^2 - chi2_{1,1-c} * sigma^2` at `rho`.
pub fn zeta(
    design: &MatchedDesign,
    scores: &ScoreMatrix,
    k: usize,
    rho: &AssignmentProbabilities,
    c: f64,
) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Config(format!(
            "critical level must lie in (0, 1), got {c}"
        )));
    }
    rho.check_design(design)?;
    let t = sum_statistic(design, scores, k)?;
    let m = moments_flat(design, scores.column(k)?, rho.as_flat());
    Ok((t - m.mu).powi(2) - chi2_1_quantile_upper(c) * m.sigma2)
}

/// One local test: outcomes `J`, critical level `c`, bias bound `Gamma`.
#[derive(Clone, Debug)]
pub struct ZetaProblem<'a> {
    design: &'a MatchedDesign,
    scores: &'a ScoreMatrix,
    outcomes: Vec<usize>,
    level: f64,
    gamma: GammaBound,
    kappa: f64,
}

impl<'a> ZetaProblem<'a> {
    pub fn new(
        design: &'a MatchedDesign,
        scores: &'a ScoreMatrix,
        outcomes: &[usize],
        level: f64,
        gamma: GammaBound,
    ) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Config(
                "the outcome set of a local test must be nonempty".into(),
            ));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!(
                "critical level must lie in (0, 1), got {level}"
            )));
        }
        scores.check_design(design)?;
        for &k in outcomes {
            if k >= scores.num_outcomes() {
                return Err(Error::OutcomeIndex {
                    index: k,
                    count: scores.num_outcomes(),
                });
            }
        }
        let kappa = chi2_1_quantile_upper(level);
        Ok(Self {
            design,
            scores,
            outcomes: outcomes.to_vec(),
            level,
            gamma,
            kappa,
        })
    }

    pub fn outcomes(&self) -> &[usize] {
        &self.outcomes
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn gamma(&self) -> GammaBound {
        self.gamma
    }

    /// The chi-square critical value `chi2_{1,1-c}`.
    pub fn critical_value(&self) -> f64 {
        self.kappa
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimaxTolerances {
    /// Absolute stopping gap between the upper and lower bounds.
    pub abs_gap: f64,
    /// Relative stopping gap, scaled by `max(1, |value|)`.
    pub rel_gap: f64,
    /// Values within this band of zero count as fail-to-reject.
    pub boundary: f64,
    /// Cap on interior point iterations.
    pub max_newton_steps: usize,
}

impl Default for MinimaxTolerances {
    fn default() -> Self {
        Self {
            abs_gap: 1e-7,
            rel_gap: 1e-8,
            boundary: 1e-7,
            max_newton_steps: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Certificate {
    /// Some assignment keeps every `zeta_k` at or below the boundary band.
    Feasible,
    /// Every assignment has some `zeta_k` above the band.
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct MinimaxResult {
    /// `max_k zeta_k(argmin_rho)`.
    pub value: f64,
    /// Certified lower bound on the optimum.
    pub lower_bound: f64,
    pub argmin_rho: AssignmentProbabilities,
    pub iterations: usize,
    pub certificate: Certificate,
}

/// Solve the min-max to the requested gap.
pub fn minimax_zeta(problem: &ZetaProblem, tol: &MinimaxTolerances) -> Result<MinimaxResult> {
    let mut solver = Solver::new(problem);
    let out = solver.run(tol, Mode::Full, &[])?;
    Ok(MinimaxResult {
        value: out.upper,
        lower_bound: out.lower,
        argmin_rho: AssignmentProbabilities::from_flat(problem.design, out.rho),
        iterations: out.iterations,
        certificate: if out.lower <= tol.boundary {
            Certificate::Feasible
        } else {
            Certificate::Infeasible
        },
    })
}

/// Outcome of a feasibility decision.
#[derive(Clone, Debug)]
pub(crate) struct Decision {
    pub feasible: bool,
    /// Best point found.
    pub rho: Vec<f64>,
    pub iterations: usize,
}

/// Decide feasibility, stopping as soon as either bound settles it. `hints`
/// are polytope members tried first as witnesses and used for warm starts.
pub(crate) fn decide(
    problem: &ZetaProblem,
    tol: &MinimaxTolerances,
    hints: &[&[f64]],
) -> Result<Decision> {
    let mut solver = Solver::new(problem);
    let out = solver.run(tol, Mode::Decide, hints)?;
    Ok(Decision {
        feasible: out.upper <= tol.boundary || out.lower <= tol.boundary,
        rho: out.rho,
        iterations: out.iterations,
    })
}

/// `zeta_k(rho; c)` for a flat assignment vector.
pub(crate) fn zeta_flat(design: &MatchedDesign, q: &[f64], t: f64, rho: &[f64], kappa: f64) -> f64 {
    let m = moments_flat(design, q, rho);
    (t - m.mu).powi(2) - kappa * m.sigma2
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Full,
    Decide,
}

struct Outcome {
    upper: f64,
    lower: f64,
    rho: Vec<f64>,
    iterations: usize,
}

/// Per-stratum layout in the reduced coordinates `z` (the last unit of each
/// stratum is eliminated through the simplex equality).
struct Layout {
    /// Unit offsets, as in the design.
    uoff: Vec<usize>,
    /// Reduced-coordinate offsets.
    zoff: Vec<usize>,
    /// Offsets of the dense `d_i x d_i` Hessian blocks.
    hoff: Vec<usize>,
}

impl Layout {
    fn new(design: &MatchedDesign) -> Self {
        let s = design.num_strata();
        let mut zoff = Vec::with_capacity(s + 1);
        let mut hoff = Vec::with_capacity(s + 1);
        let (mut z, mut h) = (0, 0);
        for i in 0..s {
            zoff.push(z);
            hoff.push(h);
            let d = design.stratum_size(i) - 1;
            z += d;
            h += d * d;
        }
        zoff.push(z);
        hoff.push(h);
        Self {
            uoff: design.offsets().to_vec(),
            zoff,
            hoff,
        }
    }

    fn strata(&self) -> usize {
        self.zoff.len() - 1
    }

    fn nz(&self) -> usize {
        *self.zoff.last().unwrap()
    }

    fn rho_from_z(&self, z: &[f64], rho: &mut [f64]) {
        for i in 0..self.strata() {
            let (u0, u1) = (self.uoff[i], self.uoff[i + 1]);
            let z0 = self.zoff[i];
            let mut last = 1.0;
            for j in 0..(u1 - u0 - 1) {
                rho[u0 + j] = z[z0 + j];
                last -= z[z0 + j];
            }
            rho[u1 - 1] = last;
        }
    }

    /// Unit displacement for a reduced displacement (sums to zero per stratum).
    fn drho_from_dz(&self, dz: &[f64], drho: &mut [f64]) {
        for i in 0..self.strata() {
            let (u0, u1) = (self.uoff[i], self.uoff[i + 1]);
            let z0 = self.zoff[i];
            let mut last = 0.0;
            for j in 0..(u1 - u0 - 1) {
                drho[u0 + j] = dz[z0 + j];
                last -= dz[z0 + j];
            }
            drho[u1 - 1] = last;
        }
    }

    fn z_from_rho(&self, rho: &[f64], z: &mut [f64]) {
        for i in 0..self.strata() {
            let (u0, u1) = (self.uoff[i], self.uoff[i + 1]);
            let z0 = self.zoff[i];
            z[z0..z0 + (u1 - u0 - 1)].copy_from_slice(&rho[u0..u1 - 1]);
        }
    }

    /// Pull back a gradient over units to the reduced coordinates.
    fn reduce(&self, grad_rho: &[f64], out: &mut [f64]) {
        for i in 0..self.strata() {
            let (u0, u1) = (self.uoff[i], self.uoff[i + 1]);
            let z0 = self.zoff[i];
            let last = grad_rho[u1 - 1];
            for j in 0..(u1 - u0 - 1) {
                out[z0 + j] = grad_rho[u0 + j] - last;
            }
        }
    }
}

struct Solver<'p, 'a> {
    p: &'p ZetaProblem<'a>,
    lay: Layout,
    qs: Vec<&'a [f64]>,
    ts: Vec<f64>,
    /// Reduced score columns.
    qt: Vec<Vec<f64>>,
    g: f64,
    // scratch
    rho: Vec<f64>,
    mu: Vec<f64>,
    /// Per-stratum, per-outcome stratum expectation `m_ik`, laid out `[i * J + k]`.
    m: Vec<f64>,
    zeta: Vec<f64>,
    grads: Vec<Vec<f64>>,
    grad_rho: Vec<f64>,
}

impl<'p, 'a> Solver<'p, 'a> {
    fn new(p: &'p ZetaProblem<'a>) -> Self {
        let lay = Layout::new(p.design);
        let qs: Vec<&[f64]> = p
            .outcomes
            .iter()
            .map(|&k| p.scores.column(k).expect("validated outcome index"))
            .collect();
        let ts = p
            .outcomes
            .iter()
            .map(|&k| sum_statistic(p.design, p.scores, k).expect("validated outcome index"))
            .collect();
        let nz = lay.nz();
        let mut qt = Vec::with_capacity(qs.len());
        for q in &qs {
            let mut v = vec![0.0; nz];
            lay.reduce(q, &mut v);
            qt.push(v);
        }
        let j = qs.len();
        let n = p.design.num_units();
        let s = p.design.num_strata();
        Self {
            p,
            qs,
            ts,
            qt,
            g: p.gamma.value(),
            rho: vec![0.0; n],
            mu: vec![0.0; j],
            m: vec![0.0; s * j],
            zeta: vec![0.0; j],
            grads: vec![vec![0.0; nz]; j],
            grad_rho: vec![0.0; n],
            lay,
        }
    }

    fn nj(&self) -> usize {
        self.qs.len()
    }

    /// Fill `mu`, `m`, `zeta` from `self.rho`; return `max zeta`.
    fn evaluate(&mut self) -> f64 {
        let nj = self.nj();
        let kappa = self.p.kappa;
        let mut fmax = f64::NEG_INFINITY;
        for k in 0..nj {
            let q = self.qs[k];
            let mut mu = 0.0;
            let mut var = 0.0;
            for i in 0..self.lay.strata() {
                let mut a = 0.0;
                let mut b = 0.0;
                for u in self.lay.uoff[i]..self.lay.uoff[i + 1] {
                    let w = self.rho[u] * q[u];
                    a += w;
                    b += w * q[u];
                }
                self.m[i * nj + k] = a;
                mu += a;
                var += b - a * a;
            }
            self.mu[k] = mu;
            let z = (self.ts[k] - mu).powi(2) - kappa * var;
            self.zeta[k] = z;
            fmax = fmax.max(z);
        }
        fmax
    }

    /// Gradient of `zeta_k` over units into `grad_rho` (after `evaluate`).
    fn grad_units(&mut self, k: usize) {
        let nj = self.nj();
        let q = self.qs[k];
        let c = -2.0 * (self.ts[k] - self.mu[k]);
        let kappa = self.p.kappa;
        for i in 0..self.lay.strata() {
            let mi = self.m[i * nj + k];
            for u in self.lay.uoff[i]..self.lay.uoff[i + 1] {
                let qu = q[u];
                self.grad_rho[u] = c * qu - kappa * (qu * qu - 2.0 * mi * qu);
            }
        }
    }

    /// Certified lower bound at the current point for dual weights `lambda`
    /// (after `evaluate`).
    fn lower_bound(&mut self, lambda: &[f64]) -> f64 {
        let n = self.rho.len();
        let mut comb = vec![0.0; n];
        let mut base = 0.0;
        for (k, &l) in lambda.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            base += l * self.zeta[k];
            self.grad_units(k);
            for u in 0..n {
                comb[u] += l * self.grad_rho[u];
            }
        }
        let mut sorted = Vec::new();
        for i in 0..self.lay.strata() {
            let (u0, u1) = (self.lay.uoff[i], self.lay.uoff[i + 1]);
            let gi = &comb[u0..u1];
            let at: f64 = gi.iter().zip(&self.rho[u0..u1]).map(|(a, b)| a * b).sum();
            base += polytope_min(gi, self.g, &mut sorted) - at;
        }
        base
    }

    fn num_poly(&self) -> usize {
        (0..self.lay.strata())
            .map(|i| self.p.design.stratum_size(i))
            .map(|n| n * (n - 1))
            .sum()
    }

    /// Polytope slacks `Gamma rho_b - rho_a` at `self.rho`; false if any is
    /// not strictly positive.
    fn poly_values(&self, out: &mut [f64]) -> bool {
        let mut l = 0;
        let mut ok = true;
        for i in 0..self.lay.strata() {
            let (u0, u1) = (self.lay.uoff[i], self.lay.uoff[i + 1]);
            for a in u0..u1 {
                for b in u0..u1 {
                    if a != b {
                        let s = self.g * self.rho[b] - self.rho[a];
                        ok &= s > 0.0;
                        out[l] = s;
                        l += 1;
                    }
                }
            }
        }
        ok
    }

    /// `out += sum_l v_l (Gamma e_b - e_a)` over units.
    fn poly_apply_t(&self, v: &[f64], out: &mut [f64]) {
        let mut l = 0;
        for i in 0..self.lay.strata() {
            let (u0, u1) = (self.lay.uoff[i], self.lay.uoff[i + 1]);
            for a in u0..u1 {
                for b in u0..u1 {
                    if a != b {
                        out[b] += self.g * v[l];
                        out[a] -= v[l];
                        l += 1;
                    }
                }
            }
        }
    }

    fn poly_apply(&self, drho: &[f64], out: &mut [f64]) {
        let mut l = 0;
        for i in 0..self.lay.strata() {
            let (u0, u1) = (self.lay.uoff[i], self.lay.uoff[i + 1]);
            for a in u0..u1 {
                for b in u0..u1 {
                    if a != b {
                        out[l] = self.g * drho[b] - drho[a];
                        l += 1;
                    }
                }
            }
        }
    }

    fn run(&mut self, tol: &MinimaxTolerances, mode: Mode, hints: &[&[f64]]) -> Result<Outcome> {
        let nj = self.nj();
        let nu = self.rho.len();

        // best hint, used both as a candidate witness and a warm start
        let mut best_rho = uniform_assignment(self.p.design).as_flat().to_vec();
        self.rho.copy_from_slice(&best_rho);
        let mut best_upper = self.evaluate();
        for h in hints {
            if h.len() != nu {
                continue;
            }
            self.rho.copy_from_slice(h);
            let f = self.evaluate();
            if f < best_upper {
                best_upper = f;
                best_rho.copy_from_slice(h);
            }
        }
        if mode == Mode::Decide && best_upper <= tol.boundary {
            return Ok(Outcome {
                upper: best_upper,
                lower: f64::NEG_INFINITY,
                rho: best_rho,
                iterations: 0,
            });
        }
        if self.g == 1.0 {
            return Ok(Outcome {
                upper: best_upper,
                lower: best_upper,
                rho: best_rho,
                iterations: 0,
            });
        }

        // strictly interior start
        let uni = uniform_assignment(self.p.design);
        let shrink = 0.05;
        let start: Vec<f64> = best_rho
            .iter()
            .zip(uni.as_flat())
            .map(|(r, u)| (1.0 - shrink) * r + shrink * u)
            .collect();
        let nz = self.lay.nz();
        let np = self.num_poly();
        let m_total = (np + nj) as f64;
        let mut z = vec![0.0; nz];
        self.lay.z_from_rho(&start, &mut z);
        self.rho.copy_from_slice(&start);
        let f0 = self.evaluate();
        let scale = self
            .zeta
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max)
            .max(1e-12);

        // primal-dual state: outcome rows `y - zeta_k >= 0`, polytope rows
        let mut y = f0 + 0.1 * scale;
        let mut so: Vec<f64> = self.zeta.iter().map(|zk| y - zk).collect();
        let mut lo = vec![1.0 / nj as f64; nj];
        let mut sp = vec![0.0; np];
        self.poly_values(&mut sp);
        let mu0 = so.iter().zip(&lo).map(|(s, l)| s * l).sum::<f64>() / nj as f64;
        let mut lp: Vec<f64> = sp.iter().map(|s| mu0 / s).collect();

        let mut best_lower = f64::NEG_INFINITY;
        let mut iterations = 0;
        let mut lam = vec![0.0; nj];
        let mut cp = vec![0.0; np];
        let mut step = Newton::new(&self.lay, nj);
        let mut dir = Direction::new(nz, nu, nj, np);
        let mut aff = Direction::new(nz, nu, nj, np);
        let mut rpo = vec![0.0; nj];
        let mut rd_z = vec![0.0; nz];
        let mut units = vec![0.0; nu];
        let mut wp = vec![0.0; np];
        let mut rco = vec![0.0; nj];
        let mut rcp = vec![0.0; np];

        loop {
            if iterations >= tol.max_newton_steps {
                return Err(Error::NonConvergence {
                    lower: best_lower,
                    upper: best_upper,
                    iterations,
                    context: String::new(),
                });
            }
            iterations += 1;
            self.lay.rho_from_z(&z, &mut self.rho);
            let inside = self.poly_values(&mut cp);
            let fmax = self.evaluate();
            if inside && fmax < best_upper {
                best_upper = fmax;
                best_rho.copy_from_slice(&self.rho);
            }
            let tot: f64 = lo.iter().sum();
            for k in 0..nj {
                lam[k] = lo[k] / tot;
            }
            let lb = self.lower_bound(&lam);
            if lb > best_lower {
                best_lower = lb;
            }
            if mode == Mode::Decide && (best_upper <= tol.boundary || best_lower > tol.boundary) {
                return Ok(self.finish(best_upper, best_lower, best_rho, iterations));
            }
            let gap = best_upper - best_lower;
            if gap <= tol.abs_gap.max(tol.rel_gap * best_upper.abs().max(1.0)) {
                return Ok(self.finish(best_upper, best_lower, best_rho, iterations));
            }

            for k in 0..nj {
                self.grad_units(k);
                self.lay.reduce(&self.grad_rho, &mut self.grads[k]);
            }
            // residuals
            for k in 0..nj {
                rpo[k] = y - self.zeta[k] - so[k];
            }
            units.iter_mut().for_each(|v| *v = 0.0);
            self.poly_apply_t(&lp, &mut units);
            self.lay.reduce(&units, &mut rd_z);
            for v in rd_z.iter_mut() {
                *v = -*v;
            }
            for k in 0..nj {
                for (r, gk) in rd_z.iter_mut().zip(&self.grads[k]) {
                    *r += lo[k] * gk;
                }
            }
            let rd_y = 1.0 - tot;
            let mu = (dot(&so, &lo) + dot(&sp, &lp)) / m_total;
            if !(mu > 1e-300) {
                return Ok(self.finish(best_upper, best_lower, best_rho, iterations));
            }

            for l in 0..np {
                wp[l] = lp[l] / sp[l];
            }
            if !step.factor(self, &so, &lo, &wp) {
                return Ok(self.finish(best_upper, best_lower, best_rho, iterations));
            }

            // predictor
            for k in 0..nj {
                rco[k] = so[k] * lo[k];
            }
            for l in 0..np {
                rcp[l] = sp[l] * lp[l];
            }
            self.direction(
                &mut step, &mut aff, &rd_z, rd_y, &rpo, &so, &lo, &sp, &lp, &rco, &rcp,
            );
            let a_aff = aff.max_step(&so, &lo, &sp, &lp);
            let mut mu_aff = 0.0;
            for k in 0..nj {
                mu_aff += (so[k] + a_aff * aff.dso[k]) * (lo[k] + a_aff * aff.dlo[k]);
            }
            for l in 0..np {
                mu_aff += (sp[l] + a_aff * aff.dsp[l]) * (lp[l] + a_aff * aff.dlp[l]);
            }
            mu_aff /= m_total;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

            // corrector
            for k in 0..nj {
                rco[k] = so[k] * lo[k] + aff.dso[k] * aff.dlo[k] - sigma * mu;
            }
            for l in 0..np {
                rcp[l] = sp[l] * lp[l] + aff.dsp[l] * aff.dlp[l] - sigma * mu;
            }
            self.direction(
                &mut step, &mut dir, &rd_z, rd_y, &rpo, &so, &lo, &sp, &lp, &rco, &rcp,
            );
            let alpha = (0.995 * dir.max_step(&so, &lo, &sp, &lp)).min(1.0);
            if !(alpha > 1e-12) {
                return Ok(self.finish(best_upper, best_lower, best_rho, iterations));
            }
            for i in 0..nz {
                z[i] += alpha * dir.dz[i];
            }
            y += alpha * dir.dy;
            for k in 0..nj {
                so[k] += alpha * dir.dso[k];
                lo[k] += alpha * dir.dlo[k];
            }
            for l in 0..np {
                sp[l] += alpha * dir.dsp[l];
                lp[l] += alpha * dir.dlp[l];
            }
        }
    }

    /// Solve the linearized KKT system for complementarity residuals `rc`.
    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        step: &mut Newton,
        out: &mut Direction,
        rd_z: &[f64],
        rd_y: f64,
        rpo: &[f64],
        so: &[f64],
        lo: &[f64],
        sp: &[f64],
        lp: &[f64],
        rco: &[f64],
        rcp: &[f64],
    ) {
        let nj = so.len();
        let np = sp.len();
        let nz = rd_z.len();
        // u_j = w_j r_p,j + r_c,j / s_j (the polytope rows are primal feasible)
        let uo: Vec<f64> = (0..nj).map(|k| (lo[k] * rpo[k] + rco[k]) / so[k]).collect();
        for l in 0..np {
            out.tmp_p[l] = rcp[l] / sp[l];
        }
        out.units.iter_mut().for_each(|v| *v = 0.0);
        self.poly_apply_t(&out.tmp_p, &mut out.units);
        let mut rhs_z = vec![0.0; nz];
        self.lay.reduce(&out.units, &mut rhs_z);
        for i in 0..nz {
            rhs_z[i] = -rd_z[i] - rhs_z[i];
        }
        for k in 0..nj {
            for (r, gk) in rhs_z.iter_mut().zip(&self.grads[k]) {
                *r += uo[k] * gk;
            }
        }
        let rhs_y = -rd_y - uo.iter().sum::<f64>();
        step.solve(self, &rhs_z, rhs_y);
        out.dz.copy_from_slice(&step.dz);
        out.dy = step.dy;
        for k in 0..nj {
            let a = out.dy - dot(&self.grads[k], &out.dz);
            out.dso[k] = a + rpo[k];
            out.dlo[k] = -step.c[k] - uo[k];
        }
        self.lay.drho_from_dz(&out.dz, &mut out.units);
        self.poly_apply(&out.units, &mut out.dsp);
        for l in 0..np {
            out.dlp[l] = -(rcp[l] + lp[l] * out.dsp[l]) / sp[l];
        }
    }

    fn finish(&self, upper: f64, lower: f64, rho: Vec<f64>, iterations: usize) -> Outcome {
        Outcome {
            upper,
            lower: lower.min(upper),
            rho,
            iterations,
        }
    }
}

struct Direction {
    dz: Vec<f64>,
    dy: f64,
    dso: Vec<f64>,
    dlo: Vec<f64>,
    dsp: Vec<f64>,
    dlp: Vec<f64>,
    units: Vec<f64>,
    tmp_p: Vec<f64>,
}

impl Direction {
    fn new(nz: usize, nu: usize, nj: usize, np: usize) -> Self {
        Self {
            dz: vec![0.0; nz],
            dy: 0.0,
            dso: vec![0.0; nj],
            dlo: vec![0.0; nj],
            dsp: vec![0.0; np],
            dlp: vec![0.0; np],
            units: vec![0.0; nu],
            tmp_p: vec![0.0; np],
        }
    }

    /// Largest step in `(0, 1]` keeping every slack and multiplier nonnegative.
    fn max_step(&self, so: &[f64], lo: &[f64], sp: &[f64], lp: &[f64]) -> f64 {
        let mut a: f64 = 1.0;
        let pairs = so
            .iter()
            .zip(&self.dso)
            .chain(lo.iter().zip(&self.dlo))
            .chain(sp.iter().zip(&self.dsp))
            .chain(lp.iter().zip(&self.dlp));
        for (v, d) in pairs {
            if *d < 0.0 {
                a = a.min(-v / d);
            }
        }
        a
    }
}

/// `min <g, v>` over the stratum polytope `{v : v_j <= Gamma v_j', sum v = 1}`.
/// Vertices put weight Gamma on some units and 1 on the rest; the best one
/// upweights the `m` smallest coefficients for some `m`.
fn polytope_min(g: &[f64], gamma: f64, sorted: &mut Vec<f64>) -> f64 {
    let n = g.len();
    if n == 2 {
        let (lo, hi) = if g[0] <= g[1] {
            (g[0], g[1])
        } else {
            (g[1], g[0])
        };
        return (gamma * lo + hi) / (gamma + 1.0);
    }
    sorted.clear();
    sorted.extend_from_slice(g);
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    let mut best = total / n as f64;
    let mut prefix = 0.0;
    for m in 1..n {
        prefix += sorted[m - 1];
        let v = (gamma * prefix + (total - prefix)) / (m as f64 * gamma + (n - m) as f64);
        best = best.min(v);
    }
    best
}

/// Newton systems of the primal-dual method. The block diagonal part `D`
/// (polytope rows plus per-stratum variance curvature) is factored directly;
/// the outcome rows enter through a small augmented system in the scaled
/// multiplier steps and `dy`, which stays well conditioned as slacks vanish.
struct Newton {
    dz: Vec<f64>,
    dy: f64,
    dblocks: Vec<f64>,
    /// `D^{-1} [qt_k..., g_k...]`.
    w: Vec<Vec<f64>>,
    lu: Option<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    pb: Vec<f64>,
    /// `c_k` of the last solve.
    c: Vec<f64>,
}

impl Newton {
    fn new(lay: &Layout, nj: usize) -> Self {
        let nz = lay.nz();
        Self {
            dz: vec![0.0; nz],
            dy: 0.0,
            dblocks: vec![0.0; *lay.hoff.last().unwrap()],
            w: vec![vec![0.0; nz]; 2 * nj],
            lu: None,
            pb: vec![0.0; nz],
            c: vec![0.0; nj],
        }
    }

    /// Factor for outcome slacks `so`, multipliers `lo`, and polytope
    /// weights `wp = lambda / s`.
    fn factor(&mut self, s: &Solver, so: &[f64], lo: &[f64], wp: &[f64]) -> bool {
        let lay = &s.lay;
        let nj = so.len();
        let kappa = s.p.kappa;
        let g = s.g;

        self.dblocks.iter_mut().for_each(|v| *v = 0.0);
        let mut l = 0;
        for i in 0..lay.strata() {
            let n = lay.uoff[i + 1] - lay.uoff[i];
            let d = n - 1;
            let z0 = lay.zoff[i];
            let h0 = lay.hoff[i];
            let blk = &mut self.dblocks[h0..h0 + d * d];
            for a in 0..n {
                for b in 0..n {
                    if a == b {
                        continue;
                    }
                    let wl = wp[l];
                    l += 1;
                    // row Gamma e_b - e_a in z, with e_{n-1} = -1
                    let coef = |j: usize| -> f64 {
                        let eb = if b == n - 1 {
                            -1.0
                        } else if j == b {
                            1.0
                        } else {
                            0.0
                        };
                        let ea = if a == n - 1 {
                            -1.0
                        } else if j == a {
                            1.0
                        } else {
                            0.0
                        };
                        g * eb - ea
                    };
                    for j in 0..d {
                        let cj = coef(j);
                        if cj == 0.0 {
                            continue;
                        }
                        for m in 0..d {
                            blk[j * d + m] += cj * coef(m) * wl;
                        }
                    }
                }
            }
            for k in 0..nj {
                let c = 2.0 * kappa * lo[k];
                let qk = &s.qt[k][z0..z0 + d];
                for j in 0..d {
                    for m in 0..d {
                        blk[j * d + m] += c * qk[j] * qk[m];
                    }
                }
            }
            cholesky_in_place(blk, d);
        }

        for k in 0..nj {
            self.w[k].copy_from_slice(&s.qt[k]);
            self.w[nj + k].copy_from_slice(&s.grads[k]);
        }
        for col in self.w.iter_mut() {
            block_solve(lay, &self.dblocks, col);
        }
        // unknowns (a, c, dy) with a_k = 2 lambda_k <qt_k, dz> and
        // c_k = (lambda_k / s_k)(dy - <g_k, dz>)
        let m = 2 * nj + 1;
        let mut kmat = DMatrix::<f64>::zeros(m, m);
        for r in 0..nj {
            let (qr, gr) = (&s.qt[r], &s.grads[r]);
            for c in 0..nj {
                kmat[(r, c)] = dot(qr, &self.w[c]);
                kmat[(r, nj + c)] = -dot(qr, &self.w[nj + c]);
                kmat[(nj + r, c)] = -dot(gr, &self.w[c]);
                kmat[(nj + r, nj + c)] = dot(gr, &self.w[nj + c]);
            }
            kmat[(r, r)] += 1.0 / (2.0 * lo[r]);
            kmat[(nj + r, nj + r)] += so[r] / lo[r];
            kmat[(nj + r, 2 * nj)] = -1.0;
            kmat[(2 * nj, nj + r)] = 1.0;
        }
        let lu = kmat.lu();
        if !lu.is_invertible() {
            return false;
        }
        self.lu = Some(lu);
        true
    }

    /// Solve `[H_zz h; h^T H_yy] [dz; dy] = [rhs_z; rhs_y]` into `dz`, `dy`.
    fn solve(&mut self, s: &Solver, rhs_z: &[f64], rhs_y: f64) {
        let lay = &s.lay;
        let nj = self.w.len() / 2;
        self.pb.copy_from_slice(rhs_z);
        block_solve(lay, &self.dblocks, &mut self.pb);
        let mut rhs = DVector::<f64>::zeros(2 * nj + 1);
        for k in 0..nj {
            rhs[k] = dot(&s.qt[k], &self.pb);
            rhs[nj + k] = -dot(&s.grads[k], &self.pb);
        }
        rhs[2 * nj] = rhs_y;
        let sol = self
            .lu
            .as_ref()
            .and_then(|lu| lu.solve(&rhs))
            .unwrap_or_else(|| DVector::zeros(2 * nj + 1));
        self.dz.copy_from_slice(&self.pb);
        for k in 0..nj {
            let (a, c) = (sol[k], sol[nj + k]);
            self.c[k] = c;
            for (d, (wq, wg)) in self
                .dz
                .iter_mut()
                .zip(self.w[k].iter().zip(&self.w[nj + k]))
            {
                *d += c * wg - a * wq;
            }
        }
        self.dy = sol[2 * nj];
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense Cholesky of a small symmetric positive definite block (lower factor
/// stored in place), with a diagonal nudge if rounding breaks definiteness.
fn cholesky_in_place(a: &mut [f64], d: usize) {
    let mut jitter = 0.0;
    let orig: Vec<f64> = if d > 1 { a.to_vec() } else { Vec::new() };
    loop {
        let mut ok = true;
        for j in 0..d {
            let mut s = a[j * d + j] + jitter;
            for k in 0..j {
                s -= a[j * d + k] * a[j * d + k];
            }
            if !(s > 0.0) {
                ok = false;
                break;
            }
            let l = s.sqrt();
            a[j * d + j] = l;
            for i in (j + 1)..d {
                let mut v = a[i * d + j];
                for k in 0..j {
                    v -= a[i * d + k] * a[j * d + k];
                }
                a[i * d + j] = v / l;
            }
        }
        if ok {
            return;
        }
        let diag_max = (0..d)
            .map(|j| orig.get(j * d + j).copied().unwrap_or(1.0).abs())
            .fold(1e-300, f64::max);
        jitter = if jitter == 0.0 {
            1e-14 * diag_max
        } else {
            jitter * 100.0
        };
        if d > 1 {
            a.copy_from_slice(&orig);
        } else {
            a[0] = orig.first().copied().unwrap_or(1e-300).max(1e-300);
        }
    }
}

/// Solve `D x = b` in place using the factored blocks.
fn block_solve(lay: &Layout, blocks: &[f64], b: &mut [f64]) {
    for i in 0..lay.strata() {
        let z0 = lay.zoff[i];
        let d = lay.zoff[i + 1] - z0;
        let l = &blocks[lay.hoff[i]..lay.hoff[i] + d * d];
        let x = &mut b[z0..z0 + d];
        if d == 1 {
            x[0] /= l[0] * l[0];
            continue;
        }
        for j in 0..d {
            let mut v = x[j];
            for k in 0..j {
                v -= l[j * d + k] * x[k];
            }
            x[j] = v / l[j * d + j];
        }
        for j in (0..d).rev() {
            let mut v = x[j];
            for k in (j + 1)..d {
                v -= l[k * d + j] * x[k];
            }
            x[j] = v / l[j * d + j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{membership_check, MEMBERSHIP_TOL};
    use crate::worst_case::worst_case_single_pvalue;

    #[test]
    fn zeta_single_pair_hand_value() {
        let d = MatchedDesign::pairs(&[true]).unwrap();
        let s = ScoreMatrix::from_columns(vec![vec![1.0, 0.0]]).unwrap();
        let z = zeta(&d, &s, 0, &uniform_assignment(&d), 0.05).unwrap();
        assert!((z - (0.25 - 3.841458820694124 * 0.25)).abs() < 1e-12);
    }

    #[test]
    fn polytope_min_pairs_and_triples() {
        let mut buf = Vec::new();
        assert!((polytope_min(&[1.0, 0.0], 2.0, &mut buf) - 1.0 / 3.0).abs() < 1e-15);
        // best vertex upweights the two smallest entries
        let v = polytope_min(&[0.0, 0.0, 1.0], 3.0, &mut buf);
        assert!((v - 1.0 / 7.0).abs() < 1e-15);
    }

    fn fixture() -> (MatchedDesign, ScoreMatrix) {
        let d = MatchedDesign::pairs(&[true, false, true, true, false, true]).unwrap();
        let a = vec![
            0.4, -0.4, -0.1, 0.1, 0.5, -0.5, 0.3, -0.3, -0.2, 0.2, 0.45, -0.45,
        ];
        let b = vec![
            0.1, -0.1, 0.6, -0.6, 0.2, -0.2, -0.3, 0.3, 0.5, -0.5, 0.05, -0.05,
        ];
        (d, ScoreMatrix::from_columns(vec![a, b]).unwrap())
    }

    #[test]
    fn result_is_self_consistent() {
        let (d, s) = fixture();
        let g = GammaBound::new(1.3).unwrap();
        let p = ZetaProblem::new(&d, &s, &[0, 1], 0.025, g).unwrap();
        let res = minimax_zeta(&p, &MinimaxTolerances::default()).unwrap();
        assert!(membership_check(&d, &res.argmin_rho, g, MEMBERSHIP_TOL).unwrap());
        let direct = [0, 1]
            .iter()
            .map(|&k| zeta(&d, &s, k, &res.argmin_rho, 0.025).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((direct - res.value).abs() < 1e-8);
        assert!(res.value - res.lower_bound <= 1e-7);
    }

    #[test]
    fn singleton_matches_worst_case_pvalue() {
        let (d, s) = fixture();
        for gv in [1.0, 1.2, 1.6, 2.5] {
            let g = GammaBound::new(gv).unwrap();
            for k in 0..2 {
                let p = worst_case_single_pvalue(&d, &s, k, g).unwrap().pvalue;
                for c in [0.01, 0.025, 0.05, 0.2] {
                    let prob = ZetaProblem::new(&d, &s, &[k], c, g).unwrap();
                    let res = minimax_zeta(&prob, &MinimaxTolerances::default()).unwrap();
                    let accept = res.certificate == Certificate::Feasible;
                    assert_eq!(
                        accept,
                        p > c,
                        "Gamma {gv} k {k} c {c}: p* {p}, value {}",
                        res.value
                    );
                }
            }
        }
    }

    #[test]
    fn constant_outcome_sits_on_boundary() {
        // constant within strata: T equals mu for every rho, so zeta is identically zero
        let d = MatchedDesign::pairs(&[true, true]).unwrap();
        let s = ScoreMatrix::from_columns(vec![vec![1.0, 1.0, 2.0, 2.0]]).unwrap();
        let prob = ZetaProblem::new(&d, &s, &[0], 0.05, GammaBound::new(2.0).unwrap()).unwrap();
        let res = minimax_zeta(&prob, &MinimaxTolerances::default()).unwrap();
        assert_eq!(res.value, 0.0);
        assert_eq!(res.certificate, Certificate::Feasible);
    }

    #[test]
    fn strong_signal_is_infeasible() {
        let d = MatchedDesign::pairs(&[true; 30]).unwrap();
        let q: Vec<f64> = (0..60)
            .map(|u| if u % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let s = ScoreMatrix::from_columns(vec![q.clone(), q]).unwrap();
        let prob = ZetaProblem::new(&d, &s, &[0, 1], 0.025, GammaBound::new(2.0).unwrap()).unwrap();
        let res = minimax_zeta(&prob, &MinimaxTolerances::default()).unwrap();
        assert_eq!(res.certificate, Certificate::Infeasible);
        assert!(res.lower_bound > 0.0);
    }

    #[test]
    fn general_strata_solve() {
        let d = MatchedDesign::with_sizes(&[3, 4, 2, 3]).unwrap();
        let q = vec![
            1.0, 0.2, -0.3, 0.8, 0.1, 0.0, -0.5, 0.6, -0.6, 0.9, -0.2, 0.4,
        ];
        let q2: Vec<f64> = q.iter().map(|x| -0.5 * x + 0.1).collect();
        let s = ScoreMatrix::from_columns(vec![q, q2]).unwrap();
        let g = GammaBound::new(1.8).unwrap();
        let prob = ZetaProblem::new(&d, &s, &[0, 1], 0.05, g).unwrap();
        let res = minimax_zeta(&prob, &MinimaxTolerances::default()).unwrap();
        assert!(membership_check(&d, &res.argmin_rho, g, MEMBERSHIP_TOL).unwrap());
        assert!(res.value - res.lower_bound <= 1e-7);
    }

    #[test]
    fn decide_agrees_with_full_solve() {
        let (d, s) = fixture();
        for gv in [1.0, 1.1, 1.4, 2.0] {
            let g = GammaBound::new(gv).unwrap();
            for c in [0.01, 0.05, 0.3] {
                let prob = ZetaProblem::new(&d, &s, &[0, 1], c, g).unwrap();
                let tol = MinimaxTolerances::default();
                let full = minimax_zeta(&prob, &tol).unwrap();
                let dec = decide(&prob, &tol, &[]).unwrap();
                assert_eq!(dec.feasible, full.certificate == Certificate::Feasible);
            }
        }
    }
}
