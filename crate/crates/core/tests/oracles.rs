//! Library results checked against brute-force computations.

mod common;

use common::{non_consonant_fixture, pair_scores, random_pairs};
use fdpsens::closed::{
    enumerative_oracle, enumerative_oracle_v, gsv, naive_v, screen, v_known_rho, v_star,
    ClosedTestConfig, Verdict,
};
use fdpsens::design::MatchedDesign;
use fdpsens::minimax::{minimax_zeta, MinimaxTolerances, ZetaProblem};
use fdpsens::model::{exact_tail_probability, moments, uniform_assignment, Side};
use fdpsens::stats::{chi2_1_quantile_upper, chi2_1_upper_tail};
use fdpsens::{
    single_sensitivity_value, worst_case_single_pvalue, AssignmentProbabilities, GammaBound,
    ScoreMatrix,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Worst-case deviate `(T - mu)^2 / sigma^2` minimized by coordinate descent
/// on a 200-point grid per pair, from the center and from a spread of vertices.
fn grid_min_deviate(diffs: &[f64], gamma: f64) -> f64 {
    let b = diffs.len();
    let lo = 1.0 / (1.0 + gamma);
    let hi = gamma / (1.0 + gamma);
    let grid: Vec<f64> = (0..200)
        .map(|j| lo + (hi - lo) * j as f64 / 199.0)
        .collect();
    let t: f64 = diffs.iter().map(|d| d / 2.0).sum();
    // first unit scores d/2, second -d/2: mu_i = d (p - 1/2), var_i = d^2 p (1 - p)
    let dev = |p: &[f64]| {
        let mu: f64 = diffs.iter().zip(p).map(|(d, p)| d * (p - 0.5)).sum();
        let v: f64 = diffs
            .iter()
            .zip(p)
            .map(|(d, p)| d * d * p * (1.0 - p))
            .sum();
        (t - mu).powi(2) / v
    };
    let mut starts = vec![vec![grid[100]; b]];
    for mask in (0u32..(1 << b)).step_by(37) {
        starts.push(
            (0..b)
                .map(|i| if mask >> i & 1 == 1 { hi } else { lo })
                .collect(),
        );
    }
    let mut best = f64::INFINITY;
    for mut p in starts {
        let mut cur = dev(&p);
        loop {
            let before = cur;
            for i in 0..b {
                for &g in &grid {
                    let old = p[i];
                    p[i] = g;
                    let v = dev(&p);
                    if v < cur {
                        cur = v;
                    } else {
                        p[i] = old;
                    }
                }
            }
            if before - cur < 1e-14 {
                break;
            }
        }
        best = best.min(cur);
    }
    best
}

#[test]
fn worst_case_pvalue_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..4 {
        let diffs: Vec<f64> = (0..8).map(|_| rng.random_range(-0.5..1.5)).collect();
        let design = MatchedDesign::pairs(&[true; 8]).unwrap();
        let scores = ScoreMatrix::from_columns(vec![pair_scores(&diffs)]).unwrap();
        for gamma in [1.2, 1.5, 2.0] {
            let ours =
                worst_case_single_pvalue(&design, &scores, 0, GammaBound::new(gamma).unwrap())
                    .unwrap()
                    .pvalue;
            let grid = chi2_1_upper_tail(grid_min_deviate(&diffs, gamma));
            assert!(
                ours >= grid - 1e-12,
                "grid point beats the exact maximum: {ours} < {grid}"
            );
            assert!(
                (ours - grid).abs() <= 1e-3,
                "Gamma {gamma}: {ours} vs grid {grid}"
            );
        }
    }
}

#[test]
fn minimax_matches_lattice_search() {
    // six pairs made of three repeated pair types: by symmetry and convexity
    // the optimum gives repeated pairs equal probabilities, so a 3-d lattice suffices
    let types = [[0.9, 0.2, -0.4], [0.6, -0.5, 0.8], [1.1, 0.7, 0.3]];
    let cols: Vec<Vec<f64>> = (0..3)
        .map(|k| {
            let d: Vec<f64> = (0..6).map(|i| types[i % 3][k]).collect();
            pair_scores(&d)
        })
        .collect();
    let design = MatchedDesign::pairs(&[true; 6]).unwrap();
    let scores = ScoreMatrix::from_columns(cols).unwrap();
    let gamma = 1.5;
    let c = 0.05;
    let kappa = chi2_1_quantile_upper(c);
    // T_k: two copies of each pair type, each contributing d/2
    let t: Vec<f64> = (0..3)
        .map(|k| types.iter().map(|ty| ty[k]).sum::<f64>())
        .collect();
    let objective = |p: [f64; 3]| -> f64 {
        (0..3)
            .map(|k| {
                let mut mu = 0.0;
                let mut var = 0.0;
                for (ty, &pi) in types.iter().zip(&p) {
                    let d = ty[k];
                    mu += 2.0 * d * (pi - 0.5);
                    var += 2.0 * d * d * pi * (1.0 - pi);
                }
                (t[k] - mu).powi(2) - kappa * var
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let lo = 1.0 / (1.0 + gamma);
    let hi = gamma / (1.0 + gamma);
    let search = |center: [f64; 3], half: f64, n: usize| -> ([f64; 3], f64) {
        let mut best = (center, f64::INFINITY);
        let axis =
            |c: f64, j: usize| (c - half + 2.0 * half * j as f64 / (n - 1) as f64).clamp(lo, hi);
        for a in 0..n {
            for b in 0..n {
                for d in 0..n {
                    let p = [axis(center[0], a), axis(center[1], b), axis(center[2], d)];
                    let v = objective(p);
                    if v < best.1 {
                        best = (p, v);
                    }
                }
            }
        }
        best
    };
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let (mut p, mut v) = search([mid; 3], half, 200);
    let mut h = 2.0 * half / 199.0;
    for _ in 0..3 {
        (p, v) = search(p, h, 41);
        h /= 20.0;
    }
    let problem = ZetaProblem::new(
        &design,
        &scores,
        &[0, 1, 2],
        c,
        GammaBound::new(gamma).unwrap(),
    )
    .unwrap();
    let res = minimax_zeta(&problem, &MinimaxTolerances::default()).unwrap();
    assert!(
        res.value <= v + 1e-6,
        "lattice point beats the solver: {} > {v}",
        res.value
    );
    assert!(
        (res.value - v).abs() <= 1e-3,
        "solver {} vs lattice {v} at {p:?}",
        res.value
    );
}

#[test]
fn moments_match_enumeration_of_omega() {
    let design = MatchedDesign::with_sizes(&[2, 3, 2, 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let q: Vec<f64> = (0..design.num_units())
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let strata: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            let w: Vec<f64> = (0..design.stratum_size(i))
                .map(|_| rng.random_range(0.2..1.0))
                .collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|x| x / s).collect()
        })
        .collect();
    let rho = AssignmentProbabilities::from_strata(strata.clone());
    let scores = ScoreMatrix::from_columns(vec![q.clone()]).unwrap();
    let m = moments(&design, &scores, 0, &rho).unwrap();

    let (mut e1, mut e2) = (0.0, 0.0);
    for a in 0..2 {
        for b in 0..3 {
            for c in 0..2 {
                for d in 0..3 {
                    let pick = [a, b, c, d];
                    let mut t = 0.0;
                    let mut w = 1.0;
                    for (i, &j) in pick.iter().enumerate() {
                        t += q[design.offsets()[i] + j];
                        w *= strata[i][j];
                    }
                    e1 += w * t;
                    e2 += w * t * t;
                }
            }
        }
    }
    assert!((m.mu - e1).abs() < 1e-12);
    assert!((m.sigma2 - (e2 - e1 * e1)).abs() < 1e-12);
}

#[test]
fn exact_tail_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let diffs: Vec<f64> = (0..6).map(|_| rng.random_range(0.1..1.0)).collect();
    let design = MatchedDesign::pairs(&[true; 6]).unwrap();
    let q = pair_scores(&diffs);
    let scores = ScoreMatrix::from_columns(vec![q.clone()]).unwrap();
    let probs: Vec<f64> = (0..6).map(|_| rng.random_range(0.35..0.65)).collect();
    let rho =
        AssignmentProbabilities::from_strata(probs.iter().map(|&p| vec![p, 1.0 - p]).collect());
    let a = 0.3 * diffs.iter().sum::<f64>() / 2.0;
    let exact = exact_tail_probability(&design, &scores, 0, &rho, a, Side::Upper).unwrap();
    let n = 40_000;
    let hits = (0..n)
        .filter(|_| {
            let t: f64 = (0..6)
                .map(|i| {
                    if rng.random_bool(probs[i]) {
                        q[2 * i]
                    } else {
                        q[2 * i + 1]
                    }
                })
                .sum();
            t >= a
        })
        .count();
    let mc = hits as f64 / n as f64;
    let se = (exact * (1.0 - exact) / n as f64).sqrt();
    assert!(
        (mc - exact).abs() <= 3.0 * se,
        "exact {exact}, Monte Carlo {mc} (se {se})"
    );
}

#[test]
fn holm_is_closed_testing_at_gamma_one() {
    for seed in 0..3 {
        let (d, s) = random_pairs(seed, 20, &[0.9, 0.6, 0.4, 0.2, 0.0]);
        let cfg = ClosedTestConfig::new(0.05, 5, GammaBound::ONE).unwrap();
        let u = uniform_assignment(&d);
        for r in [vec![0, 1, 2, 3, 4], vec![1, 3], vec![2]] {
            let holm = v_known_rho(&d, &s, &r, &u, 0.05).unwrap();
            assert_eq!(holm, enumerative_oracle_v(&d, &s, &r, &cfg).unwrap());
            assert_eq!(holm, v_star(&d, &s, &r, &cfg).unwrap().0);
            assert_eq!(holm, naive_v(&d, &s, &r, &cfg).unwrap());
        }
    }
}

#[test]
fn non_consonant_rejection_pattern() {
    let (d, s) = non_consonant_fixture();
    let cfg = ClosedTestConfig::new(0.05, 3, GammaBound::new(2.0).unwrap()).unwrap();
    let oracle = enumerative_oracle(&d, &s, &[1, 2], &cfg).unwrap();
    let rej = &oracle.closed_rejections;
    // bit k of the mask is outcome k
    for mask in [0b001, 0b011, 0b101, 0b111, 0b110] {
        assert!(rej[mask], "intersection {mask:03b} should be rejected");
    }
    assert!(!rej[0b010] && !rej[0b100]);
    assert_eq!(v_star(&d, &s, &[1, 2], &cfg).unwrap().0, 1);
    assert_eq!(naive_v(&d, &s, &[1, 2], &cfg).unwrap(), 2);
    let verdict = screen(&d, &s, &cfg).unwrap();
    assert_eq!(verdict.decisions[0], Verdict::Reject);
    assert!(verdict.worst_case_p[1] > 0.05 / 3.0 && verdict.worst_case_p[2] > 0.05 / 3.0);
}

#[test]
fn screening_strong_signal_rejects_everything() {
    let (d, s) = random_pairs(1, 200, &[1.0, 1.2, 0.8]);
    let cfg = ClosedTestConfig::new(0.05, 3, GammaBound::ONE).unwrap();
    let verdict = screen(&d, &s, &cfg).unwrap();
    for (k, p) in verdict.worst_case_p.iter().enumerate() {
        assert!(*p <= 0.05 / 3.0, "outcome {k}: p = {p}");
    }
    assert!(verdict.decisions.iter().all(|v| *v == Verdict::Reject));
}

#[test]
fn screening_band_leaves_one_outcome_undecided() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let strong: Vec<f64> = (0..30).map(|_| 1.0 + rng.random_range(-0.5..0.5)).collect();
    let mut weak: Vec<f64> = (0..30).map(|_| rng.random_range(-0.4..1.2)).collect();
    let design = MatchedDesign::pairs(&[true; 30]).unwrap();
    let cfg = ClosedTestConfig::new(0.05, 2, GammaBound::new(1.2).unwrap()).unwrap();
    let p_at = |w: &[f64]| {
        let s = ScoreMatrix::from_columns(vec![pair_scores(&strong), pair_scores(w)]).unwrap();
        worst_case_single_pvalue(&design, &s, 1, cfg.gamma)
            .unwrap()
            .pvalue
    };
    // tune the last pair of the weak outcome until p* sits inside (alpha/2, alpha]
    let x = (0..4000)
        .map(|j| -20.0 + 0.01 * j as f64)
        .find(|&x| {
            weak[29] = x;
            let p = p_at(&weak);
            p > 0.03 && p <= 0.045
        })
        .expect("a value in the band");
    weak[29] = x;
    let s = ScoreMatrix::from_columns(vec![pair_scores(&strong), pair_scores(&weak)]).unwrap();
    let verdict = screen(&design, &s, &cfg).unwrap();
    assert_eq!(verdict.decisions, vec![Verdict::Reject, Verdict::Undecided]);
}

#[test]
fn singleton_gsv_is_the_sensitivity_value() {
    let (d, s) = random_pairs(4, 100, &[0.5]);
    let tol = 1e-3;
    let a = gsv(&d, &s, &[0], 0, 0.05, 10.0, tol).unwrap();
    let b = single_sensitivity_value(&d, &s, 0, 0.05, 10.0, tol).unwrap();
    assert!((a.gamma - b.gamma).abs() <= 2.0 * tol, "{a:?} vs {b:?}");
}

#[test]
fn strong_positive_effect_is_robust() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let diffs: Vec<f64> = (0..100).map(|_| 0.3 + rng.random::<f64>()).collect();
    let design = MatchedDesign::pairs(&[true; 100]).unwrap();
    let s = ScoreMatrix::from_columns(vec![pair_scores(&diffs)]).unwrap();
    let sv = single_sensitivity_value(&design, &s, 0, 0.05, 10.0, 1e-3).unwrap();
    assert!(sv.gamma > 1.5, "Gamma* = {}", sv.gamma);
}

#[test]
fn sensitivity_value_brackets_the_changepoint() {
    let (design, s) = random_pairs(9, 100, &[0.5]);
    let sv = single_sensitivity_value(&design, &s, 0, 0.05, 10.0, 1e-3).unwrap();
    assert!(!sv.saturated && sv.gamma > 1.0);
    let p = |g: f64| {
        worst_case_single_pvalue(&design, &s, 0, GammaBound::new(g).unwrap())
            .unwrap()
            .pvalue
    };
    assert!(p(sv.lower) <= 0.05);
    assert!(p(sv.upper) > 0.05);
    assert!(sv.upper - sv.lower <= 1e-3);
}

#[test]
fn v_star_matches_oracle_on_mixed_fixtures() {
    for seed in 0..4 {
        let (d, s) = random_pairs(100 + seed, 30, &[1.0, 0.0, 0.5, 0.0, 0.2, 0.8]);
        for g in [1.0, 1.3] {
            let cfg = ClosedTestConfig::new(0.05, 6, GammaBound::new(g).unwrap()).unwrap();
            let all: Vec<usize> = (0..6).collect();
            assert_eq!(
                v_star(&d, &s, &all, &cfg).unwrap().0,
                enumerative_oracle_v(&d, &s, &all, &cfg).unwrap(),
                "seed {seed} Gamma {g}"
            );
        }
    }
}
