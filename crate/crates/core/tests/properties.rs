//! Invariants over random instances.

mod common;

use common::{pair_scores, random_pairs};
use fdpsens::closed::{enumerative_oracle_v, gsv, naive_v, screen, v_star, ClosedTestConfig};
use fdpsens::design::MatchedDesign;
use fdpsens::minimax::{minimax_zeta, zeta, Certificate, MinimaxTolerances, ZetaProblem};
use fdpsens::model::{membership_check, vertex_assignment};
use fdpsens::{worst_case_single_pvalue, AssignmentProbabilities, GammaBound, ScoreMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, b: usize, k: usize) -> (MatchedDesign, ScoreMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let effects: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
    random_pairs(seed, b, &effects)
}

fn config(k: usize, gamma: f64) -> ClosedTestConfig {
    ClosedTestConfig::new(0.05, k, GammaBound::new(gamma).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn naive_count_dominates(seed in any::<u64>(), b in 6usize..30, k in 1usize..=6, gamma in 1.0f64..2.5) {
        let (d, s) = instance(seed, b, k);
        let cfg = config(k, gamma);
        let all: Vec<usize> = (0..k).collect();
        let (v, _) = v_star(&d, &s, &all, &cfg).unwrap();
        prop_assert!(naive_v(&d, &s, &all, &cfg).unwrap() >= v);
    }

    #[test]
    fn v_star_monotone_in_gamma(seed in any::<u64>(), b in 6usize..30, k in 1usize..=5) {
        let (d, s) = instance(seed, b, k);
        let all: Vec<usize> = (0..k).collect();
        let mut prev = 0;
        for g in [1.0, 1.1, 1.25, 1.5, 2.0, 3.0] {
            let (v, _) = v_star(&d, &s, &all, &config(k, g)).unwrap();
            prop_assert!(v >= prev, "v* fell from {} to {} at Gamma {}", prev, v, g);
            prev = v;
        }
    }

    #[test]
    fn v_star_monotone_in_subset(seed in any::<u64>(), b in 6usize..30, k in 2usize..=6, gamma in 1.0f64..2.0, mask in 1u32..64) {
        let (d, s) = instance(seed, b, k);
        let cfg = config(k, gamma);
        let small: Vec<usize> = (0..k).filter(|&j| mask >> j & 1 == 1).collect();
        prop_assume!(!small.is_empty());
        let big: Vec<usize> = (0..k).collect();
        let (vs, _) = v_star(&d, &s, &small, &cfg).unwrap();
        let (vb, _) = v_star(&d, &s, &big, &cfg).unwrap();
        prop_assert!(vs <= vb);
        prop_assert!(vs <= small.len());
    }

    #[test]
    fn branch_and_bound_matches_enumeration(seed in any::<u64>(), b in 6usize..25, k in 1usize..=5, gamma in 1.0f64..2.0) {
        let (d, s) = instance(seed, b, k);
        let cfg = config(k, gamma);
        let all: Vec<usize> = (0..k).collect();
        prop_assert_eq!(v_star(&d, &s, &all, &cfg).unwrap().0, enumerative_oracle_v(&d, &s, &all, &cfg).unwrap());
    }

    #[test]
    fn pool_bounds_v_star(seed in any::<u64>(), b in 6usize..30, k in 1usize..=6, gamma in 1.0f64..2.0) {
        // outcomes rejected by screening are never among the unrejected
        let (d, s) = instance(seed, b, k);
        let cfg = config(k, gamma);
        let verdict = screen(&d, &s, &cfg).unwrap();
        let all: Vec<usize> = (0..k).collect();
        let r_max = verdict.worst_case_p.iter().filter(|&&p| p > 0.05 / k as f64).count();
        let survivors = verdict.worst_case_p.iter().filter(|&&p| p > 0.05).count();
        let (v, _) = v_star(&d, &s, &all, &cfg).unwrap();
        prop_assert!(v <= r_max);
        prop_assert!(v >= survivors);
    }

    #[test]
    fn worst_case_p_monotone_in_gamma(seed in any::<u64>(), b in 4usize..40) {
        let (d, s) = instance(seed, b, 1);
        let mut prev = 0.0;
        for g in [1.0, 1.2, 1.5, 2.0, 4.0] {
            let p = worst_case_single_pvalue(&d, &s, 0, GammaBound::new(g).unwrap()).unwrap().pvalue;
            prop_assert!(p >= prev - 1e-12);
            prev = p;
        }
    }

    #[test]
    fn zeta_is_convex_in_rho(seed in any::<u64>(), b in 2usize..12, t in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let diffs: Vec<f64> = (0..b).map(|_| rng.random_range(-1.0..2.0)).collect();
        let design = MatchedDesign::pairs(&vec![true; b]).unwrap();
        let scores = ScoreMatrix::from_columns(vec![pair_scores(&diffs)]).unwrap();
        let pa: Vec<f64> = (0..b).map(|_| rng.random_range(0.2..0.8)).collect();
        let pb: Vec<f64> = (0..b).map(|_| rng.random_range(0.2..0.8)).collect();
        let mk = |p: &[f64]| AssignmentProbabilities::from_strata(p.iter().map(|&x| vec![x, 1.0 - x]).collect());
        let pm: Vec<f64> = pa.iter().zip(&pb).map(|(a, c)| t * a + (1.0 - t) * c).collect();
        let z = |p: &[f64]| zeta(&design, &scores, 0, &mk(p), 0.05).unwrap();
        let (za, zb, zm) = (z(&pa), z(&pb), z(&pm));
        prop_assert!(zm <= t * za + (1.0 - t) * zb + 1e-9 * (1.0 + za.abs() + zb.abs()));
    }

    #[test]
    fn membership_matches_direct_conditions(seed in any::<u64>(), n in 2usize..5, gamma in 1.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let design = MatchedDesign::with_sizes(&[n]).unwrap();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = w.iter().sum();
        let p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let direct = p.iter().all(|&a| p.iter().all(|&c| a <= gamma * c + 1e-12));
        let rho = AssignmentProbabilities::from_strata(vec![p]);
        prop_assert_eq!(membership_check(&design, &rho, GammaBound::new(gamma).unwrap(), 1e-12).unwrap(), direct);
    }

    #[test]
    fn minimax_bounds_are_consistent(seed in any::<u64>(), b in 4usize..20, k in 1usize..=4, gamma in 1.0f64..2.5) {
        let (d, s) = instance(seed, b, k);
        let all: Vec<usize> = (0..k).collect();
        let problem = ZetaProblem::new(&d, &s, &all, 0.05 / k as f64, GammaBound::new(gamma).unwrap()).unwrap();
        let res = minimax_zeta(&problem, &MinimaxTolerances::default()).unwrap();
        prop_assert!(res.lower_bound <= res.value + 1e-9);
        prop_assert!(membership_check(&d, &res.argmin_rho, problem.gamma(), 1e-9).unwrap());
        let at_argmin = all
            .iter()
            .map(|&j| zeta(&d, &s, j, &res.argmin_rho, 0.05 / k as f64).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!((at_argmin - res.value).abs() <= 1e-6 * (1.0 + res.value.abs()));
        match res.certificate {
            Certificate::Feasible => prop_assert!(res.lower_bound <= 1e-7),
            Certificate::Infeasible => prop_assert!(res.lower_bound > 0.0),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gsv_monotone_in_r(seed in any::<u64>(), b in 20usize..60) {
        let (d, s) = instance(seed, b, 3);
        let r_set = [0, 1, 2];
        let g: Vec<f64> = (0..3).map(|r| gsv(&d, &s, &r_set, r, 0.05, 5.0, 1e-2).unwrap().gamma).collect();
        prop_assert!(g[0] <= g[1] && g[1] <= g[2], "{:?}", g);
    }
}

#[test]
fn every_vertex_is_in_its_polytope() {
    for n in 2..=4usize {
        let design = MatchedDesign::with_sizes(&[n]).unwrap();
        for gamma in [1.0, 1.5, 3.0] {
            let g = GammaBound::new(gamma).unwrap();
            for mask in 0u32..(1 << n) {
                let u: Vec<bool> = (0..n).map(|j| mask >> j & 1 == 1).collect();
                let rho = AssignmentProbabilities::from_strata(vec![vertex_assignment(g, &u)]);
                assert!(membership_check(&design, &rho, g, 1e-12).unwrap());
            }
        }
    }
}
