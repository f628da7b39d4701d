#![allow(dead_code)]

use fdpsens::design::MatchedDesign;
use fdpsens::ScoreMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Pair scores `(d/2, -d/2)` with the first unit treated.
pub fn pair_scores(diffs: &[f64]) -> Vec<f64> {
    diffs.iter().flat_map(|&d| [d / 2.0, -d / 2.0]).collect()
}

pub fn pairs_instance(columns: &[Vec<f64>]) -> (MatchedDesign, ScoreMatrix) {
    let b = columns[0].len();
    let design = MatchedDesign::pairs(&vec![true; b]).unwrap();
    let scores =
        ScoreMatrix::from_columns(columns.iter().map(|d| pair_scores(d)).collect()).unwrap();
    (design, scores)
}

/// `b` pairs, `k` outcomes; outcome `j` has mean difference `effects[j]`
/// plus standard normal noise.
pub fn random_pairs(seed: u64, b: usize, effects: &[f64]) -> (MatchedDesign, ScoreMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = effects
        .iter()
        .map(|&e| {
            (0..b)
                .map(|_| e + rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    pairs_instance(&cols)
}

/// Pinned three-outcome study: outcome 1 strongly affected; outcomes 2 and 3
/// have opposing pair-level patterns, so no single assignment explains both
/// away at Gamma = 2 although each can be explained away on its own.
pub fn non_consonant_fixture() -> (MatchedDesign, ScoreMatrix) {
    let d0 = [
        1.31, 0.61, 2.58, 1.56, -0.59, 0.96, 0.29, 3.06, 3.05, 0.63, 2.18, 1.29, 0.53, 1.64, 1.31,
        2.16, 0.61, 3.38, 0.5, 0.33, 0.72, 2.7, 0.93, -2.02, 0.66, 1.75, 2.16, 2.47, 0.45, 2.13,
    ];
    let d1 = [
        2.1, 0.18, 1.06, 1.24, 1.92, -0.44, 0.41, 1.1, 0.72, -0.19, -0.3, -0.61, 0.07, -0.01,
        -0.34, 0.27, 0.25, 1.29, 0.05, 0.45, 0.67, 0.9, -0.49, -0.12, 0.43, -0.66, 0.64, 1.44,
        1.99, 1.34,
    ];
    let d2 = [
        -0.75, 0.91, 0.41, -0.29, -0.66, 1.47, 0.63, -0.05, 0.58, 1.47, 1.46, 1.86, 1.16, 1.41,
        1.8, 0.54, 0.6, -0.46, 0.9, 0.86, 0.52, 0.45, 1.61, 1.12, 0.43, 1.63, 0.57, -0.68, -0.6,
        -0.31,
    ];
    pairs_instance(&[d0.to_vec(), d1.to_vec(), d2.to_vec()])
}
