//! Generalized sensitivity values Gamma*(R, r) and the ranking of all
//! subsets of one size.
//!
//!     cargo run --release --example generalized_sensitivity

use fdpsens::closed::{gsv, naive_gsv, subset_search, SubsetSearchConfig};
use fdpsens::sim::{gen_matched_pairs, ExperimentSpec};
use fdpsens::worst_case::GAMMA_TOL;
use fdpsens::{build_scores, Statistic};

fn main() -> fdpsens::Result<()> {
    let spec = ExperimentSpec {
        outcomes: 5,
        ..Default::default()
    };
    let data = gen_matched_pairs(&spec, 11)?;
    let scores = build_scores(&data.design, &data.outcomes, &[Statistic::Auto])?;
    let subset = [0, 2, 4];
    for r in 0..subset.len() {
        let exact = gsv(&data.design, &scores, &subset, r, 0.05, 10.0, GAMMA_TOL)?;
        let naive = naive_gsv(&data.design, &scores, &subset, r, 0.05, 10.0, GAMMA_TOL)?;
        println!(
            "Gamma*({subset:?}, {r}) = {:.3} in [{:.4}, {:.4}]; naive {:.3}",
            exact.gamma, exact.lower, exact.upper, naive.gamma
        );
    }

    let ranked = subset_search(&data.design, &scores, 2, 1, &SubsetSearchConfig::default())?;
    println!("pairs of outcomes ranked by Gamma*(R, 1):");
    for rs in ranked.iter().take(5) {
        println!("  {:?}  {:.3}", rs.subset, rs.gsv.gamma);
    }
    Ok(())
}
