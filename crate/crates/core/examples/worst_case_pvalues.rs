//! Load a matched design, build scores and report per-outcome worst-case
//! p-values and sensitivity values.
//!
//!     cargo run --release --example worst_case_pvalues [design.csv]

use fdpsens::design::{load_design_csv, read_design_csv};
use fdpsens::sim::{gen_matched_pairs, ExperimentSpec};
use fdpsens::worst_case::GAMMA_TOL;
use fdpsens::{
    build_scores, single_sensitivity_value, worst_case_single_pvalue, GammaBound, Statistic,
};

fn main() -> fdpsens::Result<()> {
    let (design, outcomes) = match std::env::args().nth(1) {
        Some(path) => load_design_csv(path)?,
        None => {
            // a synthetic study written to CSV and read back
            let data = gen_matched_pairs(&ExperimentSpec::default(), 0)?;
            let mut buf = Vec::new();
            fdpsens::design::write_design_csv(&mut buf, &data.design, &data.outcomes)?;
            read_design_csv(buf.as_slice())?
        }
    };
    let scores = build_scores(&design, &outcomes, &[Statistic::Auto])?;
    println!(
        "{} strata, {} outcomes",
        design.num_strata(),
        outcomes.num_outcomes()
    );
    println!(
        "{:>8} {:>8} {:>10} {:>10} {:>10}",
        "outcome", "stat", "p(G=1)", "p(G=1.5)", "Gamma*"
    );
    for (k, name) in outcomes.names().iter().enumerate() {
        let p1 = worst_case_single_pvalue(&design, &scores, k, GammaBound::ONE)?;
        let p15 = worst_case_single_pvalue(&design, &scores, k, GammaBound::new(1.5)?)?;
        let sv = single_sensitivity_value(&design, &scores, k, 0.05, 10.0, GAMMA_TOL)?;
        println!(
            "{name:>8} {:>8} {:>10.2e} {:>10.2e} {:>10.3}",
            scores.labels()[k],
            p1.pvalue,
            p15.pvalue,
            sv.gamma
        );
    }
    Ok(())
}
