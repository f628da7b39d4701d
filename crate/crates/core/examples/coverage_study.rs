//! Simultaneous coverage of the FDP sensitivity sets over a family of
//! subsets, with data drawn under no bias and under a hidden bias.
//!
//!     cargo run --release --example coverage_study

use fdpsens::sim::{
    default_subset_family, run_coverage_study, selector_confounding, ExperimentSpec, TauKind,
};

fn main() -> fdpsens::Result<()> {
    let spec = ExperimentSpec {
        tau: TauKind::half(),
        replicates: 200,
        ..Default::default()
    };
    let family = default_subset_family(spec.outcomes);
    for gamma in [1.0, 1.5] {
        let res = run_coverage_study(&spec, &family, gamma, None)?;
        println!(
            "no bias, Gamma {gamma}: simultaneous coverage {:.3}",
            res.simultaneous
        );
    }
    let confound = selector_confounding();
    let res = run_coverage_study(&spec, &family, 1.5, Some(&confound))?;
    println!(
        "hidden bias, Gamma 1.5: simultaneous coverage {:.3}",
        res.simultaneous
    );
    Ok(())
}
