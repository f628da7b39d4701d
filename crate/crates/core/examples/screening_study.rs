//! How often singleton screening leaves some outcome undecided, so that the
//! branch-and-bound search is needed.
//!
//!     cargo run --release --example screening_study

use fdpsens::sim::{run_screening_study, ExperimentSpec, TauKind};

fn main() -> fdpsens::Result<()> {
    let spec = ExperimentSpec {
        outcomes: 10,
        tau: TauKind::half(),
        gamma_grid: vec![1.25, 1.5, 2.0],
        replicates: 50,
        ..Default::default()
    };
    for row in run_screening_study(&spec, &[500, 1000, 2000])? {
        println!(
            "Gamma {:<5} B {:<5} undecided in {:.2} of datasets, {:.3} of outcomes on average",
            row.gamma, row.pairs, row.called_at_least_once, row.average_frequency
        );
    }
    Ok(())
}
