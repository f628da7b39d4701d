//! Distribution of v*([K]) across replicates for the exact and naive
//! procedures.
//!
//!     cargo run --release --example table2_simulation [replicates]

use fdpsens::sim::{run_table2, ExperimentSpec};

fn main() -> fdpsens::Result<()> {
    let replicates = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(100);
    let spec = ExperimentSpec {
        replicates,
        ..Default::default()
    };
    let res = run_table2(&spec)?;
    println!(
        "B = {}, K = {}, {} replicates",
        spec.pairs, spec.outcomes, replicates
    );
    for row in &res.rows {
        let props: Vec<String> = row.proportions.iter().map(|p| format!("{p:.3}")).collect();
        println!(
            "Gamma {:<5} {:<6?} {}",
            row.gamma,
            row.method,
            props.join(" ")
        );
    }
    Ok(())
}
