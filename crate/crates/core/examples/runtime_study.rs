//! Wall time of branch-and-bound against enumeration of every intersection.
//!
//!     cargo run --release --example runtime_study

use fdpsens::sim::{run_runtime_study, runtime_settings, ExperimentSpec};

fn main() -> fdpsens::Result<()> {
    let spec = ExperimentSpec {
        outcomes: 8,
        replicates: 2,
        ..Default::default()
    };
    for row in run_runtime_study(&spec, &runtime_settings())? {
        println!(
            "setting {:>2} ({}, {}, Gamma {}): {:.4}s vs {:.4}s, median speedup {:.1}x, agree {}",
            row.setting,
            row.tau,
            row.sigma,
            row.gamma,
            row.mean_v_star_secs,
            row.mean_oracle_secs,
            row.median_speedup,
            row.agree
        );
    }
    Ok(())
}
