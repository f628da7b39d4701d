//! Worst-case local test for an intersection of outcomes: minimize the
//! largest zeta statistic over the sensitivity polytope.
//!
//!     cargo run --release --example minimax_local_test

use fdpsens::minimax::{minimax_zeta, MinimaxTolerances, ZetaProblem};
use fdpsens::sim::{gen_matched_pairs, ExperimentSpec};
use fdpsens::{build_scores, GammaBound, Statistic};

fn main() -> fdpsens::Result<()> {
    let spec = ExperimentSpec {
        pairs: 300,
        ..Default::default()
    };
    let data = gen_matched_pairs(&spec, 1)?;
    let scores = build_scores(&data.design, &data.outcomes, &[Statistic::Auto])?;
    let tol = MinimaxTolerances::default();
    // level of the intersection test for |J| = 2 inside a closed procedure at alpha = 0.05
    let level = 0.05 / 2.0;
    for gamma in [1.0, 1.25, 1.5, 2.0] {
        for outcomes in [vec![0], vec![0, 1], vec![0, 1, 2, 3]] {
            let problem = ZetaProblem::new(
                &data.design,
                &scores,
                &outcomes,
                level,
                GammaBound::new(gamma)?,
            )?;
            let res = minimax_zeta(&problem, &tol)?;
            println!(
                "Gamma {gamma:<5} J = {outcomes:?}: min max zeta in [{:.4e}, {:.4e}], {:?} after {} iterations",
                res.lower_bound, res.value, res.certificate, res.iterations
            );
        }
    }
    Ok(())
}
