//! Simultaneous sensitivity analysis for the false discovery proportion in
//! matched observational studies with many outcomes.

pub mod cli;
pub mod closed;
pub mod design;
pub mod error;
pub mod minimax;
pub mod model;
pub mod report;
pub mod scores;
pub mod sim;
pub mod stats;
pub mod worst_case;

pub use design::{load_design_csv, MatchedDesign, OutcomeKind, OutcomeMatrix};
pub use error::{Error, Result};
pub use model::{AssignmentProbabilities, GammaBound, MomentPair};
pub use report::{FdpReport, SCHEMA_VERSION};
pub use scores::{build_scores, ScoreMatrix, Statistic};
pub use worst_case::{
    single_sensitivity_value, worst_case_single_pvalue, SensitivityValue, WorstCasePValue,
};
