//! Decision parsing, bias scoring, experiment runs, error taxonomy and
//! report emission.

pub mod decision;
pub mod experiment;
pub mod report;
pub mod score;
pub mod taxonomy;

pub use decision::{parse_decision, Decision};
pub use experiment::{
    paired_arms, run_experiment, score_records, ExperimentError, ExperimentResult, ExperimentSettings, Failure,
    IterationCurve, IterationPoint,
};
pub use report::{render_table, write_outputs, RunReport};
pub use score::{bias_score, exact_score, ratio_to_f64, Arm, BiasScoreReport, Condition, IterationOutcome, ScoreError, TrialRecord};
pub use taxonomy::{classify_error, ErrorCategory};
