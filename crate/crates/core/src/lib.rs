//! Worst-case model examination.
//!
//! A target maps bounded scenarios to losses; an examiner searches the
//! scenario space sequentially for the scenarios where that loss is
//! highest (or lowest, in strength mode). Two examiners are provided: an
//! LSTM sampling policy trained with REINFORCE ([`rl`]) and GP-UCB Bayesian
//! optimization ([`bo`]). [`targets`] supplies analytic landscapes and a
//! render-and-classify shape suite to examine.

pub mod bo;
pub mod error;
pub mod exam;
pub mod numerics;
pub mod rl;
pub mod space;
pub mod targets;

pub use error::{Error, Result};
pub use exam::{
    examiner_metric, read_traces_jsonl, run_examination, standard_metric, Directed, Direction,
    ExamTrace, Examiner, MetricMode, RandomExaminer, TargetQuery, TraceLine, TraceStep,
};
pub use space::{Factor, Scenario, ScenarioSpace};
