//! Experiment orchestration: synthetic domains, staged training, metrics and
//! reports.

mod config;
mod domain;
mod metrics;
mod report;
mod run;
mod train;

pub use config::{DecodeMode, Method, RunConfig, SCHEMA_VERSION};
pub use domain::{default_domains, generate_domain, prototypes, DomainData, DomainSpec};
pub use metrics::{corpus_wer, edit_distance, relative_wer_reduction, word_error_rate};
pub use report::{
    aggregate_summary, curve_csv, matrix_csv, median, merge_csv, summary_csv, write_reports, RunReport, CURVE_COLUMNS,
    MATRIX_COLUMNS, SUMMARY_COLUMNS,
};
pub use run::{
    run_memory_sweep, run_multitask, run_multitask_on, run_seeds, run_sequential, run_sequential_on, Benchmark,
    SweepPoint, SweepReport, TaskBalancedSampler,
};
pub use train::{Access, AccessKind, AccessLog, CurvePoint, Evaluator, MethodState, TrainStats, Trainer};
