//! Experiment configuration, orchestration and reports.

mod config;
mod experiment;
mod gradcheck;
mod report;

pub use config::{
    ArchSection, DataSection, ExperimentConfig, ExperimentSection, MethodPlan, MetricsSection, ScenarioKind,
    ScenarioSection, TrainSection,
};
pub use experiment::{load_pool, prepare, run_experiment, train_pair, CellError, Prepared, Row, RunRecord, SeedRecord};
pub use gradcheck::{circuit_gradient_gap, gradcheck, model_gradient_error, Check, GradcheckReport, CIRCUIT_TOL, MODEL_TOL};
pub use report::{emit_report, to_csv, to_json, ReportFormat, CSV_COLUMNS};
