//! VQA accuracy, per-language and per-script reports, multi-run aggregation.

mod metric;
mod normalize;
mod report;

use thiserror::Error;

pub use metric::{accuracy_for_matches, count_matches, vqa_accuracy, vqa_accuracy_exact, vqa_accuracy_in, ANNOTATORS};
pub use normalize::normalize_answer;
pub use report::{
    aggregate_runs, emit_plot_data, evaluate_model, evaluate_report, load_report, plot_rows, read_plot_data,
    save_report, Category, CellStat, EvalReport, ExampleScore, PlotRow, PLOT_HEADER, REPORT_VERSION,
};

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("validation: {0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o: {0}")]
    Io(String),
}
