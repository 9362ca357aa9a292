//! Metrics, evaluation runs, experiments and plots.

pub mod baseline;
pub mod critic;
pub mod experiment;
pub mod metrics;
pub mod plot;
pub mod predictions;
pub mod result;

pub use baseline::constant_velocity;
pub use critic::{critic_report, evaluate_critic, CriticReport};
pub use experiment::{
    evaluate_model, run_ablation, run_experiment, write_evaluation, Ablation, DataSource, ExperimentConfig,
    ExperimentOutcome, SplitRule,
};
pub use metrics::{ade, auc, diversity, fde, made, mfde};
pub use plot::{attention_svg, trajectory_svg, write_plots};
pub use predictions::PredictionFile;
pub use result::{
    aggregate, evaluate_predictions, per_video, save_result_csv, scene_metrics, write_result_csv, Aggregate,
    EvalResult, SceneMetrics, RESULT_HEADER,
};
