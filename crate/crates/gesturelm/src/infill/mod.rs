//! Marker infilling: task construction, fine-tuning, evaluation, and the
//! multi-seed experiment runner.

mod eval;
mod experiment;
mod finetune;
mod labels;
mod model;
mod task;

pub use eval::{
    aggregate, evaluate_predictions, mean_std, metrics_from_confusion, relative_confusion,
    Aggregate, EvalReport, RelativeConfusion,
};
pub use experiment::{
    prepare_pipeline, prepare_pipeline_with, run_experiment, split_by_counts,
    synth_config_for_task, ExperimentConfig, ExperimentOutcome, GestureArtifacts, Pipeline,
    PipelineSources,
};
pub use finetune::{evaluate_model, finetune, FinetuneConfig, FinetuneLog};
pub use labels::{LabelSet, DISCOURSE_MARKERS, QUANTIFIER_MARKERS, STANCE_MARKERS};
pub use model::{AdversarialMode, GesturePath, InfillModel, Variant};
pub use task::{
    build_infill_example, find_markers, frequency_filter, predict_from_logits, InfillExample,
    Occurrence,
};
