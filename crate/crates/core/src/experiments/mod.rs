//! End-to-end experiment runs, ablations and factor export.

mod ablations;
mod config;
mod factors;
mod run;
mod stream;

pub use ablations::{eval_mismatch, eval_shuffle, MismatchReport, ShuffleReport, DEFAULT_SHUFFLES};
pub use config::{ArchSpec, DatasetSpec, ExperimentConfig, ModelKind};
pub use factors::{export_domain_factors, export_image_factors, factor_header};
pub use run::{
    checkpoint_name, ensure_writable, evaluate, load_model, metrics_for, route_groups, run_experiment, save_model,
    DomainAccuracy, EvalSet, Evaluation, MetricsRecord, TrainedModel, Workbench,
};
pub use stream::{domain_stream, FrameStream};
