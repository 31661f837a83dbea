//! Two-stage training around a pluggable per-point predictor.

mod config;
mod features;
mod loss;
mod predictor;
mod run;

pub use config::{auto_warmup, ClusterSource, Phase, Pipeline, TrainConfig, Warmup};
pub use features::{PointFeatures, COLOR_NEIGHBORS, FEATURE_DIM};
pub use loss::{cross_entropy, cross_entropy_dense, PROB_FLOOR};
pub use predictor::{default_predictor, Features, LinearSoftmax, Predictor};
pub use run::{
    evaluate_scenes, run_phase, run_phase_observed, run_pipeline, run_pnal, run_warmup, EpochRecord, Observer,
    PipelineOutcome, PreparedScene, TrainingSet,
};
