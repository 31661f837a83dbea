//! Noisy-label cleaning for point cloud semantic segmentation.
//!
//! The crate provides synthetic scenes and label-noise models, density
//! clustering, the prediction-history cleaning loop (PNAL) with its
//! boundary-restricted variant, a small trainable per-point predictor, and
//! the evaluation metrics used to compare runs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod block;
pub mod boundary;
pub mod cleaning;
pub mod cluster;
pub mod error;
pub mod index;
pub mod metrics;
pub mod noise;
pub mod scene;
pub mod seed;
pub mod synth;
pub mod trainer;

pub use boundary::{boundary_cleaning_epoch, extract_boundary, progressive_loop, BoundaryBand};
pub use cleaning::{clean_epoch, correct_labels, CleaningState, Correction, PredictionHistory, ReliableSet};
pub use cluster::{dbscan, ClusterSet, Clusterer, Dbscan};
pub use error::{Error, Result};
pub use index::{build_index, NeighborTable, SpatialIndex};
pub use metrics::MetricReport;
pub use noise::{NoiseKind, NoiseReport, NoiseSpec, NoisyLabels};
pub use scene::{Label, Scene};
pub use synth::{generate_dataset, generate_scene, SynthSpec};
pub use trainer::{run_pipeline, EpochRecord, Phase, Pipeline, Predictor, TrainConfig, TrainingSet};
