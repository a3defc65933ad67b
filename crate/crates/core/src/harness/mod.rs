//! Nested cross-validation, two-stage training and experiment reports.

pub mod cv;
pub mod data;
pub mod metrics;
pub mod report;
pub mod train;

pub use cv::{derive_seed, make_cv_plan, CvPlan};
pub use data::{Dataset, Dimension, Sample, SegmentConfig};
pub use metrics::accuracy_and_f1;
pub use report::{EpochRecord, ExperimentReport, FoldResult, Summary};
pub use train::{evaluate, run_ablation, train_two_stage, AblationConfig, TrainSchedule};
