use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cv::CvPlan;
use super::data::Dimension;
use super::metrics::{mean, std_dev};
use super::train::{AblationConfig, TrainSchedule};
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerTrace {
    pub inner_fold: usize,
    pub validation_trials: Vec<usize>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub test_trials: Vec<usize>,
    pub train_trials: Vec<usize>,
    pub inner_folds: Vec<Vec<usize>>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub best_inner_fold: usize,
    pub best_val_loss: f64,
    pub stage1: Vec<InnerTrace>,
    pub stage2: Vec<EpochRecord>,
    pub leakage_checked: bool,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_f1: f64,
    pub std_f1: f64,
}

impl Summary {
    pub fn of(accuracy: &[f64], f1: &[f64]) -> Self {
        Summary {
            mean_accuracy: mean(accuracy),
            std_accuracy: std_dev(accuracy),
            mean_f1: mean(f1),
            std_f1: std_dev(f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub dimension: Dimension,
    pub folds: Vec<FoldResult>,
    pub summary: Summary,
}

/// Cross-dimension averages. The two orderings share a mean but not a spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionAggregate {
    /// Per-dimension summaries, then averaged over dimensions.
    pub folds_then_dimensions: Summary,
    /// Per-fold averages over dimensions, then summarised over folds.
    pub dimensions_then_folds: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub ablation: AblationConfig,
    pub warnings: Vec<String>,
    pub master_seed: u64,
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub fold_assignments: Vec<Vec<usize>>,
    pub dimensions: Vec<DimensionReport>,
    pub emotion: Option<EmotionAggregate>,
    /// Wall-clock figures; the only part of a report that varies between
    /// runs with the same seed.
    pub timing: Timing,
}

impl ExperimentReport {
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        model: ModelConfig,
        schedule: TrainSchedule,
        ablation: AblationConfig,
        warnings: Vec<String>,
        plan: &CvPlan,
        dimensions: &[Dimension],
        folds: Vec<Vec<FoldResult>>,
        total_seconds: f64,
    ) -> Self {
        let dimensions: Vec<DimensionReport> = dimensions
            .iter()
            .zip(folds)
            .map(|(&dimension, folds)| {
                let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
                let f1: Vec<f64> = folds.iter().map(|f| f.f1).collect();
                DimensionReport { dimension, summary: Summary::of(&acc, &f1), folds }
            })
            .collect();
        let emotion = emotion_aggregate(&dimensions);
        ExperimentReport {
            model,
            schedule,
            ablation,
            warnings,
            master_seed: plan.seed,
            outer_folds: plan.outer_folds,
            inner_folds: plan.inner_folds,
            fold_assignments: plan.trial_assignments.clone(),
            dimensions,
            emotion,
            timing: Timing { total_seconds },
        }
    }

    pub fn dimension(&self, d: Dimension) -> Option<&DimensionReport> {
        self.dimensions.iter().find(|r| r.dimension == d)
    }

    /// Mean ACC over every reported dimension.
    pub fn mean_accuracy(&self) -> f64 {
        mean(&self.dimensions.iter().map(|d| d.summary.mean_accuracy).collect::<Vec<_>>())
    }

    /// The report with wall-clock figures zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        ExperimentReport { timing: Timing { total_seconds: 0.0 }, ..self.clone() }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    /// One row per (dimension, fold).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dimension,fold,seed,test_trials,train_samples,test_samples,best_inner_fold,best_val_loss,stage2_epochs,accuracy,f1\n");
        for d in &self.dimensions {
            for f in &d.folds {
                let trials: Vec<String> = f.test_trials.iter().map(usize::to_string).collect();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    d.dimension.name(),
                    f.fold,
                    f.seed,
                    trials.join(" "),
                    f.train_samples,
                    f.test_samples,
                    f.best_inner_fold,
                    f.best_val_loss,
                    f.stage2.len(),
                    f.accuracy,
                    f.f1
                );
            }
        }
        out
    }
}

fn emotion_aggregate(dims: &[DimensionReport]) -> Option<EmotionAggregate> {
    if dims.len() < 2 {
        return None;
    }
    let folds = dims[0].folds.len();
    if dims.iter().any(|d| d.folds.len() != folds) {
        return None;
    }
    let avg = |f: fn(&Summary) -> f64| mean(&dims.iter().map(|d| f(&d.summary)).collect::<Vec<_>>());
    let folds_then_dimensions = Summary {
        mean_accuracy: avg(|s| s.mean_accuracy),
        std_accuracy: avg(|s| s.std_accuracy),
        mean_f1: avg(|s| s.mean_f1),
        std_f1: avg(|s| s.std_f1),
    };
    let per_fold = |f: fn(&FoldResult) -> f64| -> Vec<f64> {
        (0..folds)
            .map(|i| mean(&dims.iter().map(|d| f(&d.folds[i])).collect::<Vec<_>>()))
            .collect()
    };
    let dimensions_then_folds = Summary::of(&per_fold(|f| f.accuracy), &per_fold(|f| f.f1));
    Some(EmotionAggregate { folds_then_dimensions, dimensions_then_folds })
}
