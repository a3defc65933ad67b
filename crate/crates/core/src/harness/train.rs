use std::collections::HashSet;
use std::time::Instant;

use atdgnn_tensor::{cross_entropy, no_grad, Adam, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{derive_seed, partition, CvPlan};
use super::data::{Dataset, Dimension, Sample};
use super::metrics::accuracy_and_f1;
use super::report::{EpochRecord, ExperimentReport, FoldResult, InnerTrace};
use crate::error::{Error, Result};
use crate::model::{AtDgnn, ModelConfig, ModelDims, ModelState, Mode, TemporalLearnerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub stage1_max_epochs: usize,
    pub stage2_max_epochs: usize,
    /// Epochs without a new best validation loss before stage 1 stops.
    pub early_stop_patience: usize,
    pub lr_stage1: f64,
    pub batch_size: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            stage1_max_epochs: 200,
            stage2_max_epochs: 20,
            early_stop_patience: 20,
            lr_stage1: 1e-3,
            batch_size: 64,
        }
    }
}

impl TrainSchedule {
    pub fn lr_stage2(&self) -> f64 {
        self.lr_stage1 / 10.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage1_max_epochs == 0 || self.batch_size == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("epochs, patience and batch size must be positive".into()));
        }
        if !(self.lr_stage1.is_finite() && self.lr_stage1 > 0.0) {
            return Err(Error::Config(format!("learning rate {} is not positive", self.lr_stage1)));
        }
        Ok(())
    }
}

/// Component switches and stack depths compared against the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub use_sliding_window: bool,
    pub use_attention: bool,
    pub gnn_layers: usize,
    pub temporal_layers: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { use_sliding_window: true, use_attention: true, gnn_layers: 3, temporal_layers: 3 }
    }
}

impl AblationConfig {
    pub const MAX_LAYERS: usize = 4;

    /// The switches a model config already embodies.
    pub fn of(cfg: &ModelConfig) -> Self {
        AblationConfig {
            use_sliding_window: cfg.window.enabled,
            use_attention: cfg.attention.enabled,
            gnn_layers: cfg.gnn.layers,
            temporal_layers: cfg.temporal.scale_coefficients.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gnn_layers > Self::MAX_LAYERS || self.temporal_layers > Self::MAX_LAYERS {
            return Err(Error::Config(format!("layer counts must be in 0..={}", Self::MAX_LAYERS)));
        }
        Ok(())
    }

    /// `base` with these switches; a changed temporal depth uses halving scales.
    pub fn apply(&self, base: &ModelConfig) -> Result<ModelConfig> {
        self.validate()?;
        let mut cfg = base.clone();
        cfg.window.enabled = self.use_sliding_window;
        cfg.attention.enabled = self.use_attention;
        cfg.gnn.layers = self.gnn_layers;
        if cfg.temporal.scale_coefficients.len() != self.temporal_layers {
            cfg.temporal.scale_coefficients = TemporalLearnerConfig::halving_scales(self.temporal_layers);
        }
        Ok(cfg)
    }

    /// Flags worth surfacing in a report.
    pub fn warnings(&self) -> Vec<String> {
        if self.gnn_layers == 0 && self.temporal_layers == 0 {
            vec!["both graph and temporal stacks are disabled".to_string()]
        } else {
            Vec::new()
        }
    }
}

/// Stacks samples into a `[B, E, T]` input.
pub fn batch_tensor(samples: &[&Sample], channels: usize, len: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(samples.len() * channels * len);
    for s in samples {
        data.extend_from_slice(&s.data);
    }
    Ok(Tensor::from_vec(data, &[samples.len(), channels, len])?)
}

fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|r| (0..k).fold(0, |best, j| if r[j] > r[best] { j } else { best }))
        .collect()
}

/// Mean loss and accuracy (percent) of one pass, plus per-sample predictions.
pub struct PassStats {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// One shuffled pass of mini-batch Adam updates.
pub fn train_epoch(
    model: &mut AtDgnn,
    opt: &mut Adam,
    samples: &[&Sample],
    batch_size: usize,
    dim: Dimension,
    rng: &mut ChaCha8Rng,
) -> Result<PassStats> {
    let mut order: Vec<&Sample> = samples.to_vec();
    order.shuffle(rng);
    let (e, t) = (model.dims.input_channels, model.dims.input_len);
    let (mut loss_sum, mut correct) = (0.0, 0);
    let mut predictions = Vec::with_capacity(order.len());
    for batch in order.chunks(batch_size) {
        let x = batch_tensor(batch, e, t)?;
        let labels: Vec<usize> = batch.iter().map(|s| dim.label(&s.labels)).collect();
        let logits = model.forward(&x, &mut Mode::Train(rng))?;
        let loss = cross_entropy(&logits, &labels)?;
        loss.backward()?;
        opt.step()?;
        loss_sum += loss.item() * batch.len() as f64;
        let pred = argmax_rows(&logits);
        correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
        predictions.extend(pred);
    }
    let n = order.len().max(1) as f64;
    Ok(PassStats { loss: loss_sum / n, accuracy: 100.0 * correct as f64 / n, predictions })
}

/// Eval-mode loss and predictions without recording a tape.
pub fn evaluate_pass(model: &mut AtDgnn, samples: &[&Sample], batch_size: usize, dim: Dimension) -> Result<PassStats> {
    if samples.is_empty() {
        return Err(Error::contract("evaluate", "no samples to evaluate"));
    }
    let (e, t) = (model.dims.input_channels, model.dims.input_len);
    let (mut loss_sum, mut correct) = (0.0, 0);
    let mut predictions = Vec::with_capacity(samples.len());
    no_grad(|| -> Result<()> {
        for batch in samples.chunks(batch_size.max(1)) {
            let x = batch_tensor(batch, e, t)?;
            let labels: Vec<usize> = batch.iter().map(|s| dim.label(&s.labels)).collect();
            let logits = model.forward(&x, &mut Mode::Eval)?;
            loss_sum += cross_entropy(&logits, &labels)?.item() * batch.len() as f64;
            let pred = argmax_rows(&logits);
            correct += pred.iter().zip(&labels).filter(|(p, l)| p == l).count();
            predictions.extend(pred);
        }
        Ok(())
    })?;
    let n = samples.len() as f64;
    Ok(PassStats { loss: loss_sum / n, accuracy: 100.0 * correct as f64 / n, predictions })
}

/// ACC and macro F1 (percent) of `model` on `samples`.
pub fn evaluate(model: &mut AtDgnn, samples: &[&Sample], dim: Dimension) -> Result<(f64, f64)> {
    let pass = evaluate_pass(model, samples, 64, dim)?;
    let labels: Vec<usize> = samples.iter().map(|s| dim.label(&s.labels)).collect();
    accuracy_and_f1(&pass.predictions, &labels, model.dims.classes)
}

pub struct StageOneOutcome {
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub state: ModelState,
    pub trace: Vec<EpochRecord>,
}

/// Trains until the validation loss has not improved for `patience`
/// epochs and returns the lowest-validation-loss checkpoint.
pub fn train_with_early_stopping(
    model: &mut AtDgnn,
    train: &[&Sample],
    val: &[&Sample],
    sched: &TrainSchedule,
    dim: Dimension,
    rng: &mut ChaCha8Rng,
) -> Result<StageOneOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::contract("train_two_stage", "empty inner training or validation fold"));
    }
    let mut opt = Adam::new(model.parameters(), sched.lr_stage1);
    let mut best: Option<(f64, usize, ModelState)> = None;
    let mut trace = Vec::new();
    let mut waited = 0;
    for epoch in 0..sched.stage1_max_epochs {
        let fit = train_epoch(model, &mut opt, train, sched.batch_size, dim, rng)?;
        let check = evaluate_pass(model, val, sched.batch_size, dim)?;
        trace.push(EpochRecord {
            epoch,
            train_loss: fit.loss,
            train_accuracy: fit.accuracy,
            val_loss: Some(check.loss),
            val_accuracy: Some(check.accuracy),
        });
        if !check.loss.is_finite() {
            return Err(Error::NumericCheck(format!("validation loss became {} at epoch {epoch}", check.loss)));
        }
        if best.as_ref().map_or(true, |(l, _, _)| check.loss < *l) {
            best = Some((check.loss, epoch, model.state()));
            waited = 0;
        } else {
            waited += 1;
            if waited >= sched.early_stop_patience {
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, state) = best.expect("at least one epoch ran");
    model.load_state(&state)?;
    Ok(StageOneOutcome { best_val_loss, best_epoch, state, trace })
}

/// Fine-tunes at the stage-two rate, halting after the first epoch whose
/// in-epoch training accuracy reaches 100%.
pub fn fine_tune(
    model: &mut AtDgnn,
    train: &[&Sample],
    sched: &TrainSchedule,
    dim: Dimension,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpochRecord>> {
    let mut opt = Adam::new(model.parameters(), sched.lr_stage2());
    let mut trace = Vec::new();
    for epoch in 0..sched.stage2_max_epochs {
        let fit = train_epoch(model, &mut opt, train, sched.batch_size, dim, rng)?;
        trace.push(EpochRecord {
            epoch,
            train_loss: fit.loss,
            train_accuracy: fit.accuracy,
            val_loss: None,
            val_accuracy: None,
        });
        if fit.accuracy >= 100.0 {
            break;
        }
    }
    Ok(trace)
}

/// A model from the two-stage procedure with its training record.
pub struct TwoStageFit {
    pub model: AtDgnn,
    pub stage1: Vec<InnerTrace>,
    pub best_inner_fold: usize,
    pub best_val_loss: f64,
    pub stage2: Vec<EpochRecord>,
    /// Every trial whose samples influenced training or model selection.
    pub consumed: HashSet<usize>,
}

/// Stage 1 trains a fresh model per inner fold with early stopping and keeps
/// the checkpoint with the lowest validation loss; stage 2 fine-tunes it on
/// every trial in `inner`.
#[allow(clippy::too_many_arguments)]
pub fn fit_two_stage(
    cfg: &ModelConfig,
    dims: &ModelDims,
    inner: &[Vec<usize>],
    sched: &TrainSchedule,
    data: &Dataset,
    dim: Dimension,
    seed: u64,
) -> Result<TwoStageFit> {
    let mut train_trials: Vec<usize> = inner.iter().flatten().copied().collect();
    train_trials.sort_unstable();
    let mut consumed: HashSet<usize> = HashSet::new();
    let mut stage1 = Vec::with_capacity(inner.len());
    let mut best: Option<(f64, usize, ModelState)> = None;
    for (i, val_trials) in inner.iter().enumerate() {
        let fit_trials: Vec<usize> = train_trials.iter().copied().filter(|t| !val_trials.contains(t)).collect();
        let fit: Vec<&Sample> = data.samples_of(&fit_trials).collect();
        let val: Vec<&Sample> = data.samples_of(val_trials).collect();
        consumed.extend(fit.iter().chain(&val).map(|s| s.trial));
        let mut model = AtDgnn::new(cfg, dims, derive_seed(seed, i as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 100 + i as u64));
        let out = train_with_early_stopping(&mut model, &fit, &val, sched, dim, &mut rng)?;
        stage1.push(InnerTrace {
            inner_fold: i,
            validation_trials: val_trials.clone(),
            best_epoch: out.best_epoch,
            best_val_loss: out.best_val_loss,
            epochs: out.trace,
        });
        if best.as_ref().map_or(true, |(l, _, _)| out.best_val_loss < *l) {
            best = Some((out.best_val_loss, i, out.state));
        }
    }
    let (best_val_loss, best_inner_fold, state) =
        best.ok_or_else(|| Error::contract("train_two_stage", "no inner folds"))?;

    let mut model = AtDgnn::new(cfg, dims, derive_seed(seed, 0));
    model.load_state(&state)?;
    let all_train: Vec<&Sample> = data.samples_of(&train_trials).collect();
    consumed.extend(all_train.iter().map(|s| s.trial));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 200));
    let stage2 = fine_tune(&mut model, &all_train, sched, dim, &mut rng)?;
    Ok(TwoStageFit { model, stage1, best_inner_fold, best_val_loss, stage2, consumed })
}

#[allow(clippy::too_many_arguments)]
fn run_fold(
    cfg: &ModelConfig,
    dims: &ModelDims,
    plan: &CvPlan,
    sched: &TrainSchedule,
    data: &Dataset,
    dim: Dimension,
    fold: usize,
    seed: u64,
) -> Result<FoldResult> {
    let test_trials = &plan.trial_assignments[fold];
    let inner = &plan.inner_assignments[fold];
    let mut fit = fit_two_stage(cfg, dims, inner, sched, data, dim, seed)?;

    let leaked: Vec<usize> = test_trials.iter().copied().filter(|t| fit.consumed.contains(t)).collect();
    if !leaked.is_empty() {
        return Err(Error::contract(
            "leakage_guard",
            format!("outer fold {fold}: test trials {leaked:?} were used in training"),
        ));
    }
    let test: Vec<&Sample> = data.samples_of(test_trials).collect();
    if test.is_empty() {
        return Err(Error::contract("train_two_stage", format!("outer fold {fold} has no test samples")));
    }
    let (accuracy, f1) = evaluate(&mut fit.model, &test, dim)?;
    Ok(FoldResult {
        fold,
        seed,
        test_trials: test_trials.clone(),
        train_trials: plan.train_trials(fold),
        inner_folds: inner.clone(),
        train_samples: data.samples_of(&plan.train_trials(fold)).count(),
        test_samples: test.len(),
        best_inner_fold: fit.best_inner_fold,
        best_val_loss: fit.best_val_loss,
        stage1: fit.stage1,
        stage2: fit.stage2,
        leakage_checked: true,
        accuracy,
        f1,
    })
}

/// Two-stage fit on every trial of `data`, for a model to keep.
pub fn fit_final(
    model_cfg: &ModelConfig,
    sched: &TrainSchedule,
    data: &Dataset,
    dim: Dimension,
    inner_folds: usize,
    seed: u64,
) -> Result<TwoStageFit> {
    sched.validate()?;
    if inner_folds < 2 || inner_folds > data.trial_count {
        return Err(Error::contract("fit_final", format!("{inner_folds} folds for {} trials", data.trial_count)));
    }
    let dims = model_cfg.resolve(data.input_channels, data.input_len, &data.electrodes)?;
    let trials: Vec<usize> = (0..data.trial_count).collect();
    let inner = partition(&trials, inner_folds, derive_seed(seed, 2000));
    fit_two_stage(model_cfg, &dims, &inner, sched, data, dim, derive_seed(seed, 3000))
}

/// Nested cross-validation with two-stage training for each dimension.
pub fn train_two_stage(
    model_cfg: &ModelConfig,
    plan: &CvPlan,
    sched: &TrainSchedule,
    data: &Dataset,
    dimensions: &[Dimension],
    workers: usize,
) -> Result<ExperimentReport> {
    let started = Instant::now();
    sched.validate()?;
    if plan.trial_count() != data.trial_count {
        return Err(Error::Validation(format!(
            "plan covers {} trials but the dataset has {}",
            plan.trial_count(),
            data.trial_count
        )));
    }
    if dimensions.is_empty() {
        return Err(Error::Config("no label dimensions selected".into()));
    }
    let dims = model_cfg.resolve(data.input_channels, data.input_len, &data.electrodes)?;

    let jobs: Vec<(usize, usize)> = (0..dimensions.len())
        .flat_map(|d| (0..plan.outer_folds).map(move |f| (d, f)))
        .collect();
    let work = |&(d, f): &(usize, usize)| {
        let seed = derive_seed(derive_seed(plan.seed, 1000 + d as u64), f as u64);
        run_fold(model_cfg, &dims, plan, sched, data, dimensions[d], f, seed)
    };
    let results: Vec<Result<FoldResult>> = if workers <= 1 {
        jobs.iter().map(work).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?
            .install(|| jobs.par_iter().map(work).collect())
    };
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let per_dim: Vec<Vec<FoldResult>> = {
        let mut v = vec![Vec::new(); dimensions.len()];
        for ((d, _), r) in jobs.iter().zip(results) {
            v[*d].push(r);
        }
        v
    };
    let ablation = AblationConfig::of(model_cfg);
    Ok(ExperimentReport::assemble(
        model_cfg.clone(),
        sched.clone(),
        ablation,
        ablation.warnings(),
        plan,
        dimensions,
        per_dim,
        started.elapsed().as_secs_f64(),
    ))
}

/// [`train_two_stage`] on `base` with the given switches applied.
pub fn run_ablation(
    base: &ModelConfig,
    ab: &AblationConfig,
    plan: &CvPlan,
    sched: &TrainSchedule,
    data: &Dataset,
    dimensions: &[Dimension],
    workers: usize,
) -> Result<ExperimentReport> {
    let cfg = ab.apply(base)?;
    train_two_stage(&cfg, plan, sched, data, dimensions, workers)
}
