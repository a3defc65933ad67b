//! Finite-difference checks of the assembled network on a tiny configuration.

use atdgnn_tensor::{check_gradients, cross_entropy, GradCheckReport, Tensor, FD_STEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{GnnSettings, GraphChoice, ModelConfig, TemporalLearnerConfig, WindowSettings};
use super::graph::{aggregate_groups, dgnn_forward, local_filter, reorder_channels, GraphDefinition};
use super::layers::Mode;
use super::network::AtDgnn;
use crate::error::Result;

pub const TINY_TRIALS: usize = 2;
pub const TINY_CHANNELS: usize = 4;
pub const TINY_SAMPLES: usize = 64;

/// Four electrodes in two groups at 32 Hz, giving kernels of 16, 8 and 4
/// samples and three windows after pooling.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        sample_rate_hz: 32.0,
        temporal: TemporalLearnerConfig { out_channels_per_scale: 2, ..TemporalLearnerConfig::default() },
        window: WindowSettings { enabled: true, size: Some(8), stride: Some(4) },
        attention: super::config::AttentionSettings { enabled: true, heads: 2 },
        fusion_channels: TINY_CHANNELS,
        graph: GraphChoice::Custom(GraphDefinition {
            name: "tiny".into(),
            groups: vec![vec!["Fz".into(), "Cz".into()], vec!["Pz".into(), "Oz".into()]],
        }),
        gnn: GnnSettings { hidden: 4, ..GnnSettings::default() },
        ..ModelConfig::default()
    }
}

pub fn tiny_electrodes() -> Vec<String> {
    ["Cz", "Oz", "Fz", "Pz"].iter().map(|s| s.to_string()).collect()
}

fn tiny_model(seed: u64) -> Result<(AtDgnn, Tensor, Vec<usize>)> {
    let cfg = tiny_config();
    let dims = cfg.resolve(TINY_CHANNELS, TINY_SAMPLES, &tiny_electrodes())?;
    let model = AtDgnn::new(&cfg, &dims, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let n = TINY_TRIALS * TINY_CHANNELS * TINY_SAMPLES;
    let x = Tensor::from_vec((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[TINY_TRIALS, TINY_CHANNELS, TINY_SAMPLES])?;
    Ok((model, x, vec![0, 1]))
}

fn projection(shape: &[usize], seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Ok(Tensor::from_vec((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape)?)
}

/// Feature extractor, graph stage and end-to-end checks, in eval mode.
pub fn model_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let (mut model, x, labels) = tiny_model(seed)?;
    let mut reports = Vec::new();

    let fused = model.extract_features(&x, false)?;
    let w = projection(fused.shape(), seed ^ 1)?;
    let params = model.feature_parameters();
    reports.push(check_gradients(
        "feature_extractor",
        &params,
        || Ok(model.extract_features(&x, false).map_err(|e| e.into_tensor())?.mul(&w)?.sum()),
        FD_STEP,
        None,
    )?);

    let z = Tensor::parameter(fused.to_vec(), fused.shape())?;
    let perm = model.dims.permutation.clone();
    let sizes = model.dims.group_sizes.clone();
    let rectify = model.config.gnn.rectify_similarity;
    let mut graph_params = vec![z.clone()];
    graph_params.extend(model.graph_parameters());
    let graph_out = |z: &Tensor| -> Result<Tensor> {
        let filtered = local_filter(&reorder_channels(z, &perm)?, &model.local_weight, &model.local_bias)?;
        dgnn_forward(&aggregate_groups(&filtered, &sizes)?, &model.gnn, rectify)
    };
    let wg = projection(graph_out(&z)?.shape(), seed ^ 2)?;
    reports.push(check_gradients(
        "graph_stage",
        &graph_params,
        || Ok(graph_out(&z).map_err(|e| e.into_tensor())?.mul(&wg)?.sum()),
        FD_STEP,
        None,
    )?);

    let all = model.parameters();
    reports.push(check_gradients(
        "end_to_end",
        &all,
        || {
            let logits = model.forward(&x, &mut Mode::Eval).map_err(|e| e.into_tensor())?;
            cross_entropy(&logits, &labels)
        },
        FD_STEP,
        None,
    )?);
    Ok(reports)
}
