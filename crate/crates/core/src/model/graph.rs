//! Electrode groupings, reordering, local filtering, aggregation, dynamic
//! adjacency and the stacked graph layers.

use std::collections::HashMap;

use atdgnn_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 32-electrode montage in recording order.
pub const MONTAGE_32: [&str; 32] = [
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7", "CP5", "CP1", "P3", "P7", "PO3", "O1", "Oz", "Pz", "Fp2",
    "AF4", "Fz", "F4", "F8", "FC6", "FC2", "Cz", "C4", "T8", "CP6", "CP2", "P4", "P8", "PO4", "O2",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphPreset {
    General,
    Frontal,
    Hemispheric,
}

impl std::str::FromStr for GraphPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "general" => Ok(GraphPreset::General),
            "frontal" => Ok(GraphPreset::Frontal),
            "hemispheric" => Ok(GraphPreset::Hemispheric),
            other => Err(Error::Config(format!(
                "unknown graph preset {other:?} (expected general, frontal or hemispheric)"
            ))),
        }
    }
}

/// Named partition of electrodes into functional areas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDefinition {
    pub name: String,
    pub groups: Vec<Vec<String>>,
}

fn groups(spec: &[&[&str]]) -> Vec<Vec<String>> {
    spec.iter().map(|g| g.iter().map(|s| s.to_string()).collect()).collect()
}

impl GraphDefinition {
    /// Reconstructed groupings for [`MONTAGE_32`]. Editable through configuration.
    pub fn preset(p: GraphPreset) -> Self {
        let (name, g) = match p {
            GraphPreset::General => (
                "general",
                groups(&[
                    &["Fp1", "AF3"],
                    &["Fp2", "AF4"],
                    &["F7", "F3", "Fz", "F4", "F8"],
                    &["FC5", "FC1"],
                    &["FC6", "FC2"],
                    &["C3", "Cz", "C4"],
                    &["T7", "CP5", "CP1"],
                    &["T8", "CP6", "CP2"],
                    &["P7", "P3", "Pz", "P4", "P8"],
                    &["PO3", "PO4"],
                    &["O1", "Oz", "O2"],
                ]),
            ),
            GraphPreset::Frontal => (
                "frontal",
                groups(&[
                    &["Fp1", "AF3"],
                    &["Fp2", "AF4"],
                    &["F7", "F3"],
                    &["F4", "F8"],
                    &["Fz"],
                    &["FC5", "FC1"],
                    &["FC6", "FC2"],
                    &["C3", "T7"],
                    &["Cz"],
                    &["C4", "T8"],
                    &["CP5", "CP1", "P7", "P3"],
                    &["CP6", "CP2", "P8", "P4"],
                    &["Pz"],
                    &["PO3", "O1"],
                    &["PO4", "O2"],
                    &["Oz"],
                ]),
            ),
            GraphPreset::Hemispheric => (
                "hemispheric",
                groups(&[
                    &["Fp1", "AF3", "F3", "F7"],
                    &["Fp2", "AF4", "F4", "F8"],
                    &["Fz", "Cz", "Pz", "Oz"],
                    &["FC5", "FC1", "C3", "T7"],
                    &["FC6", "FC2", "C4", "T8"],
                    &["CP5", "CP1", "P3", "P7"],
                    &["CP6", "CP2", "P4", "P8"],
                    &["PO3", "O1"],
                    &["PO4", "O2"],
                ]),
            ),
        };
        GraphDefinition { name: name.to_string(), groups: g }
    }

    pub fn electrode_count(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    /// Checks the groups form a partition of `channels` and returns the
    /// reorder permutation: entry `j` is the source row of output row `j`.
    pub fn permutation(&self, channels: &[String]) -> Result<Vec<usize>> {
        if let Some(i) = self.groups.iter().position(Vec::is_empty) {
            return Err(Error::Config(format!("graph {:?}: group {i} is empty", self.name)));
        }
        let index: HashMap<&str, usize> = channels.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut used = vec![false; channels.len()];
        let mut perm = Vec::with_capacity(channels.len());
        for name in self.groups.iter().flatten() {
            let &i = index.get(name.as_str()).ok_or_else(|| {
                Error::Config(format!("graph {:?}: unknown channel {name:?}", self.name))
            })?;
            if used[i] {
                return Err(Error::Config(format!("graph {:?}: channel {name:?} listed twice", self.name)));
            }
            used[i] = true;
            perm.push(i);
        }
        if perm.len() != channels.len() {
            let missing: Vec<&str> = channels
                .iter()
                .zip(&used)
                .filter(|(_, u)| !**u)
                .map(|(c, _)| c.as_str())
                .collect();
            return Err(Error::Config(format!(
                "graph {:?} covers {} of {} channels; missing {missing:?}",
                self.name,
                perm.len(),
                channels.len()
            )));
        }
        Ok(perm)
    }
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &i) in perm.iter().enumerate() {
        inv[i] = j;
    }
    inv
}

/// Rows of `z` ([B,C,L]) rearranged so each group is contiguous.
pub fn reorder_channels(z: &Tensor, perm: &[usize]) -> Result<Tensor> {
    if z.ndim() != 3 || z.shape()[1] != perm.len() {
        return Err(Error::Config(format!(
            "reorder expects [B,{},L], got {:?}",
            perm.len(),
            z.shape()
        )));
    }
    Ok(z.index_select(1, perm)?)
}

/// `relu(w ⊙ z + b)` with `w` [C,L] and `b` [C,1].
pub fn local_filter(z: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(z.mul(w)?.add(b)?.relu())
}

/// Row-averaging matrix [R,C] for contiguous groups of the given sizes.
pub fn group_mean_matrix(sizes: &[usize]) -> Result<Tensor> {
    if sizes.contains(&0) {
        return Err(Error::Config("aggregation group is empty".into()));
    }
    let c: usize = sizes.iter().sum();
    let mut m = vec![0.0; sizes.len() * c];
    let mut start = 0;
    for (r, &n) in sizes.iter().enumerate() {
        for j in start..start + n {
            m[r * c + j] = 1.0 / n as f64;
        }
        start += n;
    }
    Ok(Tensor::from_vec(m, &[sizes.len(), c])?)
}

/// Mean over each contiguous group of rows: [B,C,L] -> [B,R,L].
pub fn aggregate_groups(z: &Tensor, sizes: &[usize]) -> Result<Tensor> {
    let m = group_mean_matrix(sizes)?;
    if z.ndim() < 2 || z.shape()[z.ndim() - 2] != m.shape()[1] {
        return Err(Error::Config(format!(
            "aggregation covers {} rows but input is {:?}",
            m.shape()[1],
            z.shape()
        )));
    }
    Ok(m.matmul(z)?)
}

/// Similarity `z zᵀ` plus self-loops over the last two axes of `z`
/// ([..., R, F] -> [..., R, R]).
///
/// With `rectify` the similarity is passed through ReLU before the
/// self-loops are added, which keeps every degree at least 1.
pub fn self_loop_similarity(z: &Tensor, rectify: bool) -> Result<Tensor> {
    let nd = z.ndim();
    if nd < 2 {
        return Err(Error::contract("dynamic_adjacency", format!("expected [..,R,F], got {:?}", z.shape())));
    }
    let r = z.shape()[nd - 2];
    let s = z.matmul(&z.transpose(nd - 2, nd - 1)?)?;
    let s = if rectify { s.relu() } else { s };
    Ok(s.add(&Tensor::eye(r))?)
}

/// Symmetrically normalised [`self_loop_similarity`].
pub fn dynamic_adjacency(z: &Tensor, rectify: bool) -> Result<Tensor> {
    let a = self_loop_similarity(z, rectify)?;
    let nd = a.ndim();
    let d = a.sum_axis(nd - 1, true)?.powf(-0.5);
    Ok(a.mul(&d)?.mul(&d.transpose(nd - 2, nd - 1)?)?)
}

/// Weights of one graph layer: `relu(Ã h w + b)`.
#[derive(Debug, Clone)]
pub struct GraphLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl GraphLayer {
    pub fn forward(&self, h: &Tensor, rectify: bool) -> Result<Tensor> {
        let adj = dynamic_adjacency(h, rectify)?;
        Ok(adj.matmul(h)?.matmul(&self.weight)?.add(&self.bias)?.relu())
    }
}

/// Runs the stack, recomputing the adjacency from each layer's input.
pub fn dgnn_forward(z_agg: &Tensor, layers: &[GraphLayer], rectify: bool) -> Result<Tensor> {
    let mut h = z_agg.clone();
    for (i, layer) in layers.iter().enumerate() {
        let width = h.shape()[h.ndim() - 1];
        if layer.weight.shape()[0] != width {
            return Err(Error::Config(format!(
                "graph layer {i} expects width {} but receives {width}",
                layer.weight.shape()[0]
            )));
        }
        h = layer.forward(&h, rectify)?;
    }
    Ok(h)
}
