//! Per-joint attention scores of a trained model.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode};
use crate::error::{Error, Result};
use crate::focus::FocusMode;
use crate::model::BagcnModel;
use crate::train::PreparedSet;

pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Scores of one sample (one body) at one block, `scores[t][v]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub sample_id: String,
    /// 1-based block index.
    pub layer: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "V")]
    pub v: usize,
    pub scores: Vec<Vec<f64>>,
}

/// Joints whose score is strictly above the threshold in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivatedJoints {
    pub sample_id: String,
    pub layer: usize,
    pub frame: usize,
    pub joints: Vec<usize>,
}

impl AttentionMap {
    pub fn activated(&self, threshold: f64) -> Vec<ActivatedJoints> {
        self.scores
            .iter()
            .enumerate()
            .map(|(frame, row)| ActivatedJoints {
                sample_id: self.sample_id.clone(),
                layer: self.layer,
                frame,
                joints: (0..self.v).filter(|&j| row[j] > threshold).collect(),
            })
            .collect()
    }

    /// Mean score of each joint over frames.
    pub fn joint_means(&self) -> Vec<f64> {
        (0..self.v)
            .map(|j| self.scores.iter().map(|r| r[j]).sum::<f64>() / self.t as f64)
            .collect()
    }
}

/// Attention maps of every sample in `set` at block `layer` (1-based; `None`
/// selects the last block). Only attention-mode models have scores.
pub fn dump_attention(model: &BagcnModel, set: &PreparedSet, layer: Option<usize>, batch_size: usize) -> Result<Vec<AttentionMap>> {
    if model.config.focus != FocusMode::Att {
        return Err(Error::invalid(format!(
            "attention maps need focus mode `att`, this model uses `{}` which computes no per-joint scores",
            model.config.focus.label()
        )));
    }
    let blocks = model.blocks.len();
    let layer = layer.unwrap_or(blocks);
    if layer == 0 || layer > blocks {
        return Err(Error::invalid(format!("layer {layer} outside 1..={blocks}")));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut maps = Vec::with_capacity(set.len() * set.bodies);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = set.batch(chunk)?;
        let mut g = Graph::new();
        let out = model.forward(&mut g, &x, set.bodies, Mode::Eval)?;
        let scores = out.scores[layer - 1].expect("att blocks produce scores");
        let s = g.shape(scores).to_vec();
        let (v, t) = (s[1], s[2]);
        let data = g.value(scores);
        for (row, &i) in chunk.iter().enumerate().flat_map(|(k, i)| (0..set.bodies).map(move |b| (k * set.bodies + b, i))) {
            let body = row % set.bodies;
            let sample_id = if set.bodies > 1 {
                format!("{}#{body}", set.ids[i])
            } else {
                set.ids[i].clone()
            };
            let scores = (0..t)
                .map(|tt| (0..v).map(|j| data[(row * v + j) * t + tt]).collect())
                .collect();
            maps.push(AttentionMap { sample_id, layer, t, v, scores });
        }
    }
    Ok(maps)
}

/// Per class: mean score of each joint, averaged over that class's samples.
pub fn class_joint_means(maps: &[AttentionMap], labels: &[usize], num_classes: usize) -> Vec<Vec<f64>> {
    let v = maps.first().map_or(0, |m| m.v);
    let mut sums = vec![vec![0.0; v]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (m, &l) in maps.iter().zip(labels) {
        for (s, x) in sums[l].iter_mut().zip(m.joint_means()) {
            *s += x;
        }
        counts[l] += 1;
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|x| *x /= c.max(1) as f64);
    }
    sums
}
