//! Skeleton topologies and the paired focus/diffusion adjacencies.
//!
//! Every undirected bone is split into two directed edges. The focus graph
//! carries messages from the joint closer to the center joint towards the
//! farther one; the diffusion graph carries them back. Adjacency matrices
//! use `A[receiver][sender]`. Each graph is partitioned into the three
//! spatial-configuration subsets {root, closer, far}: the root subset is the
//! identity, focus edges (sender closer to the center) land in `closer`,
//! diffusion edges (sender farther) land in `far`.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Additive degree regularizer used by [`normalize_adjacency`].
pub const DEGREE_ALPHA: f64 = 1e-4;

const NTU25: &str = include_str!("../presets/ntu25.json");
const KINETICS18: &str = include_str!("../presets/kinetics18.json");
const SYNTH9: &str = include_str!("../presets/synth9.json");

/// Joint count, undirected bone list and designated center joint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub num_joints: usize,
    pub bones: Vec<[usize; 2]>,
    pub center: usize,
}

impl SkeletonTopology {
    pub fn new(num_joints: usize, bones: Vec<[usize; 2]>, center: usize) -> Result<Self> {
        let topo = SkeletonTopology { num_joints, bones, center };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.num_joints;
        if v == 0 {
            return Err(Error::Topology("no joints".into()));
        }
        if self.center >= v {
            return Err(Error::Topology(format!("center {} outside [0, {v})", self.center)));
        }
        let mut seen = std::collections::HashSet::new();
        for &[a, b] in &self.bones {
            if a >= v || b >= v {
                return Err(Error::Topology(format!("bone ({a}, {b}) outside [0, {v})")));
            }
            if a == b {
                return Err(Error::Topology(format!("self-loop bone on joint {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::Topology(format!("duplicate bone ({a}, {b})")));
            }
        }
        self.hop_distances().map(|_| ())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let topo: SkeletonTopology = serde_json::from_str(text)?;
        topo.validate()?;
        Ok(topo)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// NTU-RGB+D 25-joint skeleton, centered on the spine joint (index 20).
    pub fn ntu25() -> Self {
        Self::from_json(NTU25).expect("shipped preset is valid")
    }

    /// OpenPose 18-joint skeleton used by Kinetics, centered on the neck (index 1).
    pub fn kinetics18() -> Self {
        Self::from_json(KINETICS18).expect("shipped preset is valid")
    }

    /// Small 9-joint body used by the synthetic benchmark, centered on the chest (index 1):
    /// 0 pelvis, 1 chest, 2 head, 3/4 left elbow/hand, 5/6 right elbow/hand, 7/8 feet.
    pub fn synth9() -> Self {
        Self::from_json(SYNTH9).expect("shipped preset is valid")
    }

    /// Looks up a shipped preset by name, or loads a topology file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match name_or_path {
            "ntu25" => Ok(Self::ntu25()),
            "kinetics18" => Ok(Self::kinetics18()),
            "synth9" => Ok(Self::synth9()),
            path => Self::load(path),
        }
    }

    fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_joints];
        for &[a, b] in &self.bones {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Breadth-first hop count from the center joint to every joint.
    pub fn hop_distances(&self) -> Result<Vec<usize>> {
        let adj = self.neighbors();
        let mut dist = vec![usize::MAX; self.num_joints];
        dist[self.center] = 0;
        let mut queue = VecDeque::from([self.center]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if let Some(j) = dist.iter().position(|&d| d == usize::MAX) {
            return Err(Error::Topology(format!(
                "bone graph is disconnected: joint {j} unreachable from center {}",
                self.center
            )));
        }
        Ok(dist)
    }

    /// Bones oriented `(closer, farther)` by hop distance; equal distances
    /// put the lower joint index first.
    pub fn oriented_bones(&self) -> Result<Vec<(usize, usize)>> {
        let d = self.hop_distances()?;
        Ok(self
            .bones
            .iter()
            .map(|&[a, b]| if (d[a], a) < (d[b], b) { (a, b) } else { (b, a) })
            .collect())
    }

    /// For each joint, the closer endpoint of the first bone that has it as
    /// the farther endpoint. `None` for the center (and any joint that is
    /// never a farther endpoint).
    pub fn parents(&self) -> Result<Vec<Option<usize>>> {
        let mut parent = vec![None; self.num_joints];
        for (src, dst) in self.oriented_bones()? {
            if parent[dst].is_none() {
                parent[dst] = Some(src);
            }
        }
        Ok(parent)
    }
}

/// Spatial-configuration subsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subset {
    Root = 0,
    Closer = 1,
    Far = 2,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Root, Subset::Closer, Subset::Far];
}

/// Unnormalized 0/1 subset matrices for both directed graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectedGraphs {
    pub focus: [Tensor; 3],
    pub diffusion: [Tensor; 3],
}

impl DirectedGraphs {
    /// Sum of the three subsets of one graph.
    pub fn total(subsets: &[Tensor; 3]) -> Tensor {
        let mut t = subsets[0].clone();
        for s in &subsets[1..] {
            for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
                *a += b;
            }
        }
        t
    }
}

/// Builds the focus and diffusion graphs with their subset labels.
pub fn build_directed_graphs(topo: &SkeletonTopology) -> Result<DirectedGraphs> {
    let v = topo.num_joints;
    let empty = || Tensor::zeros(&[v, v]);
    let mut focus = [Tensor::eye(v), empty(), empty()];
    let mut diffusion = [Tensor::eye(v), empty(), empty()];
    for (near, far) in topo.oriented_bones()? {
        focus[Subset::Closer as usize].set(&[far, near], 1.0);
        diffusion[Subset::Far as usize].set(&[near, far], 1.0);
    }
    Ok(DirectedGraphs { focus, diffusion })
}

/// Degree-inverse row normalization `Λ⁻¹A` with `Λ_ii = Σ_j A_ij + α`.
/// All-zero rows stay zero.
pub fn normalize_adjacency(a: &Tensor) -> Tensor {
    let v = a.shape()[0];
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(v) {
        let deg: f64 = row.iter().sum::<f64>() + DEGREE_ALPHA;
        row.iter_mut().for_each(|x| *x /= deg);
    }
    out
}

/// Normalized subset adjacencies for both graphs, ready for graph convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedAdjacency {
    pub raw: DirectedGraphs,
    pub focus: [Tensor; 3],
    pub diffusion: [Tensor; 3],
}

impl PartitionedAdjacency {
    pub fn new(topo: &SkeletonTopology) -> Result<Self> {
        let raw = build_directed_graphs(topo)?;
        let norm = |g: &[Tensor; 3]| [0, 1, 2].map(|s| normalize_adjacency(&g[s]));
        Ok(PartitionedAdjacency {
            focus: norm(&raw.focus),
            diffusion: norm(&raw.diffusion),
            raw,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.focus[0].shape()[0]
    }
}

/// Bone features in joint-aligned layout.
///
/// `coords` is a `[T, V, C]` buffer. Each non-center joint receives
/// `coords(joint) − coords(parent)`; the center joint gets zeros. When
/// `confidence_last` is set the last channel is a detection confidence:
/// it is not differenced and the bone keeps the minimum of its two
/// endpoint confidences.
pub fn compute_bones(
    coords: &[f64],
    frames: usize,
    channels: usize,
    topo: &SkeletonTopology,
    confidence_last: bool,
) -> Result<Vec<f64>> {
    let v = topo.num_joints;
    if coords.len() != frames * v * channels {
        return Err(Error::invalid(format!(
            "compute_bones: {} values for {frames} frames × {v} joints × {channels} channels",
            coords.len()
        )));
    }
    let parents = topo.parents()?;
    let diff_channels = if confidence_last { channels - 1 } else { channels };
    let mut out = vec![0.0; coords.len()];
    for t in 0..frames {
        for (j, p) in parents.iter().enumerate() {
            let Some(p) = *p else { continue };
            let dst = (t * v + j) * channels;
            let src = (t * v + p) * channels;
            for c in 0..diff_channels {
                out[dst + c] = coords[dst + c] - coords[src + c];
            }
            if confidence_last {
                let c = channels - 1;
                out[dst + c] = coords[dst + c].min(coords[src + c]);
            }
        }
    }
    Ok(out)
}
