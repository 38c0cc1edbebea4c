//! Full network: data batch norm, the block schedule, global average
//! pooling, a linear classifier, and two-stream score fusion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, BatchStats, Graph, Mode, Var};
use crate::block::{Block, BlockConfig};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::focus::{ContextMode, FocusMode};
use crate::init;
use crate::nn::{apply_bn_updates, BatchNormLayer, BnBuffers, ForwardCtx};
use crate::skeleton::{PartitionedAdjacency, SkeletonTopology};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Context width Ĉ of the default configurations.
pub const DEFAULT_CONTEXT_WIDTH: usize = 128;

/// Network hyper-structure.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Preset name (`ntu25`, `kinetics18`, `synth9`) or path to a topology file.
    pub topology: String,
    pub in_channels: usize,
    pub num_classes: usize,
    pub blocks: Vec<BlockConfig>,
    pub focus: FocusMode,
    pub context: ContextMode,
    pub context_width: usize,
}

impl ModelConfig {
    /// Builds a schedule from `(C_out, stride)` pairs. The first block has
    /// no residual; every other block has one.
    pub fn from_schedule(
        topology: &str,
        in_channels: usize,
        num_classes: usize,
        schedule: &[(usize, usize)],
        focus: FocusMode,
        context: ContextMode,
        context_width: usize,
    ) -> Self {
        let mut blocks = Vec::with_capacity(schedule.len());
        let mut c_in = in_channels;
        for (i, &(c_out, stride)) in schedule.iter().enumerate() {
            blocks.push(BlockConfig::new(c_in, c_out, stride, i > 0, focus, context));
            c_in = c_out;
        }
        ModelConfig {
            topology: topology.to_string(),
            in_channels,
            num_classes,
            blocks,
            focus,
            context,
            context_width,
        }
    }

    /// Nine blocks `[64, 64, 64, 128, 128, 128, 256, 256, 256]` with
    /// temporal stride 2 at blocks 4 and 7.
    pub fn standard_schedule() -> Vec<(usize, usize)> {
        vec![
            (64, 1),
            (64, 1),
            (64, 1),
            (128, 2),
            (128, 1),
            (128, 1),
            (256, 2),
            (256, 1),
            (256, 1),
        ]
    }

    /// NTU-RGB+D: 25 joints, joints ⊕ bones (6 channels), 60 classes.
    pub fn ntu_default() -> Self {
        Self::from_schedule(
            "ntu25",
            6,
            60,
            &Self::standard_schedule(),
            FocusMode::Att,
            ContextMode::Bi,
            DEFAULT_CONTEXT_WIDTH,
        )
    }

    /// Kinetics skeletons: 18 joints, (x, y, confidence) ⊕ bones, 400 classes.
    pub fn kinetics_default() -> Self {
        Self::from_schedule(
            "kinetics18",
            6,
            400,
            &Self::standard_schedule(),
            FocusMode::Att,
            ContextMode::Bi,
            DEFAULT_CONTEXT_WIDTH,
        )
    }

    /// Desk-scale network for the 9-joint synthetic benchmark.
    pub fn synthetic_default(num_classes: usize) -> Self {
        Self::from_schedule(
            "synth9",
            6,
            num_classes,
            &[(16, 1), (16, 1), (32, 2)],
            FocusMode::Att,
            ContextMode::Bi,
            16,
        )
    }

    /// Returns a copy with every block switched to the given variant.
    pub fn with_modes(mut self, focus: FocusMode, context: ContextMode) -> Self {
        self.focus = focus;
        self.context = context;
        for b in &mut self.blocks {
            b.focus = focus;
            b.context = context;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::invalid("model needs at least one block"));
        }
        if self.in_channels == 0 || self.num_classes == 0 {
            return Err(Error::invalid("input channels and class count must be positive"));
        }
        let mut c = self.in_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate().map_err(|e| Error::invalid(format!("block {}: {e}", i + 1)))?;
            if b.c_in != c {
                return Err(Error::invalid(format!(
                    "block {} expects {} input channels but receives {c}",
                    i + 1,
                    b.c_in
                )));
            }
            if b.focus != self.focus || b.context != self.context {
                return Err(Error::invalid(format!("block {} variant differs from the model's", i + 1)));
            }
            c = b.c_out;
        }
        if self.context == ContextMode::Bi && !self.context_width.is_multiple_of(2) {
            return Err(Error::invalid("bidirectional context width must be even"));
        }
        Ok(())
    }

    /// Width of the pooled feature vector.
    pub fn feature_width(&self) -> usize {
        self.blocks.last().map_or(self.in_channels, |b| b.c_out)
    }

    /// Frame count after every block for `t` input frames.
    pub fn frame_trace(&self, t: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut t = t;
        for b in &self.blocks {
            t = b.out_frames(t);
            out.push(t);
        }
        out
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Output of [`BagcnModel::forward`].
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// `[N, num_classes]`.
    pub logits: Var,
    /// Pooled features `[N, C_final]` (after averaging over bodies).
    pub features: Var,
    /// Per block: attention scores `[N·bodies, V, T_block, 1]`, if focusing is on.
    pub scores: Vec<Option<Var>>,
    /// Per block output shape.
    pub trace: Vec<Vec<usize>>,
    /// Batch statistics observed in training mode.
    pub bn_updates: Vec<(String, BatchStats)>,
}

/// The assembled network with its parameters and batch norm buffers.
#[derive(Clone, Debug)]
pub struct BagcnModel {
    pub config: ModelConfig,
    pub topology: SkeletonTopology,
    pub adjacency: PartitionedAdjacency,
    pub store: ParamStore,
    pub buffers: BnBuffers,
    pub data_bn: BatchNormLayer,
    pub blocks: Vec<Block>,
    pub classifier_w: ParamId,
    pub classifier_b: ParamId,
}

impl BagcnModel {
    /// Deterministic construction from a seed.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        let topology = SkeletonTopology::resolve(&config.topology)?;
        Self::build_with_topology(config, topology, seed)
    }

    pub fn build_with_topology(config: &ModelConfig, topology: SkeletonTopology, seed: u64) -> Result<Self> {
        config.validate()?;
        let adjacency = PartitionedAdjacency::new(&topology)?;
        let v = topology.num_joints;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut buffers = BnBuffers::new();
        let data_bn = BatchNormLayer::register(&mut store, &mut buffers, "data_bn", config.in_channels)?;
        let mut blocks = Vec::with_capacity(config.blocks.len());
        for (i, bc) in config.blocks.iter().enumerate() {
            blocks.push(Block::register(
                &mut store,
                &mut buffers,
                &format!("block{}", i + 1),
                bc.clone(),
                v,
                config.context_width,
                &mut rng,
            )?);
        }
        let f = config.feature_width();
        let classifier_w = store.register(
            "classifier.w",
            init::kaiming(&[f, config.num_classes], f, &mut rng),
            true,
        )?;
        let classifier_b = store.register("classifier.b", Tensor::zeros(&[config.num_classes]), false)?;
        Ok(BagcnModel {
            config: config.clone(),
            topology,
            adjacency,
            store,
            buffers,
            data_bn,
            blocks,
            classifier_w,
            classifier_b,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// `batch: [N·bodies, V, T, C_in]`, bodies of one sample adjacent.
    /// Pooled features of the bodies of a sample are averaged before the
    /// classifier. Never mutates the model; in training mode the observed
    /// batch statistics are returned for [`BagcnModel::commit_bn`].
    pub fn forward(&self, g: &mut Graph, batch: &Tensor, bodies: usize, mode: Mode) -> Result<ModelOutput> {
        let s = batch.shape();
        let v = self.topology.num_joints;
        if s.len() != 4 || s[1] != v || s[3] != self.config.in_channels {
            return Err(Error::ShapeMismatch {
                op: "model forward",
                lhs: s.to_vec(),
                rhs: vec![v, self.config.in_channels],
            });
        }
        if bodies == 0 || !s[0].is_multiple_of(bodies) {
            return Err(Error::invalid(format!("batch of {} cannot hold {bodies} bodies per sample", s[0])));
        }
        let mut ctx = ForwardCtx::new(&self.store, &self.buffers, mode);
        let x = g.input(batch);
        let mut h = self.data_bn.forward(g, &mut ctx, x)?;
        let mut scores = Vec::with_capacity(self.blocks.len());
        let mut trace = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let out = block.forward(g, &mut ctx, &self.adjacency, h)?;
            h = out.out;
            scores.push(out.scores);
            trace.push(g.shape(h).to_vec());
        }
        let sh = g.shape(h).to_vec();
        let (rows, c) = (sh[0], sh[3]);
        let pooled = g.mean_middle(h, rows, sh[1] * sh[2], c)?;
        let features = if bodies > 1 {
            g.mean_middle(pooled, rows / bodies, bodies, c)?
        } else {
            pooled
        };
        let w = g.param(&self.store, self.classifier_w);
        let b = g.param(&self.store, self.classifier_b);
        let logits = g.matmul(features, w)?;
        let logits = g.add_bias(logits, b)?;
        Ok(ModelOutput { logits, features, scores, trace, bn_updates: ctx.updates })
    }

    pub fn commit_bn(&mut self, updates: &[(String, BatchStats)]) {
        apply_bn_updates(&mut self.buffers, updates);
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint {
            metadata: serde_json::json!({ "config": self.config, "topology": self.topology }),
            ..Default::default()
        };
        for (_, p) in self.store.iter() {
            let mut t = p.value.clone();
            t.clear_grad();
            ck.insert(p.name.clone(), t);
        }
        for (name, stats) in &self.buffers {
            let n = stats.mean.len();
            ck.insert(format!("{name}.running_mean"), Tensor::new(vec![n], stats.mean.clone())?);
            ck.insert(format!("{name}.running_var"), Tensor::new(vec![n], stats.var.clone())?);
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_value(ck.metadata["config"].clone())
            .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let topology: SkeletonTopology = serde_json::from_value(ck.metadata["topology"].clone())
            .map_err(|e| Error::Checkpoint(format!("topology: {e}")))?;
        topology.validate()?;
        let mut model = Self::build_with_topology(&config, topology, 0)?;
        for p in model.store.iter_mut() {
            let t = ck.get(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{}` has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        for (name, stats) in model.buffers.iter_mut() {
            let mean = ck.get(&format!("{name}.running_mean"))?;
            let var = ck.get(&format!("{name}.running_var"))?;
            if mean.numel() != stats.mean.len() || var.numel() != stats.var.len() {
                return Err(Error::Checkpoint(format!("running statistics of `{name}` have the wrong size")));
            }
            stats.mean = mean.data().to_vec();
            stats.var = var.data().to_vec();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Eval-mode class probabilities for a batch, `[N, K]`.
    pub fn predict_proba(&self, batch: &Tensor, bodies: usize) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, batch, bodies, Mode::Eval)?;
        let k = self.config.num_classes;
        let probs = softmax_rows(g.value(out.logits), k);
        Tensor::new(vec![probs.len() / k, k], probs)
    }
}

/// Late fusion of two streams: element-wise sum of their softmax scores.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedPrediction {
    pub scores: Tensor,
    pub predictions: Vec<usize>,
}

pub fn fuse_two_stream(spatial: &Tensor, motion: &Tensor) -> Result<FusedPrediction> {
    if spatial.shape() != motion.shape() || spatial.shape().len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "fuse_two_stream",
            lhs: spatial.shape().to_vec(),
            rhs: motion.shape().to_vec(),
        });
    }
    let data: Vec<f64> = spatial.data().iter().zip(motion.data()).map(|(a, b)| a + b).collect();
    let k = spatial.shape()[1];
    let predictions = data.chunks(k).map(argmax).collect();
    Ok(FusedPrediction {
        scores: Tensor::new(spatial.shape().to_vec(), data)?,
        predictions,
    })
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
