//! SGD with momentum, the training loop and evaluation metrics.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Mode};
use crate::checkpoint::Checkpoint;
use crate::data::{build_input, pad_resize, SkeletonSequence, Stream};
use crate::error::{Error, Result};
use crate::model::{argmax, BagcnModel};
use crate::skeleton::SkeletonTopology;
use crate::tensor::{ParamStore, Tensor};

/// Offset mixed into the seed of the shuffle stream so it is independent of
/// parameter initialization.
const SHUFFLE_STREAM: u64 = 0x5eed_5eed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// 0-based epoch indices at which the learning rate is multiplied by `lr_decay`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub stream: Stream,
    /// Sequences are resized to this many frames; `None` uses the longest sample.
    pub frames: Option<usize>,
    pub model_config: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 50,
            lr_decay_epochs: vec![30, 40],
            lr_decay: 0.1,
            batch_size: 8,
            seed: 0,
            stream: Stream::Spatial,
            frames: None,
            model_config: None,
            train_manifest: None,
            test_manifest: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    /// Longer schedule used for Kinetics-scale runs.
    pub fn kinetics() -> Self {
        TrainConfig { epochs: 65, lr_decay_epochs: vec![20, 40, 55], ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || self.lr_decay <= 0.0 {
            return Err(Error::invalid("momentum must lie in [0, 1), weight decay ≥ 0, lr decay > 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch size and epochs must be at least 1"));
        }
        if self.frames == Some(0) {
            return Err(Error::invalid("frames must be at least 1"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.lr * self.lr_decay.powi(decays as i32)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Momentum buffers, one per parameter.
#[derive(Clone, Debug, Default)]
pub struct SgdState {
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(store: &ParamStore) -> Self {
        SgdState { velocity: store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect() }
    }
}

/// `v ← μv + (g + λθ)`, `θ ← θ − lr·v`; `λ` applies only to parameters
/// flagged for decay. Aborts before touching anything if a gradient is not finite.
pub fn sgd_step(store: &mut ParamStore, state: &mut SgdState, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if state.velocity.len() != store.len() {
        *state = SgdState::new(store);
    }
    for (_, p) in store.iter() {
        if let Some(g) = p.value.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient in `{}`", p.name)));
            }
        }
    }
    for (p, v) in store.iter_mut().zip(&mut state.velocity) {
        let decay = if p.decay { weight_decay } else { 0.0 };
        let grad = p.value.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; v.len()]);
        let theta = p.value.data_mut();
        for i in 0..theta.len() {
            v[i] = momentum * v[i] + (grad[i] + decay * theta[i]);
            theta[i] -= lr * v[i];
        }
    }
    Ok(())
}

/// Classification quality over a split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub top1: f64,
    pub top5: f64,
    pub loss: f64,
    /// Accuracy per class; `None` for classes absent from the split.
    pub per_class: Vec<Option<f64>>,
    pub count: usize,
}

impl Metrics {
    /// From row-wise class probabilities `[N, K]`.
    pub fn from_probs(probs: &[f64], labels: &[usize], k: usize) -> Self {
        let n = labels.len();
        if n == 0 {
            return Metrics { per_class: vec![None; k], ..Default::default() };
        }
        let (mut hit1, mut hit5, mut loss) = (0usize, 0usize, 0.0);
        let mut correct = vec![0usize; k];
        let mut seen = vec![0usize; k];
        for (row, &l) in probs.chunks(k).zip(labels) {
            // rank = entries strictly better, plus equal ones at lower index
            let rank = row.iter().enumerate().filter(|&(i, &p)| p > row[l] || (p == row[l] && i < l)).count();
            hit1 += (rank == 0) as usize;
            hit5 += (rank < 5) as usize;
            correct[l] += (argmax(row) == l) as usize;
            seen[l] += 1;
            loss -= row[l].max(f64::MIN_POSITIVE).ln();
        }
        Metrics {
            top1: hit1 as f64 / n as f64,
            top5: hit5 as f64 / n as f64,
            loss: loss / n as f64,
            per_class: correct.iter().zip(&seen).map(|(&c, &s)| (s > 0).then(|| c as f64 / s as f64)).collect(),
            count: n,
        }
    }
}

/// Model inputs of a split, computed once.
#[derive(Clone, Debug)]
pub struct PreparedSet {
    /// Per sample: `bodies` stacked `[V, T, C]` tensors, flattened.
    inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub bodies: usize,
    /// `[V, T, C]` of one body.
    pub dims: [usize; 3],
}

impl PreparedSet {
    pub fn new(seqs: &[SkeletonSequence], topo: &SkeletonTopology, stream: Stream, frames: usize) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::invalid("empty split"))?;
        let bodies = first.bodies;
        let mut inputs = Vec::with_capacity(seqs.len());
        let mut dims = [0; 3];
        for s in seqs {
            if s.bodies != bodies {
                return Err(Error::Sample { id: s.id.clone(), reason: format!("{} bodies, split uses {bodies}", s.bodies) });
            }
            let parts = build_input(&pad_resize(s, frames)?, topo, stream)?;
            let sh = parts[0].shape();
            dims = [sh[0], sh[1], sh[2]];
            inputs.push(parts.into_iter().flat_map(Tensor::into_data).collect());
        }
        Ok(PreparedSet {
            inputs,
            labels: seqs.iter().map(|s| s.label).collect(),
            ids: seqs.iter().map(|s| s.id.clone()).collect(),
            bodies,
            dims,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[n·bodies, V, T, C]` input and labels of the selected samples.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let data = idx.iter().flat_map(|&i| self.inputs[i].iter().copied()).collect();
        let [v, t, c] = self.dims;
        let x = Tensor::new(vec![idx.len() * self.bodies, v, t, c], data)?;
        Ok((x, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Longest sample of the given splits.
pub fn max_frames<'a>(splits: impl IntoIterator<Item = &'a [SkeletonSequence]>) -> usize {
    splits.into_iter().flatten().map(|s| s.frames).max().unwrap_or(1)
}

/// Eval-mode probabilities `[N, K]` for a whole split.
pub fn predict(model: &BagcnModel, set: &PreparedSet, batch_size: usize) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut probs = Vec::with_capacity(set.len() * model.config.num_classes);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = set.batch(chunk)?;
        probs.extend_from_slice(model.predict_proba(&x, set.bodies)?.data());
    }
    Ok(probs)
}

pub fn evaluate(model: &BagcnModel, set: &PreparedSet, batch_size: usize) -> Result<Metrics> {
    let probs = predict(model, set, batch_size)?;
    Ok(Metrics::from_probs(&probs, &set.labels, model.config.num_classes))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogRecord {
    Step { epoch: usize, step: usize, lr: f64, loss: f64 },
    Epoch { epoch: usize, lr: f64, train_loss: f64, test: Option<Metrics> },
}

/// Outcome of [`train_model`].
#[derive(Clone, Debug, Default)]
pub struct TrainSummary {
    pub step_losses: Vec<f64>,
    pub epochs: Vec<(f64, Option<Metrics>)>,
    pub best_top1: Option<f64>,
    pub final_test: Option<Metrics>,
}

/// A single forward/backward/update step; returns the batch loss.
pub fn train_step(model: &mut BagcnModel, state: &mut SgdState, x: &Tensor, labels: &[usize], bodies: usize, lr: f64, cfg: &TrainConfig) -> Result<f64> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, x, bodies, Mode::Train)?;
    let loss = g.softmax_cross_entropy(out.logits, labels)?;
    let value = g.value(loss)[0];
    if !value.is_finite() {
        return Err(Error::Numerical(format!("loss became {value}")));
    }
    let grads = g.backward(loss)?;
    model.store.zero_grads();
    grads.accumulate_into(&mut model.store);
    sgd_step(&mut model.store, state, lr, cfg.momentum, cfg.weight_decay)?;
    model.commit_bn(&out.bn_updates);
    Ok(value)
}

/// Trains in place. Batches come from a shuffle stream that depends only on
/// `cfg.seed`. With `cfg.out_dir` set, `last.ckpt` is rewritten after every
/// epoch, `best.ckpt` whenever test top-1 improves, and `final.ckpt` at the end.
pub fn train_model(
    model: &mut BagcnModel,
    train: &PreparedSet,
    test: Option<&PreparedSet>,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<TrainSummary> {
    cfg.validate()?;
    if let Some(dir) = &cfg.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);
    let mut state = SgdState::new(&model.store);
    let mut summary = TrainSummary::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = train.batch(chunk)?;
            let loss = train_step(model, &mut state, &x, &labels, train.bodies, lr, cfg)?;
            total += loss * chunk.len() as f64;
            summary.step_losses.push(loss);
            log(&LogRecord::Step { epoch, step, lr, loss });
        }
        let train_loss = total / train.len() as f64;
        let metrics = test.map(|t| evaluate(model, t, cfg.batch_size)).transpose()?;
        log(&LogRecord::Epoch { epoch, lr, train_loss, test: metrics.clone() });
        if let Some(dir) = &cfg.out_dir {
            save_checkpoint(model, cfg, dir.join("last.ckpt"))?;
            if let Some(m) = &metrics {
                if summary.best_top1.is_none_or(|b| m.top1 > b) {
                    save_checkpoint(model, cfg, dir.join("best.ckpt"))?;
                }
            }
        }
        if let Some(m) = &metrics {
            summary.best_top1 = Some(summary.best_top1.map_or(m.top1, |b| b.max(m.top1)));
        }
        summary.final_test = metrics.clone();
        summary.epochs.push((train_loss, metrics));
    }
    if let Some(dir) = &cfg.out_dir {
        save_checkpoint(model, cfg, dir.join("final.ckpt"))?;
    }
    Ok(summary)
}

/// Model checkpoint with the training configuration under `metadata.train`.
pub fn save_checkpoint(model: &BagcnModel, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
    let mut ck = model.to_checkpoint()?;
    ck.metadata["train"] = serde_json::to_value(cfg)?;
    ck.save(path)
}

/// The training configuration stored in a checkpoint, if any.
pub fn checkpoint_train_config(ck: &Checkpoint) -> Option<TrainConfig> {
    serde_json::from_value(ck.metadata.get("train")?.clone()).ok()
}

/// Appends JSON lines to a file.
pub struct JsonlWriter {
    out: std::io::BufWriter<std::fs::File>,
    path: PathBuf,
}

impl JsonlWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(JsonlWriter { out: std::io::BufWriter::new(file), path })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
