//! Command-line interface. Every subcommand reads an optional JSON config
//! (`--config`) whose fields flags override.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ablation::{focus_and_context_grid, full_grid, render_table, run_ablation, to_csv};
use crate::attention::{dump_attention, DEFAULT_THRESHOLD};
use crate::autodiff::OpKind;
use crate::checkpoint::Checkpoint;
use crate::data::{convert_jsonl, Dataset, Stream};
use crate::error::{Error, Result};
use crate::focus::{ContextMode, FocusMode};
use crate::gradcheck::{run_standard, GradcheckOptions};
use crate::model::{fuse_two_stream, BagcnModel, ModelConfig};
use crate::synth::{synth_generate, SynthSpec};
use crate::tensor::Tensor;
use crate::train::{checkpoint_train_config, max_frames, predict, train_model, JsonlWriter, LogRecord, Metrics, PreparedSet, TrainConfig};

/// Exit status for validation failures.
pub const EXIT_INVALID: i32 = 1;
/// Exit status for numerical failures (non-finite values, failed gradient check).
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "bagcn", version, about = "Skeleton action recognition with focus/diffusion graph convolutions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset manifest.
    Eval(EvalArgs),
    /// Train a grid of focusing/context variants over several seeds.
    Ablate(AblateArgs),
    /// Finite-difference gradient check of every layer type.
    Gradcheck(GradcheckArgs),
    /// Write per-joint attention scores of an attention-mode checkpoint.
    #[command(name = "dump-attn")]
    DumpAttn(DumpArgs),
    /// Late fusion of spatial and motion score files.
    Fuse(FuseArgs),
    /// Dataset utilities.
    #[command(subcommand)]
    Data(DataCommand),
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Write the synthetic benchmark (or a custom spec) as a dataset.
    GenerateSynth(SynthArgs),
    /// Decode every sample of a manifest and print a summary.
    Inspect(InspectArgs),
    /// Convert raw JSON-lines samples into a dataset.
    Convert(ConvertArgs),
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn required<T>(v: Option<T>, what: &str) -> Result<T> {
    v.ok_or_else(|| Error::invalid(format!("missing {what}")))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string(v)?);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Comma-separated 0-based epochs.
    #[arg(long, value_delimiter = ',')]
    pub lr_decay_epochs: Option<Vec<usize>>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_serde::<Stream>)]
    pub stream: Option<Stream>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long, value_parser = parse_serde::<FocusMode>)]
    pub focus: Option<FocusMode>,
    #[arg(long, value_parser = parse_serde::<ContextMode>)]
    pub context: Option<ContextMode>,
}

impl TrainArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c: TrainConfig = load_config(self.config.as_deref())?;
        macro_rules! over {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { c.$f = v.clone(); } )* };
        }
        over!(epochs, lr, momentum, weight_decay, lr_decay_epochs, batch_size, seed, stream);
        if self.frames.is_some() {
            c.frames = self.frames;
        }
        if self.train.is_some() {
            c.train_manifest = self.train.clone();
        }
        if self.test.is_some() {
            c.test_manifest = self.test.clone();
        }
        if self.out.is_some() {
            c.out_dir = self.out.clone();
        }
        if self.model_config.is_some() {
            c.model_config = self.model_config.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// Model configuration for a dataset: the configured file, or the small
/// synthetic architecture sized to the dataset.
pub fn model_config_for(cfg: &TrainConfig, ds: &Dataset) -> Result<ModelConfig> {
    let m = match &cfg.model_config {
        Some(p) => ModelConfig::load(p)?,
        None => {
            let mut m = ModelConfig::synthetic_default(ds.manifest.num_classes());
            m.topology = ds.manifest.topology.clone();
            m.in_channels = 2 * ds.manifest.channels;
            m.blocks[0].c_in = m.in_channels;
            m
        }
    };
    if m.in_channels != 2 * ds.manifest.channels || m.num_classes != ds.manifest.num_classes() {
        return Err(Error::invalid(format!(
            "model expects {} input channels and {} classes; dataset gives {} and {}",
            m.in_channels,
            m.num_classes,
            2 * ds.manifest.channels,
            ds.manifest.num_classes()
        )));
    }
    Ok(m)
}

fn check_topology(model: &BagcnModel, ds: &Dataset) -> Result<()> {
    if model.topology != ds.topology {
        return Err(Error::Topology(format!(
            "checkpoint topology ({} joints) does not match dataset topology `{}` ({} joints)",
            model.topology.num_joints, ds.manifest.topology, ds.topology.num_joints
        )));
    }
    if model.config.num_classes != ds.manifest.num_classes() {
        return Err(Error::invalid(format!(
            "checkpoint has {} classes, dataset {}",
            model.config.num_classes,
            ds.manifest.num_classes()
        )));
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let cfg = a.resolve()?;
    let train_ds = Dataset::open(required(cfg.train_manifest.as_ref(), "train manifest (--train)")?)?;
    let test_ds = cfg.test_manifest.as_ref().map(Dataset::open).transpose()?;
    let mut mcfg = model_config_for(&cfg, &train_ds)?;
    if a.focus.is_some() || a.context.is_some() {
        let (f, c) = (a.focus.unwrap_or(mcfg.focus), a.context.unwrap_or(mcfg.context));
        mcfg = mcfg.with_modes(f, c);
    }
    let train_seqs = train_ds.load_all()?;
    let test_seqs = test_ds.as_ref().map(Dataset::load_all).transpose()?;
    let frames = cfg
        .frames
        .unwrap_or_else(|| max_frames([train_seqs.as_slice()].into_iter().chain(test_seqs.as_deref())));
    let cfg = TrainConfig { frames: Some(frames), ..cfg };
    let train = PreparedSet::new(&train_seqs, &train_ds.topology, cfg.stream, frames)?;
    let test = test_seqs
        .as_ref()
        .map(|s| PreparedSet::new(s, &train_ds.topology, cfg.stream, frames))
        .transpose()?;
    let mut model = BagcnModel::build_with_topology(&mcfg, train_ds.topology.clone(), cfg.seed)?;
    if let Some(t) = &test_ds {
        check_topology(&model, t)?;
    }
    let mut file = match &cfg.out_dir {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            write_text(&d.join("config.json"), &serde_json::to_string_pretty(&cfg)?)?;
            Some(JsonlWriter::create(d.join("train.jsonl"))?)
        }
        None => None,
    };
    let mut failure = None;
    let summary = train_model(&mut model, &train, test.as_ref(), &cfg, &mut |r: &LogRecord| {
        if let Ok(line) = serde_json::to_string(r) {
            println!("{line}");
        }
        if let Some(f) = file.as_mut() {
            if let Err(e) = f.write(r) {
                failure.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    print_json(&serde_json::json!({
        "kind": "summary",
        "params": model.num_params(),
        "best_top1": summary.best_top1,
        "final": summary.final_test,
    }))?;
    Ok(0)
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub checkpoint: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub stream: Option<Stream>,
    pub frames: Option<usize>,
    pub batch_size: Option<usize>,
    /// Per-sample probabilities as JSON lines, for `fuse`.
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_parser = parse_serde::<Stream>)]
    pub stream: Option<Stream>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

/// One line of a score file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub label: usize,
    pub scores: Vec<f64>,
}

struct Loaded {
    model: BagcnModel,
    set: PreparedSet,
    train_cfg: Option<TrainConfig>,
}

fn load_for_eval(checkpoint: &Path, manifest: &Path, stream: Option<Stream>, frames: Option<usize>) -> Result<Loaded> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = BagcnModel::from_checkpoint(&ck)?;
    let train_cfg = checkpoint_train_config(&ck);
    let ds = Dataset::open(manifest)?;
    check_topology(&model, &ds)?;
    let seqs = ds.load_all()?;
    let stream = stream.or(train_cfg.as_ref().map(|c| c.stream)).unwrap_or(Stream::Spatial);
    let frames = frames
        .or(train_cfg.as_ref().and_then(|c| c.frames))
        .unwrap_or_else(|| max_frames([seqs.as_slice()]));
    let set = PreparedSet::new(&seqs, &ds.topology, stream, frames)?;
    Ok(Loaded { model, set, train_cfg })
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let mut c: EvalConfig = load_config(a.config.as_deref())?;
    c.checkpoint = a.checkpoint.clone().or(c.checkpoint);
    c.manifest = a.manifest.clone().or(c.manifest);
    c.stream = a.stream.or(c.stream);
    c.frames = a.frames.or(c.frames);
    c.batch_size = a.batch_size.or(c.batch_size);
    c.scores = a.scores.clone().or(c.scores);
    let l = load_for_eval(
        &required(c.checkpoint, "--checkpoint")?,
        &required(c.manifest, "--manifest")?,
        c.stream,
        c.frames,
    )?;
    let batch = c.batch_size.or(l.train_cfg.map(|t| t.batch_size)).unwrap_or(8);
    let k = l.model.config.num_classes;
    let probs = predict(&l.model, &l.set, batch)?;
    if let Some(path) = &c.scores {
        let mut w = JsonlWriter::create(path)?;
        for (i, row) in probs.chunks(k).enumerate() {
            w.write(&ScoreRecord { sample_id: l.set.ids[i].clone(), label: l.set.labels[i], scores: row.to_vec() })?;
        }
    }
    print_json(&Metrics::from_probs(&probs, &l.set.labels, k))?;
    Ok(0)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// `focus-context` (focusing modes, then context modes) or `full`.
    pub grid: String,
    pub out: Option<PathBuf>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig { train: TrainConfig::default(), seeds: vec![0, 1, 2], grid: "focus-context".into(), out: None }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn cmd_ablate(a: &AblateArgs) -> Result<i32> {
    let mut c: AblateConfig = load_config(a.config.as_deref())?;
    if let Some(s) = &a.seeds {
        c.seeds = s.clone();
    }
    if let Some(g) = &a.grid {
        c.grid = g.clone();
    }
    if let Some(e) = a.epochs {
        c.train.epochs = e;
    }
    c.train.train_manifest = a.train.clone().or(c.train.train_manifest);
    c.train.test_manifest = a.test.clone().or(c.train.test_manifest);
    c.out = a.out.clone().or(c.out);
    c.train.validate()?;
    let grid = match c.grid.as_str() {
        "full" => full_grid(),
        "focus-context" => focus_and_context_grid(),
        other => return Err(Error::invalid(format!("unknown grid `{other}` (full, focus-context)"))),
    };
    let train_ds = Dataset::open(required(c.train.train_manifest.as_ref(), "--train")?)?;
    let test_ds = Dataset::open(required(c.train.test_manifest.as_ref(), "--test")?)?;
    let base = model_config_for(&c.train, &train_ds)?;
    let (tr, te) = (train_ds.load_all()?, test_ds.load_all()?);
    let frames = c.train.frames.unwrap_or_else(|| max_frames([tr.as_slice(), te.as_slice()]));
    let train = PreparedSet::new(&tr, &train_ds.topology, c.train.stream, frames)?;
    let test = PreparedSet::new(&te, &train_ds.topology, c.train.stream, frames)?;
    let rows = run_ablation(&grid, &c.seeds, &base, &c.train, &train, &test)?;
    let (csv, table) = (to_csv(&rows), render_table(&rows));
    if let Some(dir) = &c.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join("ablation.csv"), &csv)?;
        write_text(&dir.join("ablation.txt"), &table)?;
    }
    print!("{csv}\n{table}");
    Ok(0)
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// Corrupt the backward rule of one operation (negative control).
    #[arg(long, value_parser = parse_serde::<OpKind>)]
    pub fault: Option<OpKind>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct GradcheckConfig {
    seed: Option<u64>,
    step: Option<f64>,
    samples: Option<usize>,
    fault: Option<OpKind>,
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let c: GradcheckConfig = load_config(a.config.as_deref())?;
    let d = GradcheckOptions::default();
    let opts = GradcheckOptions {
        step: a.step.or(c.step).unwrap_or(d.step),
        samples_per_layer: a.samples.or(c.samples).unwrap_or(d.samples_per_layer),
        seed: a.seed.or(c.seed).unwrap_or(d.seed),
        fault: a.fault.or(c.fault),
    };
    let report = run_standard(&opts)?;
    print!("{}", report.render());
    if report.passed() {
        println!("gradcheck passed (max relative error {:.3e})", report.worst());
        Ok(0)
    } else {
        println!("gradcheck FAILED (max relative error {:.3e})", report.worst());
        Ok(EXIT_NUMERICAL)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct DumpConfig {
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    layer: Option<usize>,
    threshold: Option<f64>,
    out: Option<PathBuf>,
    report: Option<PathBuf>,
    limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// 1-based block index; defaults to the last block.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Attention records (JSON lines); stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Activated-joint report (JSON lines).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Only the first N samples.
    #[arg(long)]
    pub limit: Option<usize>,
}

fn cmd_dump(a: &DumpArgs) -> Result<i32> {
    let c: DumpConfig = load_config(a.config.as_deref())?;
    let threshold = a.threshold.or(c.threshold).unwrap_or(DEFAULT_THRESHOLD);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid("threshold must lie in [0, 1]"));
    }
    let l = load_for_eval(
        &required(a.checkpoint.clone().or(c.checkpoint), "--checkpoint")?,
        &required(a.manifest.clone().or(c.manifest), "--manifest")?,
        None,
        None,
    )?;
    let mut maps = dump_attention(&l.model, &l.set, a.layer.or(c.layer), 8)?;
    if let Some(n) = a.limit.or(c.limit) {
        maps.truncate(n);
    }
    match a.out.clone().or(c.out) {
        Some(p) => {
            let mut w = JsonlWriter::create(p)?;
            for m in &maps {
                w.write(m)?;
            }
        }
        None => {
            for m in &maps {
                print_json(m)?;
            }
        }
    }
    let activated: Vec<_> = maps.iter().flat_map(|m| m.activated(threshold)).collect();
    if let Some(p) = a.report.clone().or(c.report) {
        let mut w = JsonlWriter::create(p)?;
        for r in &activated {
            w.write(r)?;
        }
    }
    let frames_with = activated.iter().filter(|r| !r.joints.is_empty()).count();
    eprintln!("{} maps, {frames_with}/{} frames with a joint above {threshold}", maps.len(), activated.len());
    Ok(0)
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Spatial-stream score file from `eval --scores`.
    #[arg(long)]
    pub spatial: Option<PathBuf>,
    /// Motion-stream score file from `eval --scores`.
    #[arg(long)]
    pub motion: Option<PathBuf>,
    /// Fused scores (JSON lines).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct FuseConfig {
    spatial: Option<PathBuf>,
    motion: Option<PathBuf>,
    out: Option<PathBuf>,
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

fn scores_tensor(recs: &[ScoreRecord]) -> Result<Tensor> {
    let k = recs.first().map_or(0, |r| r.scores.len());
    if recs.iter().any(|r| r.scores.len() != k) {
        return Err(Error::invalid("score rows differ in length"));
    }
    Tensor::new(vec![recs.len(), k], recs.iter().flat_map(|r| r.scores.iter().copied()).collect())
}

fn cmd_fuse(a: &FuseArgs) -> Result<i32> {
    let c: FuseConfig = load_config(a.config.as_deref())?;
    let s = read_scores(&required(a.spatial.clone().or(c.spatial), "--spatial")?)?;
    let m = read_scores(&required(a.motion.clone().or(c.motion), "--motion")?)?;
    if s.is_empty() || s.len() != m.len() || s.iter().zip(&m).any(|(x, y)| x.sample_id != y.sample_id || x.label != y.label) {
        return Err(Error::invalid("score files must list the same samples in the same order"));
    }
    let (st, mt) = (scores_tensor(&s)?, scores_tensor(&m)?);
    let fused = fuse_two_stream(&st, &mt)?;
    let labels: Vec<usize> = s.iter().map(|r| r.label).collect();
    let k = st.shape()[1];
    if let Some(p) = a.out.clone().or(c.out) {
        let mut w = JsonlWriter::create(p)?;
        for (i, row) in fused.scores.data().chunks(k).enumerate() {
            w.write(&ScoreRecord { sample_id: s[i].sample_id.clone(), label: labels[i], scores: row.to_vec() })?;
        }
    }
    let top1 = |t: &Tensor| Metrics::from_probs(t.data(), &labels, k).top1;
    let fused_top1 = fused.predictions.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64;
    print_json(&serde_json::json!({
        "spatial_top1": top1(&st),
        "motion_top1": top1(&mt),
        "fused_top1": fused_top1,
    }))?;
    Ok(0)
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// A `SynthSpec` JSON; the standard benchmark when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub train_per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let mut spec = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => SynthSpec::standard(0),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(n) = a.noise {
        spec.noise = n;
    }
    if let Some(n) = a.train_per_class {
        spec.train_per_class = n;
    }
    if let Some(n) = a.test_per_class {
        spec.test_per_class = n;
    }
    let (train, test) = synth_generate(&spec, &a.out)?;
    write_text(&a.out.join("spec.json"), &serde_json::to_string_pretty(&spec)?)?;
    print_json(&serde_json::json!({
        "out": a.out,
        "train": train.samples.len(),
        "test": test.samples.len(),
        "classes": spec.num_classes,
    }))?;
    Ok(0)
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct InspectConfig {
    manifest: Option<PathBuf>,
}

fn cmd_inspect(a: &InspectArgs) -> Result<i32> {
    let c: InspectConfig = load_config(a.config.as_deref())?;
    let ds = Dataset::open(required(a.manifest.clone().or(c.manifest), "--manifest")?)?;
    let k = ds.manifest.num_classes();
    let mut per_class = vec![0usize; k];
    let (mut min_t, mut max_t, mut invalid) = (usize::MAX, 0, 0);
    for s in ds.iter() {
        let s = s?;
        per_class[s.label] += 1;
        min_t = min_t.min(s.frames);
        max_t = max_t.max(s.frames);
        invalid += s.invalid_frames.len();
    }
    print_json(&serde_json::json!({
        "split": ds.manifest.split,
        "topology": ds.manifest.topology,
        "joints": ds.topology.num_joints,
        "channels": ds.manifest.channels,
        "confidence": ds.manifest.confidence,
        "samples": ds.len(),
        "per_class": ds.manifest.class_names.iter().zip(&per_class).collect::<std::collections::BTreeMap<_, _>>(),
        "frames": if ds.is_empty() { serde_json::Value::Null } else { serde_json::json!([min_t, max_t]) },
        "invalid_frames": invalid,
    }))?;
    Ok(0)
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Preset name or topology JSON path.
    #[arg(long)]
    pub topology: Option<String>,
    /// Comma-separated class names.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Last raw channel is a detection confidence.
    #[arg(long)]
    pub confidence: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ConvertConfig {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
    topology: Option<String>,
    classes: Option<Vec<String>>,
    confidence: bool,
}

fn cmd_convert(a: &ConvertArgs) -> Result<i32> {
    let c: ConvertConfig = load_config(a.config.as_deref())?;
    let topology = required(a.topology.clone().or(c.topology), "--topology")?;
    // a topology file is recorded as an absolute path so the manifest can be read from anywhere
    let topology = if Path::new(&topology).exists() {
        std::fs::canonicalize(&topology).map_err(|e| Error::io(&topology, e))?.display().to_string()
    } else {
        topology
    };
    let classes = required(a.classes.clone().or(c.classes), "--classes")?;
    let out = required(a.out.clone().or(c.out), "--out")?;
    let (train, test) = convert_jsonl(
        required(a.input.clone().or(c.input), "--input")?,
        &out,
        &topology,
        &classes,
        a.confidence || c.confidence,
    )?;
    print_json(&serde_json::json!({ "out": out, "train": train.samples.len(), "test": test.samples.len() }))?;
    Ok(0)
}

/// Runs a parsed command, returning the process exit status.
pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::DumpAttn(a) => cmd_dump(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Data(DataCommand::GenerateSynth(a)) => cmd_synth(a),
        Command::Data(DataCommand::Inspect(a)) => cmd_inspect(a),
        Command::Data(DataCommand::Convert(a)) => cmd_convert(a),
    }
}

/// Parses `args`, runs, and maps errors to exit statuses.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INVALID
            }
        }
    }
}
