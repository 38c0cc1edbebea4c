//! Skeleton sequences, the manifest + blob dataset format, and model inputs.
//!
//! A dataset is a JSON manifest plus a binary blob. Each sample record in
//! the blob is an 8-byte little-endian count `n` followed by `n`
//! little-endian `f32` values laid out `[bodies, T, V, C_raw]` row-major.
//! The manifest gives each sample's byte offset and dimensions; the count
//! prefix must agree with them. Values are widened to `f64` on load.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{compute_bones, SkeletonTopology};
use crate::tensor::Tensor;

/// One sample: per-body, per-frame, per-joint raw channel vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub label: usize,
    pub frames: usize,
    pub joints: usize,
    pub channels: usize,
    pub bodies: usize,
    /// Last raw channel is a detection confidence (2D + score layout).
    pub confidence: bool,
    /// `[bodies, T, V, C]` row-major.
    pub coords: Vec<f64>,
    /// Frames that contained non-finite values and were zero-filled.
    pub invalid_frames: Vec<usize>,
}

impl SkeletonSequence {
    pub fn new(
        id: impl Into<String>,
        label: usize,
        dims: [usize; 4],
        confidence: bool,
        coords: Vec<f64>,
    ) -> Result<Self> {
        let [bodies, frames, joints, channels] = dims;
        let id = id.into();
        if bodies == 0 || frames == 0 || joints == 0 || channels == 0 {
            return Err(Error::Sample { id, reason: format!("empty dimension in {dims:?}") });
        }
        if coords.len() != bodies * frames * joints * channels {
            return Err(Error::Sample {
                id,
                reason: format!("{} values for dims {dims:?}", coords.len()),
            });
        }
        let mut seq = SkeletonSequence {
            id,
            label,
            frames,
            joints,
            channels,
            bodies,
            confidence,
            coords,
            invalid_frames: Vec::new(),
        };
        seq.zero_fill_invalid();
        Ok(seq)
    }

    /// Zero-fills every frame holding a NaN/Inf (across all bodies) and
    /// records its index.
    fn zero_fill_invalid(&mut self) {
        let per_frame = self.joints * self.channels;
        let per_body = self.frames * per_frame;
        for t in 0..self.frames {
            let bad = (0..self.bodies).any(|b| {
                let o = b * per_body + t * per_frame;
                self.coords[o..o + per_frame].iter().any(|v| !v.is_finite())
            });
            if bad {
                for b in 0..self.bodies {
                    let o = b * per_body + t * per_frame;
                    self.coords[o..o + per_frame].fill(0.0);
                }
                self.invalid_frames.push(t);
            }
        }
    }

    /// `[T, V, C]` slice of one body.
    pub fn body(&self, b: usize) -> &[f64] {
        let n = self.frames * self.joints * self.channels;
        &self.coords[b * n..(b + 1) * n]
    }

    pub fn at(&self, body: usize, t: usize, v: usize, c: usize) -> f64 {
        self.coords[((body * self.frames + t) * self.joints + v) * self.channels + c]
    }
}

/// Cyclically repeats short sequences and truncates long ones to `target` frames.
pub fn pad_resize(seq: &SkeletonSequence, target: usize) -> Result<SkeletonSequence> {
    if target == 0 {
        return Err(Error::invalid("pad_resize: target length must be at least 1"));
    }
    let per_frame = seq.joints * seq.channels;
    let mut coords = Vec::with_capacity(seq.bodies * target * per_frame);
    for b in 0..seq.bodies {
        let body = seq.body(b);
        for t in 0..target {
            let src = t % seq.frames;
            coords.extend_from_slice(&body[src * per_frame..(src + 1) * per_frame]);
        }
    }
    let invalid: HashSet<usize> = seq.invalid_frames.iter().copied().collect();
    Ok(SkeletonSequence {
        id: seq.id.clone(),
        label: seq.label,
        frames: target,
        joints: seq.joints,
        channels: seq.channels,
        bodies: seq.bodies,
        confidence: seq.confidence,
        coords,
        invalid_frames: (0..target).filter(|t| invalid.contains(&(t % seq.frames))).collect(),
    })
}

/// Input modality.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    /// Joints ⊕ bones.
    Spatial,
    /// Frame differences of joints ⊕ frame differences of bones.
    Motion,
}

impl std::str::FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Stream::Spatial),
            "motion" => Ok(Stream::Motion),
            other => Err(Error::invalid(format!("unknown stream `{other}`"))),
        }
    }
}

/// Next-frame difference of a `[T, V, C]` buffer; the last frame is zero.
/// A trailing confidence channel is copied through unchanged.
fn frame_difference(x: &[f64], frames: usize, per_frame: usize, channels: usize, confidence: bool) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for t in 0..frames.saturating_sub(1) {
        for i in 0..per_frame {
            out[t * per_frame + i] = x[(t + 1) * per_frame + i] - x[t * per_frame + i];
        }
    }
    if confidence {
        for i in (channels - 1..x.len()).step_by(channels) {
            out[i] = x[i];
        }
    }
    out
}

/// Model input of one body, `[V, T, 2·C_raw]`.
pub fn build_body_input(seq: &SkeletonSequence, body: usize, topo: &SkeletonTopology, stream: Stream) -> Result<Tensor> {
    if topo.num_joints != seq.joints {
        return Err(Error::Sample {
            id: seq.id.clone(),
            reason: format!("{} joints but topology has {}", seq.joints, topo.num_joints),
        });
    }
    let (t_len, v, c) = (seq.frames, seq.joints, seq.channels);
    let joints = seq.body(body);
    let bones = compute_bones(joints, t_len, c, topo, seq.confidence)?;
    let (a, b) = match stream {
        Stream::Spatial => (joints.to_vec(), bones),
        Stream::Motion => (
            frame_difference(joints, t_len, v * c, c, seq.confidence),
            frame_difference(&bones, t_len, v * c, c, seq.confidence),
        ),
    };
    let mut out = Tensor::zeros(&[v, t_len, 2 * c]);
    let data = out.data_mut();
    for t in 0..t_len {
        for j in 0..v {
            let src = (t * v + j) * c;
            let dst = (j * t_len + t) * 2 * c;
            data[dst..dst + c].copy_from_slice(&a[src..src + c]);
            data[dst + c..dst + 2 * c].copy_from_slice(&b[src..src + c]);
        }
    }
    Ok(out)
}

/// Model inputs of every body of a sample.
pub fn build_input(seq: &SkeletonSequence, topo: &SkeletonTopology, stream: Stream) -> Result<Vec<Tensor>> {
    (0..seq.bodies).map(|b| build_body_input(seq, b, topo, stream)).collect()
}

/// A batch ready for the model.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[N·bodies, V, T, C]`.
    pub input: Tensor,
    pub labels: Vec<usize>,
    pub bodies: usize,
    pub ids: Vec<String>,
}

/// Stacks samples with equal frame and body counts.
pub fn make_batch(seqs: &[&SkeletonSequence], topo: &SkeletonTopology, stream: Stream) -> Result<Batch> {
    let first = seqs.first().ok_or_else(|| Error::invalid("empty batch"))?;
    let (bodies, frames, channels) = (first.bodies, first.frames, first.channels);
    let mut data = Vec::new();
    for s in seqs {
        if s.bodies != bodies || s.frames != frames || s.channels != channels {
            return Err(Error::Sample {
                id: s.id.clone(),
                reason: "frame, body or channel count differs within the batch".into(),
            });
        }
        for t in build_input(s, topo, stream)? {
            data.extend_from_slice(t.data());
        }
    }
    let input = Tensor::new(vec![seqs.len() * bodies, topo.num_joints, frames, 2 * channels], data)?;
    Ok(Batch {
        input,
        labels: seqs.iter().map(|s| s.label).collect(),
        bodies,
        ids: seqs.iter().map(|s| s.id.clone()).collect(),
    })
}

/// Train or test partition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub label: usize,
    /// Byte offset of the sample record inside the blob.
    pub offset: u64,
    /// Number of values in the record, `bodies·T·V·C_raw`.
    pub length: usize,
    pub frames: usize,
    #[serde(default = "one")]
    pub bodies: usize,
    /// Frames zero-filled at ingestion.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invalid_frames: Vec<usize>,
}

fn one() -> usize {
    1
}

impl SampleEntry {
    fn len(&self, joints: usize, channels: usize) -> usize {
        self.bodies * self.frames * joints * channels
    }
}

/// Index of one split of a dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Preset name or topology file path (relative paths resolve against the manifest).
    pub topology: String,
    /// Blob file, relative to the manifest.
    pub blob: String,
    pub split: Split,
    pub channels: usize,
    #[serde(default)]
    pub confidence: bool,
    pub class_names: Vec<String>,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(&s.id) {
                return Err(Error::Sample { id: s.id.clone(), reason: "duplicate id in manifest".into() });
            }
            if s.label >= self.class_names.len() {
                return Err(Error::Sample {
                    id: s.id.clone(),
                    reason: format!("label {} outside {} classes", s.label, self.class_names.len()),
                });
            }
            if s.frames == 0 || s.bodies == 0 {
                return Err(Error::Sample { id: s.id.clone(), reason: "empty sample".into() });
            }
        }
        if self.confidence && self.channels < 2 {
            return Err(Error::invalid("a confidence channel needs at least one coordinate channel"));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

/// Checks that no id appears in both splits.
pub fn check_disjoint(train: &DatasetManifest, test: &DatasetManifest) -> Result<()> {
    let ids: HashSet<&String> = train.samples.iter().map(|s| &s.id).collect();
    match test.samples.iter().find(|s| ids.contains(&s.id)) {
        Some(s) => Err(Error::Sample { id: s.id.clone(), reason: "present in both splits".into() }),
        None => Ok(()),
    }
}

/// An opened dataset split. Samples are decoded on access.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub topology: SkeletonTopology,
    blob: Vec<u8>,
}

fn resolve_relative(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

impl Dataset {
    pub fn open(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        let topology = match manifest.topology.as_str() {
            "ntu25" | "kinetics18" | "synth9" => SkeletonTopology::resolve(&manifest.topology)?,
            p => SkeletonTopology::load(resolve_relative(base, p))
                .map_err(|e| Error::Topology(format!("unknown topology `{p}`: {e}")))?,
        };
        let blob_path = resolve_relative(base, &manifest.blob);
        let blob = std::fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        Ok(Dataset { manifest, topology, blob })
    }

    pub fn len(&self) -> usize {
        self.manifest.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> Result<SkeletonSequence> {
        let e = &self.manifest.samples[i];
        let (v, c) = (self.topology.num_joints, self.manifest.channels);
        let want = e.len(v, c);
        let bad = |reason: String| Error::Sample { id: e.id.clone(), reason };
        if e.length != want {
            return Err(bad(format!("declared length {} but dims give {want}", e.length)));
        }
        let start = e.offset as usize;
        let header = self
            .blob
            .get(start..start + 8)
            .ok_or_else(|| bad("blob truncated before record header".into()))?;
        let n = u64::from_le_bytes(header.try_into().unwrap()) as usize;
        if n != want {
            return Err(bad(format!("record holds {n} values but the manifest declares {want}")));
        }
        let body = self
            .blob
            .get(start + 8..start + 8 + 4 * n)
            .ok_or_else(|| bad("blob truncated inside record".into()))?;
        let coords = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let mut seq =
            SkeletonSequence::new(e.id.clone(), e.label, [e.bodies, e.frames, v, c], self.manifest.confidence, coords)?;
        if let Some(&t) = e.invalid_frames.iter().find(|&&t| t >= e.frames) {
            return Err(bad(format!("invalid frame {t} outside {} frames", e.frames)));
        }
        let mut flagged = e.invalid_frames.clone();
        flagged.append(&mut seq.invalid_frames);
        flagged.sort_unstable();
        flagged.dedup();
        seq.invalid_frames = flagged;
        Ok(seq)
    }

    /// Samples in manifest order.
    pub fn iter(&self) -> impl Iterator<Item = Result<SkeletonSequence>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    pub fn load_all(&self) -> Result<Vec<SkeletonSequence>> {
        self.iter().collect()
    }
}

pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::open(manifest_path)
}

/// Appends sample records to a blob and builds the matching manifests.
#[derive(Debug, Default)]
pub struct BlobWriter {
    bytes: Vec<u8>,
}

impl BlobWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, seq: &SkeletonSequence) -> SampleEntry {
        let offset = self.bytes.len() as u64;
        self.bytes.extend_from_slice(&(seq.coords.len() as u64).to_le_bytes());
        for &v in &seq.coords {
            self.bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        SampleEntry {
            id: seq.id.clone(),
            label: seq.label,
            offset,
            length: seq.coords.len(),
            frames: seq.frames,
            bodies: seq.bodies,
            invalid_frames: seq.invalid_frames.clone(),
        }
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, &self.bytes).map_err(|e| Error::io(path, e))
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `train.json`, `test.json` and a shared `data.bin` into `dir`.
pub fn write_split_dataset(
    dir: impl AsRef<Path>,
    topology: &str,
    class_names: &[String],
    train: &[SkeletonSequence],
    test: &[SkeletonSequence],
) -> Result<(DatasetManifest, DatasetManifest)> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = train.first().or(test.first());
    let (channels, confidence) = first.map_or((3, false), |s| (s.channels, s.confidence));
    let mut blob = BlobWriter::new();
    let mut manifest = |split, seqs: &[SkeletonSequence]| DatasetManifest {
        topology: topology.to_string(),
        blob: "data.bin".into(),
        split,
        channels,
        confidence,
        class_names: class_names.to_vec(),
        samples: seqs.iter().map(|s| blob.push(s)).collect(),
    };
    let train_m = manifest(Split::Train, train);
    let test_m = manifest(Split::Test, test);
    train_m.validate()?;
    test_m.validate()?;
    check_disjoint(&train_m, &test_m)?;
    blob.write(dir.join("data.bin"))?;
    write_manifest(&train_m, dir.join("train.json"))?;
    write_manifest(&test_m, dir.join("test.json"))?;
    Ok((train_m, test_m))
}

/// One line of the raw JSON-lines interchange format. `coords` is nested
/// `[bodies][T][V][C]`; `null` marks a missing value.
#[derive(Clone, Debug, Deserialize)]
pub struct RawSample {
    pub id: String,
    pub label: usize,
    pub split: Split,
    pub coords: Vec<Vec<Vec<Vec<Option<f64>>>>>,
}

impl RawSample {
    pub fn into_sequence(self, confidence: bool) -> Result<SkeletonSequence> {
        let bodies = self.coords.len();
        let frames = self.coords.first().map_or(0, |b| b.len());
        let joints = self.coords.first().and_then(|b| b.first()).map_or(0, |f| f.len());
        let channels = self.coords.first().and_then(|b| b.first()).and_then(|f| f.first()).map_or(0, |j| j.len());
        let mut flat = Vec::with_capacity(bodies * frames * joints * channels);
        for body in &self.coords {
            for frame in body {
                for joint in frame {
                    if frame.len() != joints || joint.len() != channels || body.len() != frames {
                        return Err(Error::Sample { id: self.id, reason: "ragged coordinate array".into() });
                    }
                    flat.extend(joint.iter().map(|v| v.unwrap_or(f64::NAN)));
                }
            }
        }
        SkeletonSequence::new(self.id, self.label, [bodies, frames, joints, channels], confidence, flat)
    }
}

/// Converts a JSON-lines file of [`RawSample`]s into a dataset directory.
pub fn convert_jsonl(
    input: impl AsRef<Path>,
    dir: impl AsRef<Path>,
    topology: &str,
    class_names: &[String],
    confidence: bool,
) -> Result<(DatasetManifest, DatasetManifest)> {
    let input = input.as_ref();
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let topo = SkeletonTopology::resolve(topology)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let raw: RawSample = serde_json::from_str(line)?;
        let split = raw.split;
        let seq = raw.into_sequence(confidence)?;
        if seq.joints != topo.num_joints {
            return Err(Error::Sample {
                id: seq.id,
                reason: format!("{} joints but topology has {}", seq.joints, topo.num_joints),
            });
        }
        match split {
            Split::Train => train.push(seq),
            Split::Test => test.push(seq),
        }
    }
    write_split_dataset(dir, topology, class_names, &train, &test)
}
