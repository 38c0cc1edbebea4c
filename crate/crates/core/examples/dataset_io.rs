//! Writes the synthetic benchmark as a manifest + blob dataset, reads it
//! back, and converts a hand-written JSON-lines file with a missing value.

use bagcn::data::{convert_jsonl, Dataset};
use bagcn::synth::{synth_generate, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("bagcn-dataset-example");
    let (train, test) = synth_generate(&SynthSpec::standard(0), &dir)?;
    println!("wrote {} train / {} test samples to {}", train.samples.len(), test.samples.len(), dir.display());

    let ds = Dataset::open(dir.join("train.json"))?;
    let first = ds.get(0)?;
    println!("{}: label {}, {} frames × {} joints × {} channels", first.id, first.label, first.frames, first.joints, first.channels);

    let frame: Vec<Vec<Option<f64>>> = (0..9).map(|j| vec![Some(j as f64 * 0.1), Some(0.0), Some(1.0)]).collect();
    let mut broken = frame.clone();
    broken[3][1] = None;
    let line = serde_json::json!({"id": "raw-0", "label": 0, "split": "train", "coords": [[frame, broken]]});
    let raw = dir.join("raw.jsonl");
    std::fs::write(&raw, format!("{line}\n"))?;
    convert_jsonl(&raw, dir.join("converted"), "synth9", &["wave".into()], false)?;
    let s = Dataset::open(dir.join("converted/train.json"))?.get(0)?;
    println!("converted {}: zero-filled frames {:?}", s.id, s.invalid_frames);
    Ok(())
}
