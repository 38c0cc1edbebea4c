//! Trains the default synthetic model on the standard synthetic benchmark.
//!
//! cargo run --release --example train_synthetic -- [seed] [epochs] [lr]

use bagcn::data::Stream;
use bagcn::model::{BagcnModel, ModelConfig};
use bagcn::synth::{synth_sequences, SynthSpec};
use bagcn::skeleton::SkeletonTopology;
use bagcn::train::{train_model, LogRecord, PreparedSet, TrainConfig};

fn main() -> bagcn::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().map_or(0, |s| s.parse().unwrap());
    let epochs: usize = args.get(1).map_or(30, |s| s.parse().unwrap());
    let lr: f64 = args.get(2).map_or(0.05, |s| s.parse().unwrap());

    let spec = SynthSpec::standard(seed);
    let (train, test) = synth_sequences(&spec)?;
    let topo = SkeletonTopology::synth9();
    let train = PreparedSet::new(&train, &topo, Stream::Spatial, spec.frames)?;
    let test = PreparedSet::new(&test, &topo, Stream::Spatial, spec.frames)?;

    let mut model = BagcnModel::build(&ModelConfig::synthetic_default(4), seed)?;
    println!("parameters: {}", model.num_params());
    let cfg = TrainConfig { lr, epochs, lr_decay_epochs: vec![20, 25], seed, ..Default::default() };
    let start = std::time::Instant::now();
    train_model(&mut model, &train, Some(&test), &cfg, &mut |r| {
        if let LogRecord::Epoch { epoch, train_loss, test: Some(m), .. } = r {
            println!("epoch {epoch:2}  loss {train_loss:.4}  test top-1 {:.3}  ({:.1?})", m.top1, start.elapsed());
        }
    })?;
    Ok(())
}
