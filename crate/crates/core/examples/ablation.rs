//! Short focusing/context ablation on the synthetic benchmark.
//!
//! cargo run --release --example ablation -- [epochs] [seeds]

use bagcn::ablation::{focus_and_context_grid, render_table, run_ablation};
use bagcn::data::Stream;
use bagcn::model::ModelConfig;
use bagcn::skeleton::SkeletonTopology;
use bagcn::synth::{synth_sequences, SynthSpec};
use bagcn::train::{PreparedSet, TrainConfig};

fn main() -> bagcn::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let epochs = args.first().copied().unwrap_or(10);
    let seeds: Vec<u64> = (0..args.get(1).copied().unwrap_or(1) as u64).collect();

    let spec = SynthSpec::standard(0);
    let (train, test) = synth_sequences(&spec)?;
    let topo = SkeletonTopology::synth9();
    let train = PreparedSet::new(&train, &topo, Stream::Spatial, spec.frames)?;
    let test = PreparedSet::new(&test, &topo, Stream::Spatial, spec.frames)?;
    let cfg = TrainConfig { lr: 0.05, epochs, lr_decay_epochs: vec![epochs * 2 / 3], ..Default::default() };
    let rows = run_ablation(&focus_and_context_grid(), &seeds, &ModelConfig::synthetic_default(4), &cfg, &train, &test)?;
    print!("{}", render_table(&rows));
    Ok(())
}
