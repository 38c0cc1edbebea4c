//! Spatial and motion streams trained separately, then fused by summing
//! their class probabilities.

use bagcn::data::Stream;
use bagcn::model::{fuse_two_stream, BagcnModel, ModelConfig};
use bagcn::skeleton::SkeletonTopology;
use bagcn::synth::{synth_sequences, SynthSpec};
use bagcn::train::{predict, train_model, Metrics, PreparedSet, TrainConfig};
use bagcn::Tensor;

fn main() -> bagcn::Result<()> {
    let spec = SynthSpec::standard(0);
    let (train, test) = synth_sequences(&spec)?;
    let topo = SkeletonTopology::synth9();
    let cfg = TrainConfig { lr: 0.05, epochs: 8, lr_decay_epochs: vec![6], ..Default::default() };
    let mut probs = Vec::new();
    let mut labels = Vec::new();
    for stream in [Stream::Spatial, Stream::Motion] {
        let tr = PreparedSet::new(&train, &topo, stream, spec.frames)?;
        let te = PreparedSet::new(&test, &topo, stream, spec.frames)?;
        let mut model = BagcnModel::build(&ModelConfig::synthetic_default(4), 0)?;
        train_model(&mut model, &tr, None, &cfg, &mut |_| {})?;
        let p = predict(&model, &te, 16)?;
        println!("{stream:?}: top-1 {:.3}", Metrics::from_probs(&p, &te.labels, 4).top1);
        probs.push(Tensor::new(vec![te.len(), 4], p)?);
        labels = te.labels;
    }
    let fused = fuse_two_stream(&probs[0], &probs[1])?;
    println!("fused: top-1 {:.3}", Metrics::from_probs(fused.scores.data(), &labels, 4).top1);
    Ok(())
}
