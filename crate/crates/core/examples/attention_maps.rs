//! Trains an attention model briefly, then reports which joints the last
//! block attends to for each class.

use bagcn::attention::{class_joint_means, dump_attention, DEFAULT_THRESHOLD};
use bagcn::data::Stream;
use bagcn::model::{BagcnModel, ModelConfig};
use bagcn::skeleton::SkeletonTopology;
use bagcn::synth::{synth_sequences, SynthSpec};
use bagcn::train::{train_model, PreparedSet, TrainConfig};

fn main() -> bagcn::Result<()> {
    let spec = SynthSpec::standard(0);
    let (train, test) = synth_sequences(&spec)?;
    let topo = SkeletonTopology::synth9();
    let train = PreparedSet::new(&train, &topo, Stream::Spatial, spec.frames)?;
    let test = PreparedSet::new(&test, &topo, Stream::Spatial, spec.frames)?;
    let mut model = BagcnModel::build(&ModelConfig::synthetic_default(4), 0)?;
    let cfg = TrainConfig { lr: 0.05, epochs: 12, lr_decay_epochs: vec![8], ..Default::default() };
    let summary = train_model(&mut model, &train, Some(&test), &cfg, &mut |_| {})?;
    println!("test top-1 {:.3}", summary.final_test.map_or(0.0, |m| m.top1));

    let maps = dump_attention(&model, &test, None, 16)?;
    for (c, row) in class_joint_means(&maps, &test.labels, 4).iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:.2}")).collect();
        println!("class {c} moves {:?}: {}", spec.signatures[c].joints, cells.join(" "));
    }
    let active = maps[0].activated(DEFAULT_THRESHOLD);
    println!("{} frame 0 joints above {DEFAULT_THRESHOLD}: {:?}", maps[0].sample_id, active[0].joints);
    Ok(())
}
