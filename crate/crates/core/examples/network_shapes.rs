//! Shape walk and parameter count of the full-size network presets.

use bagcn::model::{BagcnModel, ModelConfig};
use bagcn::{Graph, Mode, Tensor};

fn main() -> bagcn::Result<()> {
    for (name, cfg, v) in [("ntu", ModelConfig::ntu_default(), 25), ("kinetics", ModelConfig::kinetics_default(), 18)] {
        let model = BagcnModel::build(&cfg, 0)?;
        println!("{name}: {} parameters, {} classes", model.num_params(), cfg.num_classes);
        let x = Tensor::zeros(&[1, v, 300, cfg.in_channels]);
        let mut g = Graph::new();
        let out = model.forward(&mut g, &x, 1, Mode::Eval)?;
        for (b, shape) in cfg.blocks.iter().zip(&out.trace) {
            println!("  {:>3} -> {:>3}  stride {}  out {shape:?}", b.c_in, b.c_out, b.stride);
        }
        println!("  pooled {:?}  logits {:?}", g.shape(out.features), g.shape(out.logits));
    }
    Ok(())
}
