//! Directed focus/diffusion graphs of a preset skeleton.
//!
//! cargo run --example skeleton_graphs -- [ntu25|kinetics18|synth9|topology.json]

use bagcn::skeleton::{PartitionedAdjacency, SkeletonTopology};

fn main() -> bagcn::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "synth9".into());
    let topo = SkeletonTopology::resolve(&name)?;
    let hops = topo.hop_distances()?;
    println!("{name}: {} joints, center {}, {} bones", topo.num_joints, topo.center, topo.bones.len());
    println!("hops from center {hops:?}");
    for (near, far) in topo.oriented_bones()? {
        println!("  focus {near:>2} -> {far:>2}    diffusion {far:>2} -> {near:>2}");
    }
    let adj = PartitionedAdjacency::new(&topo)?;
    let v = topo.num_joints;
    for (label, g) in [("focus", &adj.focus), ("diffusion", &adj.diffusion)] {
        for (s, name) in ["root", "closer", "far"].iter().enumerate() {
            let edges = g[s].data().iter().filter(|&&x| x != 0.0).count();
            println!("{label:>9} {name:<6} {edges:>3} nonzero of {}", v * v);
        }
    }
    Ok(())
}
