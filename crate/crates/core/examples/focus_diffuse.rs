//! One focusing / context / diffusion unit on random features, for every
//! focusing mode and context mode.

use bagcn::focus::{fd_forward, ContextMode, FocusDiffuseParams, FocusMode};
use bagcn::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> bagcn::Result<()> {
    let (n, v, t, c, width) = (1, 9, 16, 8, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_fn(&[n, v, t, c], |_| rng.gen_range(-1.0..1.0));
    for focus in [FocusMode::Att, FocusMode::Avg, FocusMode::Max, FocusMode::Off] {
        for context in [ContextMode::Bi, ContextMode::Uni, ContextMode::None] {
            if focus == FocusMode::Off && context != ContextMode::None {
                continue;
            }
            let mut store = ParamStore::new();
            let p = FocusDiffuseParams::register(&mut store, "fd", c, width, focus, context, &mut rng)?;
            let mut g = Graph::new();
            let xv = g.input(&x);
            let out = fd_forward(&mut g, &store, p.as_ref(), xv)?;
            let change = g.tensor(out.out).max_abs_diff(&x);
            let scores = out.scores.map(|s| {
                let d = g.value(s);
                let mean = d.iter().sum::<f64>() / d.len() as f64;
                format!("mean score {mean:.3}")
            });
            println!(
                "{:<4} {:<5} params {:>5}  out {:?}  max change {change:.3}  {}",
                focus.label(),
                context.label(),
                store.iter().map(|(_, p)| p.value.numel()).sum::<usize>(),
                g.shape(out.out),
                scores.unwrap_or_default()
            );
        }
    }
    Ok(())
}
