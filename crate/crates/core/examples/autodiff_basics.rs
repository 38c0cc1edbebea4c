//! Records a small computation on the tape and reads back gradients.

use bagcn::{Graph, ParamStore, Tensor};

fn main() -> bagcn::Result<()> {
    let mut store = ParamStore::new();
    let w = store.register("w", Tensor::new(vec![2, 3], vec![0.5, -1.0, 0.25, 1.5, 0.0, -0.5])?, true)?;

    let mut g = Graph::new();
    let x = g.input(&Tensor::new(vec![1, 2], vec![1.0, 2.0])?);
    let wv = g.param(&store, w);
    let h = g.matmul(x, wv)?;
    let a = g.tanh(h);
    let loss = g.softmax_cross_entropy(a, &[2])?;

    println!("activations {:?}", g.value(a));
    println!("loss        {:.6}", g.value(loss)[0]);
    let grads = g.backward(loss)?;
    println!("dL/dw       {:?}", grads.wrt(wv));
    Ok(())
}
