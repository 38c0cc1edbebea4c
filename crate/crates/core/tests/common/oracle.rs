//! Dense loop implementations used as references.

use bagcn::skeleton::SkeletonTopology;
use bagcn::tensor::Tensor;

/// Hop distances by repeated relaxation over the bone list.
pub fn relaxed_hops(topo: &SkeletonTopology) -> Vec<usize> {
    let mut d = vec![usize::MAX; topo.num_joints];
    d[topo.center] = 0;
    loop {
        let mut changed = false;
        for &[a, b] in &topo.bones {
            for (x, y) in [(a, b), (b, a)] {
                if d[x] != usize::MAX && d[x] + 1 < d[y] {
                    d[y] = d[x] + 1;
                    changed = true;
                }
            }
        }
        if !changed {
            return d;
        }
    }
}

/// Raw (focus, diffusion) subset matrices `[root, closer, far]`, each `V×V`
/// with rows as receivers.
pub fn directed_subsets(topo: &SkeletonTopology) -> ([Vec<Vec<f64>>; 3], [Vec<Vec<f64>>; 3]) {
    let v = topo.num_joints;
    let d = relaxed_hops(topo);
    let zero = || vec![vec![0.0; v]; v];
    let mut focus = [zero(), zero(), zero()];
    let mut diffusion = [zero(), zero(), zero()];
    for i in 0..v {
        focus[0][i][i] = 1.0;
        diffusion[0][i][i] = 1.0;
    }
    for &[a, b] in &topo.bones {
        let (near, far) = if d[a] < d[b] { (a, b) } else { (b, a) };
        focus[1][far][near] = 1.0;
        diffusion[2][near][far] = 1.0;
    }
    (focus, diffusion)
}

/// `out[n,v,t,o] = Σ_s Σ_u Σ_c M_s[v,u] Â_s[v,u] X[n,u,t,c] W_s[c,o]`.
pub fn graph_conv(x: &Tensor, adj: &[Tensor; 3], masks: &[Tensor; 3], weights: &[Tensor; 3]) -> Tensor {
    let s = x.shape();
    let (n, v, t, ci) = (s[0], s[1], s[2], s[3]);
    let co = weights[0].shape()[1];
    let mut out = Tensor::zeros(&[n, v, t, co]);
    for b in 0..n {
        for r in 0..v {
            for f in 0..t {
                for o in 0..co {
                    let mut acc = 0.0;
                    for k in 0..3 {
                        for u in 0..v {
                            let a = masks[k].at(&[r, u]) * adj[k].at(&[r, u]);
                            for c in 0..ci {
                                acc += a * x.at(&[b, u, f, c]) * weights[k].at(&[c, o]);
                            }
                        }
                    }
                    out.set(&[b, r, f, o], acc);
                }
            }
        }
    }
    out
}

/// `f_out[v,t] = [f_in[v,t], a[v,t]·G_ST[t]] · W_3`.
pub fn diffuse(f_in: &Tensor, g_st: &Tensor, scores: &Tensor, w3: &Tensor) -> Tensor {
    let s = f_in.shape();
    let (n, v, t, c) = (s[0], s[1], s[2], s[3]);
    let ch = g_st.shape()[3];
    let mut out = Tensor::zeros(&[n, v, t, c]);
    for b in 0..n {
        for j in 0..v {
            for f in 0..t {
                let a = scores.at(&[b, j, f, 0]);
                for o in 0..c {
                    let mut acc = 0.0;
                    for k in 0..c {
                        acc += f_in.at(&[b, j, f, k]) * w3.at(&[k, o]);
                    }
                    for k in 0..ch {
                        acc += a * g_st.at(&[b, 0, f, k]) * w3.at(&[c + k, o]);
                    }
                    out.set(&[b, j, f, o], acc);
                }
            }
        }
    }
    out
}

/// Attention-weighted joint pooling followed by `W_1`, `[N, 1, T, C]`.
pub fn att_focus(f_in: &Tensor, scores: &Tensor, w1: &Tensor) -> Tensor {
    let s = f_in.shape();
    let (n, v, t, c) = (s[0], s[1], s[2], s[3]);
    let mut out = Tensor::zeros(&[n, 1, t, c]);
    for b in 0..n {
        for f in 0..t {
            let total: f64 = (0..v).map(|j| scores.at(&[b, j, f, 0])).sum();
            for o in 0..c {
                let mut acc = 0.0;
                for k in 0..c {
                    let pooled: f64 = (0..v).map(|j| scores.at(&[b, j, f, 0]) * f_in.at(&[b, j, f, k])).sum::<f64>() / total;
                    acc += pooled * w1.at(&[k, o]);
                }
                out.set(&[b, 0, f, o], acc);
            }
        }
    }
    out
}

/// Bone of joint `j` at frame `t` is `coords(j) − coords(parent(j))`,
/// parent found by walking the hop distances.
pub fn bones(coords: &[f64], frames: usize, channels: usize, topo: &SkeletonTopology) -> Vec<f64> {
    let v = topo.num_joints;
    let d = relaxed_hops(topo);
    let mut out = vec![0.0; coords.len()];
    for &[a, b] in &topo.bones {
        let (p, j) = if d[a] < d[b] { (a, b) } else { (b, a) };
        for t in 0..frames {
            for c in 0..channels {
                out[(t * v + j) * channels + c] = coords[(t * v + j) * channels + c] - coords[(t * v + p) * channels + c];
            }
        }
    }
    out
}

/// `raw / (row sum + α)` entry by entry.
pub fn normalize(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    raw.iter()
        .map(|row| {
            let deg: f64 = row.iter().sum::<f64>() + 1e-4;
            row.iter().map(|x| x / deg).collect()
        })
        .collect()
}

pub fn matmul(x: &Tensor, w: &Tensor) -> Tensor {
    let s = x.shape().to_vec();
    let (k, n) = (w.shape()[0], w.shape()[1]);
    let mut shape = s;
    *shape.last_mut().unwrap() = n;
    Tensor::from_fn(&shape, |i| {
        let (r, o) = (i / n, i % n);
        (0..k).map(|p| x.data()[r * k + p] * w.at(&[p, o])).sum()
    })
}

/// Worst error of the library graph convolution against [`graph_conv`] over
/// random trees with up to six joints, random masks and both graph directions.
pub fn graph_conv_agreement(instances: usize, seed: u64) -> f64 {
    use bagcn::autodiff::Graph;
    use bagcn::block::{spatial_graph_conv, GraphConvParams};
    use bagcn::skeleton::PartitionedAdjacency;
    use bagcn::tensor::ParamStore;
    use rand::Rng;

    let mut r = super::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let v = r.gen_range(1..=6);
        let topo = super::random_tree(v, &mut r);
        let (ci, co) = (r.gen_range(1..=5), r.gen_range(1..=5));
        let mut store = ParamStore::new();
        let p = GraphConvParams::register(&mut store, "gc", v, ci, co, &mut r).unwrap();
        for id in p.masks {
            store.get_mut(id).value = super::random_tensor(&[v, v], &mut r);
        }
        let x = super::random_tensor(&[r.gen_range(1..=2), v, r.gen_range(1..=4), ci], &mut r);
        let adj = PartitionedAdjacency::new(&topo).unwrap();
        let (focus, diffusion) = directed_subsets(&topo);
        let masks = p.masks.map(|id| store.get(id).value.clone());
        let weights = p.weights.map(|id| store.get(id).value.clone());
        for (lib, raw) in [(&adj.focus, &focus), (&adj.diffusion, &diffusion)] {
            let dense: [Tensor; 3] = [0, 1, 2].map(|s| {
                let n = normalize(&raw[s]);
                Tensor::from_fn(&[v, v], |i| n[i / v][i % v])
            });
            for s in 0..3 {
                worst = worst.max(super::max_abs_diff(lib[s].data(), dense[s].data()));
            }
            let mut g = Graph::new();
            let xv = g.input(&x);
            let y = spatial_graph_conv(&mut g, &store, xv, lib, &p).unwrap();
            let want = graph_conv(&x, &dense, &masks, &weights);
            worst = worst.max(super::max_abs_diff(g.value(y), want.data()));
        }
    }
    worst
}

/// Worst error of the library diffusion (V=3, T=2, C′=2, Ĉ=4) against [`diffuse`],
/// and of a context-free attentive `fd_forward` against the composed loops.
pub fn diffusion_agreement(instances: usize, seed: u64) -> f64 {
    use bagcn::autodiff::Graph;
    use bagcn::focus::{diffuse as lib_diffuse, fd_forward, ContextMode, FocusDiffuseParams, FocusMode};
    use bagcn::tensor::ParamStore;

    let mut r = super::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (v, t, c, ch) = (3, 2, 2, 4);
        let mut store = ParamStore::new();
        let p = FocusDiffuseParams::register(&mut store, "fd", c, ch, FocusMode::Att, ContextMode::Bi, &mut r)
            .unwrap()
            .unwrap();
        let f_in = super::random_tensor(&[1, v, t, c], &mut r);
        let g_st = super::random_tensor(&[1, 1, t, ch], &mut r);
        let scores = super::random_tensor_in(&[1, v, t, 1], 0.0, 1.0, &mut r);
        let mut g = Graph::new();
        let (fv, gv, sv) = (g.input(&f_in), g.input(&g_st), g.input(&scores));
        let out = lib_diffuse(&mut g, &store, &p, fv, gv, sv).unwrap();
        let want = diffuse(&f_in, &g_st, &scores, &store.get(p.w3).value);
        worst = worst.max(super::max_abs_diff(g.value(out), want.data()));

        let mut store = ParamStore::new();
        let p = FocusDiffuseParams::register(&mut store, "fd", c, ch, FocusMode::Att, ContextMode::None, &mut r)
            .unwrap()
            .unwrap();
        let mut g = Graph::new();
        let fv = g.input(&f_in);
        let out = fd_forward(&mut g, &store, Some(&p), fv).unwrap();
        let a = g.tensor(out.scores.unwrap());
        let raw: Vec<f64> = (0..v * t)
            .map(|i| {
                let w = &store.get(p.score_w).value;
                let z: f64 = (0..c).map(|k| f_in.data()[i * c + k] * w.data()[k]).sum::<f64>() + store.get(p.score_b).value.data()[0];
                1.0 / (1.0 + (-z).exp())
            })
            .collect();
        worst = worst.max(super::max_abs_diff(a.data(), &raw));
        let gs = att_focus(&f_in, &a, &store.get(p.w1).value);
        let ghat = matmul(&gs, &store.get(p.w2).value);
        let padded = Tensor::from_fn(&[1, 1, t, ch], |i| {
            let (f, k) = (i / ch, i % ch);
            if k < c { ghat.at(&[0, 0, f, k]) } else { 0.0 }
        });
        let want = diffuse(&f_in, &padded, &a, &store.get(p.w3).value);
        worst = worst.max(super::max_abs_diff(g.value(out.out), want.data()));
    }
    worst
}
