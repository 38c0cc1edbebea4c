//! Structural properties, each checked over random cases by a proptest runner.
//! Shared by the property suite and the acceptance target.

use bagcn::autodiff::{softmax_rows, Graph};
use bagcn::block::{spatial_graph_conv, spatial_graph_conv_unmasked, GraphConvParams};
use bagcn::data::{build_input, SkeletonSequence, Stream};
use bagcn::focus::{attention_scores, fd_forward, focus, ContextMode, FocusDiffuseParams, FocusMode};
use bagcn::model::fuse_two_stream;
use bagcn::skeleton::{build_directed_graphs, compute_bones, DirectedGraphs, PartitionedAdjacency, DEGREE_ALPHA};
use bagcn::tensor::{ParamStore, Tensor};
use bagcn::train::Metrics;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::Rng;

use super::{bits, max_abs_diff, oracle, permute_joints, permute_square, permute_topology, random_permutation, random_tensor, random_tree, rng};

pub type Property = fn(u32) -> Result<(), String>;

/// Every property with its name.
pub const ALL: &[(&str, Property)] = &[
    ("partition completeness", partition_completeness),
    ("direction duality", direction_duality),
    ("normalization bound", normalization_bound),
    ("mask neutrality", mask_neutrality),
    ("graph conv permutation equivariance", graph_conv_equivariance),
    ("attention range", attention_range),
    ("att equals avg under zero scores", att_equals_avg),
    ("wo/F identity", off_identity),
    ("fd_forward permutation equivariance", fd_equivariance),
    ("focus convexity", focus_convexity),
    ("gate monotonicity", gate_monotonicity),
    ("build_input purity", build_input_purity),
    ("top-5 at least top-1", top5_dominates_top1),
    ("logit translation invariance", translation_invariance),
];

fn run<S: Strategy>(cases: u32, strategy: S, check: impl Fn(S::Value) -> Result<(), String>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, |v| check(v).map_err(TestCaseError::fail)).map_err(|e| e.to_string())
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tree_case() -> impl Strategy<Value = (usize, u64)> {
    (1usize..=8, any::<u64>())
}

pub fn partition_completeness(cases: u32) -> Result<(), String> {
    run(cases, tree_case(), |(v, seed)| {
        let topo = random_tree(v, &mut rng(seed));
        let g = build_directed_graphs(&topo).map_err(|e| e.to_string())?;
        let (focus, diffusion) = oracle::directed_subsets(&topo);
        for (lib, want) in [(&g.focus, &focus), (&g.diffusion, &diffusion)] {
            let total = DirectedGraphs::total(lib);
            for r in 0..v {
                for c in 0..v {
                    let expect: f64 = (0..3).map(|s| want[s][r][c]).sum();
                    ensure(total.at(&[r, c]) == expect, || format!("total ({r},{c}) on {topo:?}"))?;
                    let hits = (0..3).filter(|&s| lib[s].at(&[r, c]) != 0.0).count();
                    ensure(hits <= 1, || format!("edge ({r},{c}) in {hits} subsets"))?;
                    for s in 0..3 {
                        ensure(lib[s].at(&[r, c]) == want[s][r][c], || format!("subset {s} ({r},{c}) on {topo:?}"))?;
                    }
                }
            }
            ensure(lib[0] == Tensor::eye(v), || "root subset is not the identity".into())?;
        }
        Ok(())
    })
}

pub fn direction_duality(cases: u32) -> Result<(), String> {
    run(cases, tree_case(), |(v, seed)| {
        let topo = random_tree(v, &mut rng(seed));
        let g = build_directed_graphs(&topo).map_err(|e| e.to_string())?;
        let (f, d) = (DirectedGraphs::total(&g.focus), DirectedGraphs::total(&g.diffusion));
        for i in 0..v {
            for j in 0..v {
                if i != j {
                    ensure(f.at(&[i, j]) == d.at(&[j, i]), || format!("({i},{j}) on {topo:?}"))?;
                }
            }
        }
        ensure(build_directed_graphs(&topo).unwrap() == g, || "construction is not pure".into())
    })
}

pub fn normalization_bound(cases: u32) -> Result<(), String> {
    run(cases, tree_case(), |(v, seed)| {
        let topo = random_tree(v, &mut rng(seed));
        let adj = PartitionedAdjacency::new(&topo).map_err(|e| e.to_string())?;
        for (norm, raw) in adj.focus.iter().chain(&adj.diffusion).zip(adj.raw.focus.iter().chain(&adj.raw.diffusion)) {
            for r in 0..v {
                let deg: f64 = (0..v).map(|c| raw.at(&[r, c])).sum();
                let row: Vec<f64> = (0..v).map(|c| norm.at(&[r, c])).collect();
                ensure(row.iter().all(|&x| (0.0..1.0).contains(&x)), || format!("row {r} = {row:?}"))?;
                let sum: f64 = row.iter().sum();
                ensure(sum <= 1.0, || format!("row {r} sums to {sum}"))?;
                let want = deg / (deg + DEGREE_ALPHA);
                ensure((sum - want).abs() < 1e-15, || format!("row {r}: {sum} vs {want}"))?;
            }
        }
        Ok(())
    })
}

struct ConvCase {
    topo: bagcn::skeleton::SkeletonTopology,
    store: ParamStore,
    params: GraphConvParams,
    x: Tensor,
}

fn conv_case(v: usize, seed: u64, random_masks: bool) -> ConvCase {
    let mut r = rng(seed);
    let topo = random_tree(v, &mut r);
    let (ci, co) = (r.gen_range(1..=4), r.gen_range(1..=4));
    let mut store = ParamStore::new();
    let params = GraphConvParams::register(&mut store, "gc", v, ci, co, &mut r).unwrap();
    if random_masks {
        for id in params.masks {
            let m = random_tensor(&[v, v], &mut r);
            store.get_mut(id).value = m;
        }
    }
    let x = random_tensor(&[r.gen_range(1..=2), v, r.gen_range(1..=3), ci], &mut r);
    ConvCase { topo, store, params, x }
}

fn run_conv(store: &ParamStore, params: &GraphConvParams, adj: &[Tensor; 3], x: &Tensor, masked: bool) -> Tensor {
    let mut g = Graph::new();
    let xv = g.input(x);
    let y = if masked {
        spatial_graph_conv(&mut g, store, xv, adj, params)
    } else {
        spatial_graph_conv_unmasked(&mut g, store, xv, adj, params)
    };
    g.tensor(y.unwrap())
}

pub fn mask_neutrality(cases: u32) -> Result<(), String> {
    run(cases, (1usize..=6, any::<u64>()), |(v, seed)| {
        let c = conv_case(v, seed, false);
        let adj = PartitionedAdjacency::new(&c.topo).unwrap();
        for a in [&adj.focus, &adj.diffusion] {
            let m = run_conv(&c.store, &c.params, a, &c.x, true);
            let u = run_conv(&c.store, &c.params, a, &c.x, false);
            ensure(bits(m.data()) == bits(u.data()), || "masked and unmasked differ".into())?;
        }
        Ok(())
    })
}

pub fn graph_conv_equivariance(cases: u32) -> Result<(), String> {
    run(cases, (1usize..=6, any::<u64>()), |(v, seed)| {
        let c = conv_case(v, seed, true);
        let perm = random_permutation(v, &mut rng(seed ^ 1));
        let adj = PartitionedAdjacency::new(&c.topo).unwrap();
        let padj = PartitionedAdjacency::new(&permute_topology(&c.topo, &perm)).unwrap();
        let mut pstore = c.store.clone();
        for id in c.params.masks {
            pstore.get_mut(id).value = permute_square(&c.store.get(id).value, &perm);
        }
        for (a, pa) in [(&adj.focus, &padj.focus), (&adj.diffusion, &padj.diffusion)] {
            for s in 0..3 {
                ensure(permute_square(&a[s], &perm) == pa[s], || format!("subset {s} does not follow the relabelling"))?;
            }
            let y = run_conv(&c.store, &c.params, a, &c.x, true);
            let py = run_conv(&pstore, &c.params, pa, &permute_joints(&c.x, &perm), true);
            let err = max_abs_diff(permute_joints(&y, &perm).data(), py.data());
            ensure(err <= 1e-12, || format!("equivariance error {err:e}"))?;
        }
        Ok(())
    })
}

fn any_focus() -> impl Strategy<Value = FocusMode> {
    prop_oneof![Just(FocusMode::Max), Just(FocusMode::Avg), Just(FocusMode::Att)]
}

fn any_context() -> impl Strategy<Value = ContextMode> {
    prop_oneof![Just(ContextMode::None), Just(ContextMode::Uni), Just(ContextMode::Bi)]
}

fn fd_unit(focus: FocusMode, context: ContextMode, channels: usize, seed: u64) -> (ParamStore, FocusDiffuseParams) {
    let mut store = ParamStore::new();
    let p = FocusDiffuseParams::register(&mut store, "fd", channels, 4, focus, context, &mut rng(seed))
        .unwrap()
        .unwrap();
    (store, p)
}

fn run_fd(store: &ParamStore, p: Option<&FocusDiffuseParams>, x: &Tensor) -> (Tensor, Option<Tensor>) {
    let mut g = Graph::new();
    let xv = g.input(x);
    let out = fd_forward(&mut g, store, p, xv).unwrap();
    (g.tensor(out.out), out.scores.map(|s| g.tensor(s)))
}

/// `(V, T, C′, seed)`.
fn fd_shape() -> impl Strategy<Value = (usize, usize, usize, u64)> {
    (1usize..=5, 1usize..=4, 1usize..=3, any::<u64>())
}

pub fn attention_range(cases: u32) -> Result<(), String> {
    run(cases, (fd_shape(), -3i32..=3), |((v, t, c, seed), exp)| {
        let (store, p) = fd_unit(FocusMode::Att, ContextMode::Bi, c, seed);
        let x = random_tensor(&[2, v, t, c], &mut rng(seed ^ 2));
        let x = Tensor::from_fn(x.shape(), |i| x.data()[i] * 10f64.powi(exp));
        let mut g = Graph::new();
        let xv = g.input(&x);
        let s = attention_scores(&mut g, &store, &p, xv).unwrap();
        ensure(g.shape(s) == [2, v, t, 1], || "score map shape".into())?;
        ensure(g.value(s).iter().all(|a| (0.0..=1.0).contains(a)), || "score outside [0,1]".into())
    })
}

pub fn att_equals_avg(cases: u32) -> Result<(), String> {
    run(cases, (fd_shape(), any_context()), |((v, t, c, seed), ctx)| {
        let (mut att_store, att) = fd_unit(FocusMode::Att, ctx, c, seed);
        let (mut avg_store, avg) = fd_unit(FocusMode::Avg, ctx, c, seed);
        for (store, p) in [(&mut att_store, &att), (&mut avg_store, &avg)] {
            store.get_mut(p.score_w).value = Tensor::zeros(&[c, 1]);
            store.get_mut(p.score_b).value = Tensor::zeros(&[1]);
        }
        let x = random_tensor(&[2, v, t, c], &mut rng(seed ^ 3));
        let (a, _) = run_fd(&att_store, Some(&att), &x);
        let (b, _) = run_fd(&avg_store, Some(&avg), &x);
        ensure(bits(a.data()) == bits(b.data()), || format!("max diff {:e}", max_abs_diff(a.data(), b.data())))
    })
}

pub fn off_identity(cases: u32) -> Result<(), String> {
    run(cases, fd_shape(), |(v, t, c, seed)| {
        let mut store = ParamStore::new();
        let none = FocusDiffuseParams::register(&mut store, "fd", c, 4, FocusMode::Off, ContextMode::Bi, &mut rng(seed)).unwrap();
        ensure(none.is_none() && store.is_empty(), || "off mode registered parameters".into())?;
        let x = random_tensor(&[1, v, t, c], &mut rng(seed));
        let (y, s) = run_fd(&store, None, &x);
        ensure(bits(y.data()) == bits(x.data()) && s.is_none(), || "off mode changed the input".into())
    })
}

pub fn fd_equivariance(cases: u32) -> Result<(), String> {
    run(cases, (fd_shape(), any_focus(), any_context()), |((v, t, c, seed), f, ctx)| {
        let (store, p) = fd_unit(f, ctx, c, seed);
        let mut r = rng(seed ^ 4);
        let x = random_tensor(&[2, v, t, c], &mut r);
        let perm = random_permutation(v, &mut r);
        let (y, s) = run_fd(&store, Some(&p), &x);
        let (py, ps) = run_fd(&store, Some(&p), &permute_joints(&x, &perm));
        let err = max_abs_diff(permute_joints(&y, &perm).data(), py.data());
        ensure(err <= 1e-12, || format!("output error {err:e}"))?;
        let err = max_abs_diff(permute_joints(&s.unwrap(), &perm).data(), ps.unwrap().data());
        ensure(err <= 1e-12, || format!("score error {err:e}"))
    })
}

pub fn focus_convexity(cases: u32) -> Result<(), String> {
    run(cases, fd_shape(), |(v, t, c, seed)| {
        let (mut store, p) = fd_unit(FocusMode::Att, ContextMode::Bi, c, seed);
        store.get_mut(p.w1).value = Tensor::eye(c);
        let x = random_tensor(&[1, v, t, c], &mut rng(seed ^ 5));
        let mut g = Graph::new();
        let xv = g.input(&x);
        let s = attention_scores(&mut g, &store, &p, xv).unwrap();
        let gs = focus(&mut g, &store, &p, xv, s).unwrap();
        let gs = g.tensor(gs);
        for f in 0..t {
            for k in 0..c {
                let col: Vec<f64> = (0..v).map(|j| x.at(&[0, j, f, k])).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let val = gs.at(&[0, 0, f, k]);
                ensure(val >= lo - 1e-15 && val <= hi + 1e-15, || format!("{val} outside [{lo}, {hi}]"))?;
            }
        }
        Ok(())
    })
}

pub fn gate_monotonicity(cases: u32) -> Result<(), String> {
    run(cases, (fd_shape(), 0.01f64..3.0), |((v, t, c, seed), delta)| {
        let mut r = rng(seed ^ 6);
        let raw = Tensor::from_fn(&[1, v, t, 1], |_| r.gen_range(-5.0..5.0));
        let mut ctx = random_tensor(&[1, 1, t, c], &mut r);
        ctx.data_mut()[0] = 0.5;
        let (j, f) = (r.gen_range(0..v), r.gen_range(0..t));
        let norm = |raw: &Tensor| {
            let mut g = Graph::new();
            let a = g.input(raw);
            let a = g.sigmoid(a);
            let z = g.input(&ctx);
            let fg = g.gate_broadcast(a, z).unwrap();
            let fg = g.tensor(fg);
            (0..c).map(|k| fg.at(&[0, j, f, k]).powi(2)).sum::<f64>().sqrt()
        };
        let mut bumped = raw.clone();
        bumped.set(&[0, j, f, 0], raw.at(&[0, j, f, 0]) + delta);
        let (before, after) = (norm(&raw), norm(&bumped));
        let g_norm = (0..c).map(|k| ctx.at(&[0, 0, f, k]).powi(2)).sum::<f64>();
        ensure(g_norm == 0.0 || after > before, || format!("‖f_g‖ {before} → {after}"))
    })
}

pub fn build_input_purity(cases: u32) -> Result<(), String> {
    run(cases, (tree_case(), 1usize..=5, any::<bool>()), |((v, seed), t, motion)| {
        let mut r = rng(seed);
        let topo = random_tree(v, &mut r);
        let coords = random_tensor(&[t * v * 3], &mut r).into_data();
        let seq = SkeletonSequence::new("p", 0, [1, t, v, 3], false, coords.clone()).unwrap();
        let before = seq.clone();
        let stream = if motion { Stream::Motion } else { Stream::Spatial };
        let a = build_input(&seq, &topo, stream).unwrap();
        let b = build_input(&seq, &topo, stream).unwrap();
        ensure(seq == before, || "input sequence mutated".into())?;
        ensure(a == b, || "two builds differ".into())?;
        let bones = compute_bones(&coords, t, 3, &topo, false).unwrap();
        ensure(bones == oracle::bones(&coords, t, 3, &topo), || "bones differ from the loop oracle".into())?;
        if !motion {
            for f in 0..t {
                for j in 0..v {
                    for k in 0..3 {
                        let (x, bn) = (a[0].at(&[j, f, k]), a[0].at(&[j, f, 3 + k]));
                        ensure(x == coords[(f * v + j) * 3 + k], || "joint channel".into())?;
                        ensure(bn == bones[(f * v + j) * 3 + k], || "bone channel".into())?;
                    }
                }
            }
        }
        Ok(())
    })
}

pub fn top5_dominates_top1(cases: u32) -> Result<(), String> {
    run(cases, (1usize..=12, 1usize..=10, any::<u64>()), |(k, n, seed)| {
        let mut r = rng(seed);
        let logits: Vec<f64> = (0..n * k).map(|_| r.gen_range(-3.0..3.0)).collect();
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..k)).collect();
        let m = Metrics::from_probs(&softmax_rows(&logits, k), &labels, k);
        ensure((0.0..=1.0).contains(&m.top1) && (0.0..=1.0).contains(&m.top5), || format!("{m:?}"))?;
        ensure(m.top5 >= m.top1, || format!("{m:?}"))?;
        ensure(k > 5 || m.top5 == 1.0, || format!("K = {k} but top-5 = {}", m.top5))
    })
}

pub fn translation_invariance(cases: u32) -> Result<(), String> {
    // multiples of 1/8 keep every shift exact
    let row = |k: usize| prop::collection::vec(-64i32..=64, k);
    let case = (1usize..=6).prop_flat_map(move |k| (row(k), row(k), -800i32..=800));
    run(cases, case, |(a, b, shift)| {
        let k = a.len();
        let to_f = |v: &[i32], c: i32| v.iter().map(|&x| (x + c) as f64 / 8.0).collect::<Vec<f64>>();
        let (la, lb, la_shift) = (to_f(&a, 0), to_f(&b, 0), to_f(&a, shift));
        ensure(bagcn::model::argmax(&la) == bagcn::model::argmax(&la_shift), || "argmax moved".into())?;
        let t = |v: &[f64]| Tensor::new(vec![1, k], softmax_rows(v, k)).unwrap();
        let plain = fuse_two_stream(&t(&la), &t(&lb)).unwrap();
        let shifted = fuse_two_stream(&t(&la_shift), &t(&lb)).unwrap();
        ensure(plain.predictions == shifted.predictions, || "fused prediction moved".into())
    })
}
