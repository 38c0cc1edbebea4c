#![allow(dead_code)]

pub mod invariants;
pub mod oracle;

use bagcn::skeleton::SkeletonTopology;
use bagcn::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in [-1, 1].
pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..=1.0))
}

pub fn random_tensor_in(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Random labelled tree on `v` joints with a random center.
pub fn random_tree(v: usize, rng: &mut impl Rng) -> SkeletonTopology {
    let mut labels: Vec<usize> = (0..v).collect();
    labels.shuffle(rng);
    let bones = (1..v).map(|i| [labels[rng.gen_range(0..i)], labels[i]]).collect();
    SkeletonTopology::new(v, bones, rng.gen_range(0..v)).unwrap()
}

pub fn random_permutation(v: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..v).collect();
    p.shuffle(rng);
    p
}

/// Joint `j` becomes joint `perm[j]`.
pub fn permute_topology(topo: &SkeletonTopology, perm: &[usize]) -> SkeletonTopology {
    let bones = topo.bones.iter().map(|&[a, b]| [perm[a], perm[b]]).collect();
    SkeletonTopology::new(topo.num_joints, bones, perm[topo.center]).unwrap()
}

/// Moves axis-1 slice `v` of `[N, V, ...]` to position `perm[v]`.
pub fn permute_joints(t: &Tensor, perm: &[usize]) -> Tensor {
    let s = t.shape();
    let (n, v) = (s[0], s[1]);
    let rest: usize = s[2..].iter().product();
    let mut out = Tensor::zeros(s);
    for b in 0..n {
        for j in 0..v {
            let src = (b * v + j) * rest;
            let dst = (b * v + perm[j]) * rest;
            out.data_mut()[dst..dst + rest].copy_from_slice(&t.data()[src..src + rest]);
        }
    }
    out
}

/// `out[perm[a]][perm[b]] = m[a][b]`.
pub fn permute_square(m: &Tensor, perm: &[usize]) -> Tensor {
    let v = m.shape()[0];
    let mut out = Tensor::zeros(&[v, v]);
    for a in 0..v {
        for b in 0..v {
            out.set(&[perm[a], perm[b]], m.at(&[a, b]));
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn bits(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}
