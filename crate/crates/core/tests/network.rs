mod common;

use bagcn::autodiff::{Graph, Mode};
use bagcn::block::{Block, BlockConfig};
use bagcn::focus::{ContextMode, FocusMode};
use bagcn::model::{BagcnModel, ModelConfig};
use bagcn::nn::{BnBuffers, ForwardCtx};
use bagcn::skeleton::{PartitionedAdjacency, SkeletonTopology};
use bagcn::tensor::{ParamStore, Tensor};
use common::{bits, random_tensor, rng};

fn lstm(input: usize, hidden: usize) -> usize {
    (input + hidden) * 4 * hidden + 4 * hidden
}

/// Scalar count from the layer list alone.
fn expected_params(joints: usize, cfg: &ModelConfig) -> usize {
    let w = cfg.context_width;
    let mut n = 2 * cfg.in_channels;
    for (i, b) in cfg.blocks.iter().enumerate() {
        let (ci, cm, co) = (b.c_in, b.c_out / 4, b.c_out);
        n += 3 * ci * cm + 3 * joints * joints + 2 * cm;
        if cfg.focus != FocusMode::Off {
            n += cm + 1 + 2 * cm * cm + (cm + w) * cm;
            n += match cfg.context {
                ContextMode::Bi => 2 * lstm(cm, w / 2) + 2 * lstm(w, w / 2),
                ContextMode::Uni => lstm(cm, w) + lstm(w, w),
                ContextMode::None => 0,
            };
        }
        n += 3 * cm * co + 3 * joints * joints + 2 * co;
        n += co * co * b.kernel_t + 2 * co;
        if i > 0 && !(ci == co && b.stride == 1) {
            n += co * ci + 2 * co;
        }
    }
    n + cfg.feature_width() * cfg.num_classes + cfg.num_classes
}

#[test]
fn ntu_default_classifier_and_parameter_count() {
    let cfg = ModelConfig::ntu_default();
    let model = BagcnModel::build(&cfg, 0).unwrap();
    assert_eq!(model.store.get(model.classifier_w).value.shape(), &[256, 60]);
    assert_eq!(model.num_params(), expected_params(25, &cfg));
    assert_eq!(model.num_params(), 4_225_591);
}

#[test]
fn synthetic_variant_parameter_counts() {
    let base = ModelConfig::synthetic_default(4);
    for (focus, context, frozen) in [
        (FocusMode::Att, ContextMode::Bi, 26_205),
        (FocusMode::Max, ContextMode::Bi, 26_205),
        (FocusMode::Off, ContextMode::None, 18_090),
        (FocusMode::Att, ContextMode::None, 18_653),
        (FocusMode::Att, ContextMode::Uni, 29_277),
    ] {
        let cfg = base.clone().with_modes(focus, context);
        let n = BagcnModel::build(&cfg, 0).unwrap().num_params();
        assert_eq!(n, expected_params(9, &cfg), "{focus:?} {context:?}");
        assert_eq!(n, frozen, "{focus:?} {context:?}");
    }
}

#[test]
fn parameter_names_are_unique_and_masks_start_at_one() {
    let model = BagcnModel::build(&ModelConfig::synthetic_default(4), 3).unwrap();
    let mut names: Vec<&str> = model.store.iter().map(|(_, p)| p.name.as_str()).collect();
    let n = names.len();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), n);
    for (_, p) in model.store.iter().filter(|(_, p)| p.name.contains(".mask")) {
        assert_eq!(p.value.shape(), &[9, 9]);
        assert!(p.value.data().iter().all(|&m| m == 1.0));
    }
}

#[test]
fn shape_walk_on_the_default_network() {
    let cfg = ModelConfig::ntu_default();
    let model = BagcnModel::build(&cfg, 1).unwrap();
    let x = random_tensor(&[2, 25, 300, 6], &mut rng(2));
    let mut g = Graph::new();
    let out = model.forward(&mut g, &x, 1, Mode::Eval).unwrap();
    assert_eq!(g.shape(out.logits), &[2, 60]);
    assert_eq!(g.shape(out.features), &[2, 256]);
    let mut t: usize = 300;
    let mut c_prev = 6;
    for (b, shape) in cfg.blocks.iter().zip(&out.trace) {
        assert_eq!(b.c_in, c_prev);
        t = t.div_ceil(b.stride);
        assert_eq!(shape, &vec![2, 25, t, b.c_out]);
        c_prev = b.c_out;
    }
    let frames: Vec<usize> = out.trace.iter().map(|s| s[2]).collect();
    assert_eq!(frames, vec![300, 300, 300, 150, 150, 150, 75, 75, 75]);
    assert_eq!(cfg.frame_trace(300), frames);
}

#[test]
fn strided_block_shape_contract() {
    let topo = SkeletonTopology::ntu25();
    let adj = PartitionedAdjacency::new(&topo).unwrap();
    let mut store = ParamStore::new();
    let mut buffers = BnBuffers::new();
    let cfg = BlockConfig::new(64, 128, 2, true, FocusMode::Att, ContextMode::Bi);
    let block = Block::register(&mut store, &mut buffers, "b", cfg, 25, 128, &mut rng(3)).unwrap();
    let x = random_tensor(&[1, 25, 300, 64], &mut rng(4));
    let mut g = Graph::new();
    let mut ctx = ForwardCtx::new(&store, &buffers, Mode::Eval);
    let xv = g.input(&x);
    let out = block.forward(&mut g, &mut ctx, &adj, xv).unwrap();
    assert_eq!(g.shape(out.out), &[1, 25, 150, 128]);
}

#[test]
fn same_seed_same_parameters() {
    let cfg = ModelConfig::synthetic_default(4);
    let a = BagcnModel::build(&cfg, 42).unwrap();
    let b = BagcnModel::build(&cfg, 42).unwrap();
    let c = BagcnModel::build(&cfg, 43).unwrap();
    let flat = |m: &BagcnModel| m.store.iter().flat_map(|(_, p)| bits(p.value.data())).collect::<Vec<u64>>();
    assert_eq!(flat(&a), flat(&b));
    assert_ne!(flat(&a), flat(&c));
}

#[test]
fn eval_is_repeatable_and_pure() {
    let model = BagcnModel::build(&ModelConfig::synthetic_default(4), 5).unwrap();
    let before = model.clone();
    let x = random_tensor(&[3, 9, 16, 6], &mut rng(6));
    let run = |mode| {
        let mut g = Graph::new();
        let out = model.forward(&mut g, &x, 1, mode).unwrap();
        g.value(out.logits).to_vec()
    };
    assert_eq!(bits(&run(Mode::Eval)), bits(&run(Mode::Eval)));
    let _ = run(Mode::Train);
    assert_eq!(model.buffers, before.buffers);
    for ((_, p), (_, q)) in model.store.iter().zip(before.store.iter()) {
        assert_eq!(bits(p.value.data()), bits(q.value.data()));
    }
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let mut model = BagcnModel::build(&ModelConfig::synthetic_default(4), 7).unwrap();
    let x = random_tensor(&[2, 9, 12, 6], &mut rng(8));
    let mut g = Graph::new();
    let out = model.forward(&mut g, &x, 1, Mode::Train).unwrap();
    model.commit_bn(&out.bn_updates);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let loaded = BagcnModel::load(&path).unwrap();
    let logits = |m: &BagcnModel| {
        let mut g = Graph::new();
        let out = m.forward(&mut g, &x, 1, Mode::Eval).unwrap();
        bits(g.value(out.logits))
    };
    assert_eq!(logits(&model), logits(&loaded));
    assert_eq!(loaded.config, model.config);
    assert_eq!(loaded.buffers, model.buffers);
}

#[test]
fn mismatched_input_rejected() {
    let model = BagcnModel::build(&ModelConfig::synthetic_default(4), 0).unwrap();
    let mut g = Graph::new();
    assert!(model.forward(&mut g, &Tensor::zeros(&[1, 25, 8, 6]), 1, Mode::Eval).is_err());
    assert!(model.forward(&mut g, &Tensor::zeros(&[1, 9, 8, 4]), 1, Mode::Eval).is_err());
    assert!(model.forward(&mut g, &Tensor::zeros(&[3, 9, 8, 6]), 2, Mode::Eval).is_err());
}

#[test]
fn config_file_round_trip() {
    let cfg = ModelConfig::ntu_default().with_modes(FocusMode::Max, ContextMode::Uni);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(ModelConfig::load(&path).unwrap(), cfg);
}

#[test]
fn shipped_presets_match_builtin_configs() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    assert_eq!(ModelConfig::load(dir.join("model_ntu.json")).unwrap(), ModelConfig::ntu_default());
    assert_eq!(ModelConfig::load(dir.join("model_kinetics.json")).unwrap(), ModelConfig::kinetics_default());
    assert_eq!(ModelConfig::load(dir.join("model_synthetic.json")).unwrap(), ModelConfig::synthetic_default(4));
    let kinetics = bagcn::train::TrainConfig::load(dir.join("train_kinetics.json")).unwrap();
    assert_eq!(kinetics, bagcn::train::TrainConfig::kinetics());
    assert_eq!((kinetics.epochs, kinetics.lr_decay_epochs), (65, vec![20, 40, 55]));
    assert_eq!(bagcn::train::TrainConfig::load(dir.join("train_ntu.json")).unwrap(), Default::default());
    assert_eq!(bagcn::train::TrainConfig::load(dir.join("train_synthetic.json")).unwrap().lr, 0.05);
}

#[test]
fn attention_export_matches_forward_scores() {
    use bagcn::attention::dump_attention;
    use bagcn::data::Stream;
    use bagcn::synth::{synth_sequences, SynthSpec};
    use bagcn::train::PreparedSet;

    let spec = SynthSpec::simple("synth9", 9, 8, 3, 1);
    let (_, test) = synth_sequences(&spec).unwrap();
    let set = PreparedSet::new(&test, &SkeletonTopology::synth9(), Stream::Spatial, 8).unwrap();
    let model = BagcnModel::build(&ModelConfig::synthetic_default(3), 4).unwrap();
    let idx: Vec<usize> = (0..set.len()).collect();
    let (x, _) = set.batch(&idx).unwrap();
    let mut g = Graph::new();
    let out = model.forward(&mut g, &x, 1, Mode::Eval).unwrap();
    for layer in 1..=model.blocks.len() {
        let maps = dump_attention(&model, &set, Some(layer), 4).unwrap();
        let s = g.tensor(out.scores[layer - 1].unwrap());
        assert_eq!(maps.len(), set.len());
        for (n, m) in maps.iter().enumerate() {
            assert_eq!(m.sample_id, set.ids[n]);
            for t in 0..m.t {
                for v in 0..m.v {
                    assert_eq!(m.scores[t][v], s.at(&[n, v, t, 0]));
                }
            }
        }
    }
}
