//! Central finite differences against taped gradients, per layer type.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Graph, Mode, OpKind, Var};
use crate::error::{Error, Result};
use crate::focus::{run_direction, ContextMode, FocusMode, LstmCellParams};
use crate::model::{BagcnModel, ModelConfig};
use crate::skeleton::SkeletonTopology;
use crate::tensor::{ParamId, ParamStore, Tensor};

pub const TOLERANCE: f64 = 1e-4;
pub const DEFAULT_STEP: f64 = 1e-6;
pub const STEP_SWEEP: [f64; 3] = [1e-5, 1e-6, 1e-7];

/// `|a − n| / max(|a|, |n|, 1e-5)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// A scalar function of the parameters in a store.
pub trait Objective {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn loss(&self, g: &mut Graph) -> Result<Var>;
    /// Layer type a parameter belongs to.
    fn layer_of(&self, name: &str) -> String;
}

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub step: f64,
    pub samples_per_layer: usize,
    pub seed: u64,
    /// Corrupts one backward rule; used as a negative control.
    pub fault: Option<OpKind>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions { step: DEFAULT_STEP, samples_per_layer: 200, seed: 0, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerReport {
    pub layer: String,
    pub checked: usize,
    pub total: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub step: f64,
    pub layers: Vec<LayerReport>,
    pub worst_layer: String,
    /// `(h, max relative error)` of the worst layer.
    pub step_sweep: Vec<(f64, f64)>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.layers.iter().all(|l| l.max_rel_err < TOLERANCE)
    }

    pub fn worst(&self) -> f64 {
        self.layers.iter().map(|l| l.max_rel_err).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let w = self.layers.iter().map(|l| l.layer.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<w$}  {:>7}  {:>7}  {:>11}\n", "layer", "checked", "total", "max rel err");
        for l in &self.layers {
            let flag = if l.max_rel_err < TOLERANCE { "" } else { "  FAIL" };
            s += &format!("{:<w$}  {:>7}  {:>7}  {:>11.3e}{flag}\n", l.layer, l.checked, l.total, l.max_rel_err);
        }
        s += &format!("step sweep for `{}`:", self.worst_layer);
        for (h, e) in &self.step_sweep {
            s += &format!("  h={h:.0e}: {e:.3e}");
        }
        s.push('\n');
        s
    }
}

fn analytic_grads(obj: &dyn Objective, fault: Option<OpKind>) -> Result<ParamStore> {
    let mut g = Graph::new();
    if let Some(k) = fault {
        g.inject_fault(k);
    }
    let loss = obj.loss(&mut g)?;
    let grads = g.backward(loss)?;
    let mut store = obj.store().clone();
    store.zero_grads();
    grads.accumulate_into(&mut store);
    Ok(store)
}

fn loss_value(obj: &dyn Objective) -> Result<f64> {
    let mut g = Graph::new();
    let loss = obj.loss(&mut g)?;
    Ok(g.value(loss)[0])
}

fn central_difference(obj: &mut dyn Objective, id: ParamId, i: usize, h: f64) -> Result<f64> {
    let orig = obj.store().get(id).value.data()[i];
    obj.store_mut().get_mut(id).value.data_mut()[i] = orig + h;
    let plus = loss_value(obj);
    obj.store_mut().get_mut(id).value.data_mut()[i] = orig - h;
    let minus = loss_value(obj);
    obj.store_mut().get_mut(id).value.data_mut()[i] = orig;
    Ok((plus? - minus?) / (2.0 * h))
}

/// Sampled entries `(param, index)` per layer type.
fn sample_entries(obj: &dyn Objective, per_layer: usize, rng: &mut impl Rng) -> BTreeMap<String, (usize, Vec<(ParamId, usize)>)> {
    let mut all: BTreeMap<String, Vec<(ParamId, usize)>> = BTreeMap::new();
    for (id, p) in obj.store().iter() {
        let layer = obj.layer_of(&p.name);
        all.entry(layer).or_default().extend((0..p.value.numel()).map(|i| (id, i)));
    }
    all.into_iter()
        .map(|(layer, entries)| {
            let total = entries.len();
            let picked = if total <= per_layer {
                entries
            } else {
                sample(rng, total, per_layer).into_iter().map(|k| entries[k]).collect()
            };
            (layer, (total, picked))
        })
        .collect()
}

fn check_entries(obj: &mut dyn Objective, analytic: &ParamStore, entries: &[(ParamId, usize)], h: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &(id, i) in entries {
        let a = analytic.get(id).value.grad().map_or(0.0, |g| g[i]);
        let n = central_difference(obj, id, i, h)?;
        worst = worst.max(relative_error(a, n));
    }
    Ok(worst)
}

/// Checks several objectives and merges their per-layer results.
pub fn grad_check(objectives: &mut [Box<dyn Objective>], opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut merged: BTreeMap<String, LayerReport> = BTreeMap::new();
    let mut plan = Vec::new();
    for (k, obj) in objectives.iter_mut().enumerate() {
        let analytic = analytic_grads(obj.as_ref(), opts.fault)?;
        for (layer, (total, entries)) in sample_entries(obj.as_ref(), opts.samples_per_layer, &mut rng) {
            let err = check_entries(obj.as_mut(), &analytic, &entries, opts.step)?;
            let r = merged.entry(layer.clone()).or_insert(LayerReport { layer: layer.clone(), checked: 0, total: 0, max_rel_err: 0.0 });
            r.checked += entries.len();
            r.total += total;
            r.max_rel_err = r.max_rel_err.max(err);
            plan.push((k, layer, entries));
        }
    }
    let layers: Vec<LayerReport> = merged.into_values().collect();
    let worst_layer = layers
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .map(|l| l.layer.clone())
        .ok_or_else(|| Error::invalid("gradcheck: nothing to check"))?;
    let mut step_sweep = Vec::new();
    for h in STEP_SWEEP {
        let mut e: f64 = 0.0;
        for (k, layer, entries) in &plan {
            if *layer == worst_layer {
                let analytic = analytic_grads(objectives[*k].as_ref(), opts.fault)?;
                e = e.max(check_entries(objectives[*k].as_mut(), &analytic, entries, h)?);
            }
        }
        step_sweep.push((h, e));
    }
    Ok(GradcheckReport { step: opts.step, layers, worst_layer, step_sweep })
}

/// Cross-entropy of a whole model on a fixed random batch, in training mode.
pub struct ModelObjective {
    pub model: BagcnModel,
    pub input: Tensor,
    pub labels: Vec<usize>,
}

impl Objective for ModelObjective {
    fn store(&self) -> &ParamStore {
        &self.model.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.model.store
    }

    fn loss(&self, g: &mut Graph) -> Result<Var> {
        let out = self.model.forward(g, &self.input, 1, Mode::Train)?;
        g.softmax_cross_entropy(out.logits, &self.labels)
    }

    fn layer_of(&self, name: &str) -> String {
        let cfg = &self.model.config;
        let part = name.split_once('.').map_or(name, |(_, rest)| rest);
        if name.starts_with("classifier") {
            "classifier".into()
        } else if name.contains("bn") {
            "batch norm".into()
        } else if part.starts_with("gcn_") {
            "graph conv (with mask)".into()
        } else if part.starts_with("tcn") || part.starts_with("res.") {
            "temporal conv".into()
        } else if part.starts_with("fd.cam") {
            match cfg.context {
                ContextMode::Bi => "bi-CAM".into(),
                _ => "uni-CAM".into(),
            }
        } else if part.starts_with("fd.w3") {
            "diffusion".into()
        } else if part.starts_with("fd.") {
            format!("focusing ({})", cfg.focus.label())
        } else {
            name.into()
        }
    }
}

/// A five-joint tree for tiny checks.
pub fn tiny_topology() -> SkeletonTopology {
    SkeletonTopology::new(5, vec![[0, 1], [1, 2], [1, 3], [3, 4]], 1).expect("valid tree")
}

/// Two blocks on five joints and eight frames, one per variant.
pub fn tiny_model_objective(focus: FocusMode, context: ContextMode, seed: u64) -> Result<ModelObjective> {
    let cfg = ModelConfig::from_schedule("tiny5", 6, 3, &[(32, 1), (32, 2)], focus, context, 8);
    let model = BagcnModel::build_with_topology(&cfg, tiny_topology(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let input = Tensor::from_fn(&[2, 5, 8, 6], |_| rng.gen_range(-1.0..1.0));
    Ok(ModelObjective { model, input, labels: vec![0, 2] })
}

/// A lone LSTM cell unrolled over five steps; the loss is a fixed random
/// projection of every hidden state.
pub struct LstmObjective {
    pub store: ParamStore,
    pub cell: LstmCellParams,
    pub frames: Vec<Tensor>,
    pub projection: Vec<Tensor>,
}

impl LstmObjective {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cell = LstmCellParams::register(&mut store, "lstm", 4, 6, &mut rng)?;
        let frames = (0..5).map(|_| Tensor::from_fn(&[2, 4], |_| rng.gen_range(-1.0..1.0))).collect();
        let projection = (0..5).map(|_| Tensor::from_fn(&[2, 6], |_| rng.gen_range(-1.0..1.0))).collect();
        Ok(LstmObjective { store, cell, frames, projection })
    }
}

impl Objective for LstmObjective {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn loss(&self, g: &mut Graph) -> Result<Var> {
        let xs: Vec<Var> = self.frames.iter().map(|t| g.input(t)).collect();
        let hs = run_direction(g, &self.store, &self.cell, &xs, false)?;
        let mut total: Option<Var> = None;
        for (h, r) in hs.into_iter().zip(&self.projection) {
            let r = g.input(r);
            let p = g.mul(h, r)?;
            let s = g.sum(p);
            total = Some(match total {
                Some(t) => g.add(t, s)?,
                None => s,
            });
        }
        Ok(total.expect("five steps"))
    }

    fn layer_of(&self, _: &str) -> String {
        "lstm cell".into()
    }
}

/// The standard suite: tiny models covering att/avg/max focusing with
/// bi/uni/no context, plus a standalone LSTM cell.
pub fn standard_objectives(seed: u64) -> Result<Vec<Box<dyn Objective>>> {
    Ok(vec![
        Box::new(tiny_model_objective(FocusMode::Att, ContextMode::Bi, seed)?),
        Box::new(tiny_model_objective(FocusMode::Avg, ContextMode::Uni, seed + 1)?),
        Box::new(tiny_model_objective(FocusMode::Max, ContextMode::None, seed + 2)?),
        Box::new(LstmObjective::new(seed + 3)?),
    ])
}

pub fn run_standard(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    grad_check(&mut standard_objectives(opts.seed)?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lstm_cell_passes() {
        let mut objs: Vec<Box<dyn Objective>> = vec![Box::new(LstmObjective::new(7).unwrap())];
        let r = grad_check(&mut objs, &GradcheckOptions::default()).unwrap();
        assert!(r.passed(), "{}", r.render());
        assert_eq!((r.layers[0].checked, r.layers[0].total), (200, 264));
    }

    #[test]
    fn corrupted_rule_is_detected() {
        let mut objs: Vec<Box<dyn Objective>> = vec![Box::new(LstmObjective::new(7).unwrap())];
        let opts = GradcheckOptions { fault: Some(OpKind::Tanh), ..Default::default() };
        let r = grad_check(&mut objs, &opts).unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(0.0, 1e-9) - 1e-4).abs() < 1e-18);
    }
}
