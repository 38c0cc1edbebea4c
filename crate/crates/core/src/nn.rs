//! Shared forward-pass plumbing: parameter/buffer context and batch norm layers.

use std::collections::BTreeMap;

use crate::autodiff::{BatchStats, Graph, Mode, Var};
use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Momentum of the running-statistics update: `running ← 0.9·running + 0.1·batch`.
pub const BN_MOMENTUM: f64 = 0.9;

/// Running mean/variance of every batch norm layer, keyed by layer name.
pub type BnBuffers = BTreeMap<String, BatchStats>;

/// Everything a forward pass reads, plus the batch statistics it observes.
///
/// Forward passes never mutate model state; training-mode statistics are
/// collected in `updates` and committed by the caller afterwards.
pub struct ForwardCtx<'a> {
    pub store: &'a ParamStore,
    pub buffers: &'a BnBuffers,
    pub mode: Mode,
    pub updates: Vec<(String, BatchStats)>,
}

impl<'a> ForwardCtx<'a> {
    pub fn new(store: &'a ParamStore, buffers: &'a BnBuffers, mode: Mode) -> Self {
        ForwardCtx { store, buffers, mode, updates: Vec::new() }
    }

    pub fn param(&self, g: &mut Graph, id: ParamId) -> Var {
        g.param(self.store, id)
    }
}

/// Commits observed batch statistics into the running buffers.
pub fn apply_bn_updates(buffers: &mut BnBuffers, updates: &[(String, BatchStats)]) {
    for (name, stats) in updates {
        if let Some(run) = buffers.get_mut(name) {
            for (r, b) in run.mean.iter_mut().zip(&stats.mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
            for (r, b) in run.var.iter_mut().zip(&stats.var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
    }
}

/// Per-channel batch norm with learnable affine terms.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
}

impl BatchNormLayer {
    pub fn register(
        store: &mut ParamStore,
        buffers: &mut BnBuffers,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        let gamma = store.register(format!("{name}.gamma"), Tensor::ones(&[channels]), false)?;
        let beta = store.register(format!("{name}.beta"), Tensor::zeros(&[channels]), false)?;
        buffers.insert(
            name.to_string(),
            BatchStats { mean: vec![0.0; channels], var: vec![1.0; channels] },
        );
        Ok(BatchNormLayer { name: name.to_string(), gamma, beta, channels })
    }

    pub fn forward(&self, g: &mut Graph, ctx: &mut ForwardCtx, x: Var) -> Result<Var> {
        let gamma = ctx.param(g, self.gamma);
        let beta = ctx.param(g, self.beta);
        let running = &ctx.buffers[&self.name];
        let (y, stats) = g.batch_norm(x, gamma, beta, ctx.mode, running)?;
        if let Some(s) = stats {
            ctx.updates.push((self.name.clone(), s));
        }
        Ok(y)
    }
}
