//! The building block: focus-graph convolution, focusing/diffusion,
//! diffusion-graph convolution, temporal convolution and residual.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::focus::{fd_forward, ContextMode, FocusDiffuseParams, FocusMode};
use crate::init;
use crate::nn::{BatchNormLayer, BnBuffers, ForwardCtx};
use crate::skeleton::PartitionedAdjacency;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Temporal kernel size used when a config does not name one.
pub const DEFAULT_KERNEL_T: usize = 9;

/// Shape and variant of one building block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub c_in: usize,
    /// Bottleneck width C′ of the focusing stage; must equal `c_out / 4`.
    pub c_mid: usize,
    pub c_out: usize,
    #[serde(default = "default_kernel")]
    pub kernel_t: usize,
    pub stride: usize,
    pub residual: bool,
    pub focus: FocusMode,
    pub context: ContextMode,
}

fn default_kernel() -> usize {
    DEFAULT_KERNEL_T
}

impl BlockConfig {
    pub fn new(c_in: usize, c_out: usize, stride: usize, residual: bool, focus: FocusMode, context: ContextMode) -> Self {
        BlockConfig {
            c_in,
            c_mid: c_out / 4,
            c_out,
            kernel_t: DEFAULT_KERNEL_T,
            stride,
            residual,
            focus,
            context,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.c_mid == 0 {
            return Err(Error::invalid(format!("block channels must be positive: {self:?}")));
        }
        if self.c_mid * 4 != self.c_out {
            return Err(Error::invalid(format!(
                "block bottleneck C′ = {} must be C″/4 with C″ = {}",
                self.c_mid, self.c_out
            )));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::invalid(format!("block stride {} not in {{1, 2}}", self.stride)));
        }
        if self.kernel_t.is_multiple_of(2) {
            return Err(Error::invalid(format!("temporal kernel {} must be odd", self.kernel_t)));
        }
        Ok(())
    }

    /// Output frame count for `t` input frames.
    pub fn out_frames(&self, t: usize) -> usize {
        t.div_ceil(self.stride)
    }

    fn identity_residual(&self) -> bool {
        self.c_in == self.c_out && self.stride == 1
    }
}

/// Per-subset 1×1 projections `W_s: [C_in, C_out]` and edge-importance
/// masks `M_s: [V, V]`, initialized to ones.
#[derive(Clone, Debug)]
pub struct GraphConvParams {
    pub weights: [ParamId; 3],
    pub masks: [ParamId; 3],
}

impl GraphConvParams {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        joints: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut weights = Vec::new();
        let mut masks = Vec::new();
        for s in 0..3 {
            weights.push(store.register(
                format!("{name}.w{s}"),
                init::kaiming(&[c_in, c_out], c_in, rng),
                true,
            )?);
            masks.push(store.register(format!("{name}.mask{s}"), Tensor::ones(&[joints, joints]), false)?);
        }
        Ok(GraphConvParams {
            weights: weights.try_into().unwrap(),
            masks: masks.try_into().unwrap(),
        })
    }
}

/// `Σ_s (M_s ⊗ Â_s) · X · W_s` for `x: [N, V, T, C_in]`.
pub fn spatial_graph_conv(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    adj: &[Tensor; 3],
    p: &GraphConvParams,
) -> Result<Var> {
    graph_conv_impl(g, store, x, adj, p, true)
}

/// The same sum with the masks left out, `Σ_s Â_s · X · W_s`.
pub fn spatial_graph_conv_unmasked(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    adj: &[Tensor; 3],
    p: &GraphConvParams,
) -> Result<Var> {
    graph_conv_impl(g, store, x, adj, p, false)
}

fn graph_conv_impl(
    g: &mut Graph,
    store: &ParamStore,
    x: Var,
    adj: &[Tensor; 3],
    p: &GraphConvParams,
    masked: bool,
) -> Result<Var> {
    let sx = g.shape(x).to_vec();
    let v = adj[0].shape()[0];
    if sx.len() != 4 || sx[1] != v {
        return Err(Error::ShapeMismatch { op: "spatial_graph_conv", lhs: sx, rhs: vec![v, v] });
    }
    let mut total: Option<Var> = None;
    for s in 0..3 {
        let a = g.input(&adj[s]);
        let a = if masked {
            let m = g.param(store, p.masks[s]);
            g.mul(m, a)?
        } else {
            a
        };
        let w = g.param(store, p.weights[s]);
        let (c_in, c_out) = (store.get(p.weights[s]).value.shape()[0], store.get(p.weights[s]).value.shape()[1]);
        // aggregate on whichever side has fewer channels
        let y = if c_out < c_in {
            let xw = g.project(x, w)?;
            g.joint_mix(a, xw)?
        } else {
            let ax = g.joint_mix(a, x)?;
            g.project(ax, w)?
        };
        total = Some(match total {
            None => y,
            Some(t) => g.add(t, y)?,
        });
    }
    Ok(total.expect("three subsets"))
}

/// Residual path of a block.
#[derive(Clone, Debug)]
pub enum Residual {
    None,
    Identity,
    /// Strided 1×1 temporal convolution followed by batch norm.
    Project { w: ParamId, bn: BatchNormLayer },
}

/// All learnable parts of one block.
#[derive(Clone, Debug)]
pub struct Block {
    pub name: String,
    pub config: BlockConfig,
    pub gcn_focus: GraphConvParams,
    pub bn_focus: BatchNormLayer,
    pub fd: Option<FocusDiffuseParams>,
    pub gcn_diffuse: GraphConvParams,
    pub bn_diffuse: BatchNormLayer,
    pub tcn_w: ParamId,
    pub bn_tcn: BatchNormLayer,
    pub residual: Residual,
}

/// Output of [`Block::forward`].
#[derive(Clone, Copy, Debug)]
pub struct BlockOutput {
    pub out: Var,
    /// Attention scores `[N, V, T, 1]` of the focusing stage, if any.
    pub scores: Option<Var>,
}

impl Block {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        buffers: &mut BnBuffers,
        name: &str,
        config: BlockConfig,
        joints: usize,
        context_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let gcn_focus = GraphConvParams::register(store, &format!("{name}.gcn_focus"), joints, c.c_in, c.c_mid, rng)?;
        let bn_focus = BatchNormLayer::register(store, buffers, &format!("{name}.bn_focus"), c.c_mid)?;
        let fd = FocusDiffuseParams::register(
            store,
            &format!("{name}.fd"),
            c.c_mid,
            context_width,
            c.focus,
            c.context,
            rng,
        )?;
        let gcn_diffuse =
            GraphConvParams::register(store, &format!("{name}.gcn_diffuse"), joints, c.c_mid, c.c_out, rng)?;
        let bn_diffuse = BatchNormLayer::register(store, buffers, &format!("{name}.bn_diffuse"), c.c_out)?;
        let tcn_w = store.register(
            format!("{name}.tcn.w"),
            init::kaiming(&[c.c_out, c.c_out, c.kernel_t], c.c_out * c.kernel_t, rng),
            true,
        )?;
        let bn_tcn = BatchNormLayer::register(store, buffers, &format!("{name}.bn_tcn"), c.c_out)?;
        let residual = if !c.residual {
            Residual::None
        } else if c.identity_residual() {
            Residual::Identity
        } else {
            let w = store.register(
                format!("{name}.res.w"),
                init::kaiming(&[c.c_out, c.c_in, 1], c.c_in, rng),
                true,
            )?;
            let bn = BatchNormLayer::register(store, buffers, &format!("{name}.bn_res"), c.c_out)?;
            Residual::Project { w, bn }
        };
        Ok(Block {
            name: name.to_string(),
            config,
            gcn_focus,
            bn_focus,
            fd,
            gcn_diffuse,
            bn_diffuse,
            tcn_w,
            bn_tcn,
            residual,
        })
    }

    /// `x: [N, V, T, C_in]` → `[N, V, ⌈T/stride⌉, C_out]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        ctx: &mut ForwardCtx,
        adj: &PartitionedAdjacency,
        x: Var,
    ) -> Result<BlockOutput> {
        let sx = g.shape(x).to_vec();
        if sx.len() != 4 || sx[3] != self.config.c_in {
            return Err(Error::ShapeMismatch {
                op: "block_forward",
                lhs: sx,
                rhs: vec![self.config.c_in],
            });
        }
        let store = ctx.store;
        let h = spatial_graph_conv(g, store, x, &adj.focus, &self.gcn_focus)?;
        let h = self.bn_focus.forward(g, ctx, h)?;
        let h = g.relu(h);
        let fd = fd_forward(g, store, self.fd.as_ref(), h)?;
        let h = spatial_graph_conv(g, store, fd.out, &adj.diffusion, &self.gcn_diffuse)?;
        let h = self.bn_diffuse.forward(g, ctx, h)?;
        let w = ctx.param(g, self.tcn_w);
        let h = g.conv_temporal(h, w, self.config.stride)?;
        let h = self.bn_tcn.forward(g, ctx, h)?;
        let h = match &self.residual {
            Residual::None => h,
            Residual::Identity => g.add(h, x)?,
            Residual::Project { w, bn } => {
                let w = ctx.param(g, *w);
                let r = g.conv_temporal(x, w, self.config.stride)?;
                let r = bn.forward(g, ctx, r)?;
                g.add(h, r)?
            }
        };
        Ok(BlockOutput { out: g.relu(h), scores: fd.scores })
    }

    /// Names of every parameter owned by the focusing/diffusion unit.
    pub fn fd_param_ids(&self) -> Vec<ParamId> {
        let Some(fd) = &self.fd else { return vec![] };
        let mut ids = vec![fd.score_w, fd.score_b, fd.w1, fd.w2, fd.w3];
        if let Some(cam) = &fd.cam {
            for l in &cam.layers {
                ids.extend([l.forward.w, l.forward.b]);
                if let Some(b) = &l.backward {
                    ids.extend([b.w, b.b]);
                }
            }
        }
        ids
    }
}
