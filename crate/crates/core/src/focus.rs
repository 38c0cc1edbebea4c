//! Context-aware focusing and diffusion.
//!
//! Per frame, joint features are pooled into a single latent node
//! (focusing), the sequence of latent nodes is run through a stacked
//! recurrent context module (CAM), and the resulting spatial-temporal
//! context is gated back into every joint (diffusion):
//!
//! ```text
//! a      = sigmoid(f_in · score_w + score_b)            [N, V, T, 1]
//! G_S    = (Σ_v a_v f_v / Σ_v a_v) · W_1                 [N, 1, T, C′]
//! G_ST   = CAM(G_S · W_2)                                [N, 1, T, Ĉ]
//! f_out  = [f_in, a ⊙ G_ST] · W_3                        [N, V, T, C′]
//! ```
//!
//! The same score map `a` serves as the focusing weights and the diffusion
//! gates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// How the latent node is pooled from the joints of a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FocusMode {
    /// No focusing/diffusion at all; the block is a bidirectional GCN.
    Off,
    Max,
    Avg,
    Att,
}

impl FocusMode {
    pub const ALL: [FocusMode; 4] = [FocusMode::Off, FocusMode::Max, FocusMode::Avg, FocusMode::Att];

    pub fn label(self) -> &'static str {
        match self {
            FocusMode::Off => "wo/F",
            FocusMode::Max => "max",
            FocusMode::Avg => "avg",
            FocusMode::Att => "att",
        }
    }
}

/// Temporal context module variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// Latent nodes are diffused per frame without temporal mixing.
    None,
    /// Two stacked forward-only recurrent layers of width Ĉ.
    Uni,
    /// Two stacked bidirectional layers, Ĉ/2 per direction.
    Bi,
}

impl ContextMode {
    pub const ALL: [ContextMode; 3] = [ContextMode::None, ContextMode::Uni, ContextMode::Bi];

    pub fn label(self) -> &'static str {
        match self {
            ContextMode::None => "wo/Ca",
            ContextMode::Uni => "1-Ca",
            ContextMode::Bi => "2-Ca",
        }
    }
}

/// Weights of one recurrent cell: `W: [(in + h), 4h]` with gate columns
/// ordered (input, forget, output, cell), and bias `[4h]`.
#[derive(Clone, Debug)]
pub struct LstmCellParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCellParams {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w = store.register(
            format!("{name}.w"),
            init::uniform(&[input + hidden, 4 * hidden], bound, rng),
            true,
        )?;
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        let b = store.register(format!("{name}.b"), bias, false)?;
        Ok(LstmCellParams { w, b, input, hidden })
    }
}

/// Hidden and cell state, each `[N, hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, batch: usize, hidden: usize) -> Self {
        let z = Tensor::zeros(&[batch, hidden]);
        LstmState { h: g.input(&z), c: g.input(&z) }
    }
}

/// One recurrent step:
/// `(i, f, o, g) = (σ, σ, σ, tanh)([x; H] · W + b)`,
/// `c' = f ⊙ c + i ⊙ g`, `H' = o ⊙ tanh(c')`.
pub fn lstm_cell(
    g: &mut Graph,
    store: &ParamStore,
    p: &LstmCellParams,
    x: Var,
    state: LstmState,
) -> Result<LstmState> {
    let h = p.hidden;
    let xh = g.concat_channels(x, state.h)?;
    let w = g.param(store, p.w);
    let b = g.param(store, p.b);
    let z = g.project(xh, w)?;
    let z = g.add_bias(z, b)?;
    let zi = g.slice_channels(z, 0, h)?;
    let zf = g.slice_channels(z, h, h)?;
    let zo = g.slice_channels(z, 2 * h, h)?;
    let zg = g.slice_channels(z, 3 * h, h)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let o = g.sigmoid(zo);
    let gg = g.tanh(zg);
    let fc = g.mul(f, state.c)?;
    let ig = g.mul(i, gg)?;
    let c = g.add(fc, ig)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// Runs one cell over `frames` (each `[N, input]`) in forward or reversed
/// time, returning hidden states in original frame order.
pub fn run_direction(
    g: &mut Graph,
    store: &ParamStore,
    p: &LstmCellParams,
    frames: &[Var],
    reverse: bool,
) -> Result<Vec<Var>> {
    let n = g.shape(frames[0])[0];
    let mut state = LstmState::zeros(g, n, p.hidden);
    let mut hs = vec![None; frames.len()];
    let order: Vec<usize> = if reverse {
        (0..frames.len()).rev().collect()
    } else {
        (0..frames.len()).collect()
    };
    for t in order {
        state = lstm_cell(g, store, p, frames[t], state)?;
        hs[t] = Some(state.h);
    }
    Ok(hs.into_iter().map(|h| h.expect("every frame visited")).collect())
}

/// One CAM layer: a forward cell and, for the bidirectional variant, a
/// backward cell.
#[derive(Clone, Debug)]
pub struct CamLayer {
    pub forward: LstmCellParams,
    pub backward: Option<LstmCellParams>,
}

/// Two stacked recurrent layers producing a width-Ĉ context per frame.
#[derive(Clone, Debug)]
pub struct CamParams {
    pub layers: Vec<CamLayer>,
    pub width: usize,
}

impl CamParams {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        width: usize,
        mode: ContextMode,
        rng: &mut impl Rng,
    ) -> Result<Option<Self>> {
        let bidirectional = match mode {
            ContextMode::None => return Ok(None),
            ContextMode::Uni => false,
            ContextMode::Bi => true,
        };
        if bidirectional && !width.is_multiple_of(2) {
            return Err(Error::invalid(format!("bidirectional context width {width} must be even")));
        }
        let hidden = if bidirectional { width / 2 } else { width };
        let mut layers = Vec::new();
        for l in 0..2 {
            let inp = if l == 0 { input } else { width };
            let forward = LstmCellParams::register(store, &format!("{name}.l{l}.fwd"), inp, hidden, rng)?;
            let backward = if bidirectional {
                Some(LstmCellParams::register(store, &format!("{name}.l{l}.bwd"), inp, hidden, rng)?)
            } else {
                None
            };
            layers.push(CamLayer { forward, backward });
        }
        Ok(Some(CamParams { layers, width }))
    }
}

/// Temporal context over the projected latent nodes `ĝ: [N, 1, T, C]`.
/// Bidirectional layers emit `[backward, forward]` per frame.
pub fn cam_forward(g: &mut Graph, store: &ParamStore, cam: &CamParams, ghat: Var) -> Result<Var> {
    let s = g.shape(ghat).to_vec();
    if s.len() != 4 || s[1] != 1 {
        return Err(Error::ShapeMismatch { op: "cam_forward", lhs: s, rhs: vec![] });
    }
    let (n, t, c) = (s[0], s[2], s[3]);
    let seq = g.reshape(ghat, &[n, t, c])?;
    let mut frames = (0..t)
        .map(|f| g.take_frame(seq, f))
        .collect::<Result<Vec<_>>>()?;
    for layer in &cam.layers {
        let fwd = run_direction(g, store, &layer.forward, &frames, false)?;
        frames = match &layer.backward {
            None => fwd,
            Some(bp) => {
                let bwd = run_direction(g, store, bp, &frames, true)?;
                bwd.iter()
                    .zip(&fwd)
                    .map(|(&b, &f)| g.concat_channels(b, f))
                    .collect::<Result<Vec<_>>>()?
            }
        };
    }
    let stacked = g.stack_frames(&frames)?;
    g.reshape(stacked, &[n, 1, t, cam.width])
}

/// Learnable weights of one focusing/diffusion unit.
#[derive(Clone, Debug)]
pub struct FocusDiffuseParams {
    pub focus: FocusMode,
    pub context: ContextMode,
    pub channels: usize,
    pub context_width: usize,
    pub score_w: ParamId,
    pub score_b: ParamId,
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
    pub cam: Option<CamParams>,
}

impl FocusDiffuseParams {
    /// Registers the unit, or returns `None` when `focus` is off.
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        context_width: usize,
        focus: FocusMode,
        context: ContextMode,
        rng: &mut impl Rng,
    ) -> Result<Option<Self>> {
        if focus == FocusMode::Off {
            return Ok(None);
        }
        if context == ContextMode::None && channels > context_width {
            return Err(Error::invalid(format!(
                "latent width {channels} cannot be zero-padded to context width {context_width}"
            )));
        }
        let c = channels;
        let score_w = store.register(format!("{name}.score_w"), init::kaiming(&[c, 1], c, rng), true)?;
        let score_b = store.register(format!("{name}.score_b"), Tensor::zeros(&[1]), false)?;
        let w1 = store.register(format!("{name}.w1"), init::kaiming(&[c, c], c, rng), true)?;
        let w2 = store.register(format!("{name}.w2"), init::kaiming(&[c, c], c, rng), true)?;
        let cam = CamParams::register(store, &format!("{name}.cam"), c, context_width, context, rng)?;
        let w3 = store.register(
            format!("{name}.w3"),
            init::kaiming(&[c + context_width, c], c + context_width, rng),
            true,
        )?;
        Ok(Some(FocusDiffuseParams {
            focus,
            context,
            channels,
            context_width,
            score_w,
            score_b,
            w1,
            w2,
            w3,
            cam,
        }))
    }
}

/// Per-joint, per-frame scores `sigmoid(f_in · score_w + score_b)`, `[N, V, T, 1]`.
pub fn attention_scores(g: &mut Graph, store: &ParamStore, p: &FocusDiffuseParams, f_in: Var) -> Result<Var> {
    let w = g.param(store, p.score_w);
    let b = g.param(store, p.score_b);
    let raw = g.project(f_in, w)?;
    let raw = g.add_bias(raw, b)?;
    Ok(g.sigmoid(raw))
}

/// Pools joints into the latent node and embeds it with `W_1`.
pub fn focus(
    g: &mut Graph,
    store: &ParamStore,
    p: &FocusDiffuseParams,
    f_in: Var,
    scores: Var,
) -> Result<Var> {
    let pooled = match p.focus {
        FocusMode::Att => g.joint_weighted_mean(f_in, scores)?,
        FocusMode::Avg => g.joint_mean(f_in)?,
        FocusMode::Max => g.joint_max(f_in)?,
        FocusMode::Off => return Err(Error::invalid("focus called with focusing disabled")),
    };
    let w1 = g.param(store, p.w1);
    g.project(pooled, w1)
}

/// Gates the context back into every joint and fuses it with `W_3`.
pub fn diffuse(
    g: &mut Graph,
    store: &ParamStore,
    p: &FocusDiffuseParams,
    f_in: Var,
    g_st: Var,
    scores: Var,
) -> Result<Var> {
    if g.shape(g_st).last() != Some(&p.context_width) {
        return Err(Error::ShapeMismatch {
            op: "diffuse",
            lhs: g.shape(g_st).to_vec(),
            rhs: vec![p.context_width],
        });
    }
    let f_g = g.gate_broadcast(scores, g_st)?;
    let cat = g.concat_channels(f_in, f_g)?;
    let w3 = g.param(store, p.w3);
    g.project(cat, w3)
}

/// Output of [`fd_forward`].
#[derive(Clone, Copy, Debug)]
pub struct FdOutput {
    pub out: Var,
    /// Score map `[N, V, T, 1]`; `None` when focusing is off.
    pub scores: Option<Var>,
}

/// Full focusing → context → diffusion pass. With `p = None` (focus off)
/// the input node is returned unchanged.
pub fn fd_forward(
    g: &mut Graph,
    store: &ParamStore,
    p: Option<&FocusDiffuseParams>,
    x_mid: Var,
) -> Result<FdOutput> {
    let Some(p) = p else {
        return Ok(FdOutput { out: x_mid, scores: None });
    };
    let scores = attention_scores(g, store, p, x_mid)?;
    let gs = focus(g, store, p, x_mid, scores)?;
    let w2 = g.param(store, p.w2);
    let ghat = g.project(gs, w2)?;
    let g_st = match &p.cam {
        Some(cam) => cam_forward(g, store, cam, ghat)?,
        None => {
            let s = g.shape(ghat).to_vec();
            let pad = p.context_width - p.channels;
            if pad == 0 {
                ghat
            } else {
                let z = g.input(&Tensor::zeros(&[s[0], s[1], s[2], pad]));
                g.concat_channels(ghat, z)?
            }
        }
    };
    let out = diffuse(g, store, p, x_mid, g_st, scores)?;
    Ok(FdOutput { out, scores: Some(scores) })
}
