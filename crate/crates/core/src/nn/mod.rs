//! Dense 2-D tensor numerics with reverse-mode differentiation, plus the
//! training-time primitives the policy needs: Adam with decoupled weight
//! decay, cosine learning-rate annealing, global gradient clipping, and a
//! versioned checkpoint format.
//!
//! Everything runs in f64. Forward passes are recorded on a [`Tape`]; calling
//! [`Tape::backward`] on a scalar loss fills analytic gradients for every
//! recorded parameter.

pub mod check;
mod checkpoint;
mod store;
mod tape;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use store::{
    clip_grad_norm, cosine_lr, Init, LrSchedule, ParamId, ParameterStore, ADAM_BETAS, ADAM_EPS,
};
pub use tape::{NodeId, Tape, Tensor};

/// Parameters of one linear layer `y = x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// Parameters of a two-layer feed-forward block with a ReLU between.
#[derive(Debug, Clone, Copy)]
pub struct FfnParams {
    pub lin1: LinearParams,
    pub lin2: LinearParams,
}

/// Projection parameters of one multi-head attention block.
#[derive(Debug, Clone, Copy)]
pub struct MhaParams {
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub output: LinearParams,
}

/// Gamma/beta of a layer-norm.
#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = x W + b`, differentiable through `x`, `W`, and `b`.
pub fn linear(tape: &mut Tape, x: NodeId, params: LinearParams) -> NodeId {
    let w = tape.param(params.w);
    let b = tape.param(params.b);
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

/// Two linear layers with a ReLU between; hidden width is fixed by the
/// parameter shapes (4x the embedding dimension in this crate's networks).
pub fn ffn(tape: &mut Tape, x: NodeId, params: &FfnParams) -> NodeId {
    let hidden = linear(tape, x, params.lin1);
    let hidden = tape.relu(hidden);
    linear(tape, hidden, params.lin2)
}

/// Row-wise layer normalization followed by the learned affine map.
pub fn layer_norm(tape: &mut Tape, x: NodeId, params: LayerNormParams) -> NodeId {
    let gamma = tape.param(params.gamma);
    let beta = tape.param(params.beta);
    tape.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
}

/// Standard scaled dot-product multi-head attention.
///
/// Queries come from `query_src` rows, keys from `key_src`, values from
/// `value_src`. An optional additive mask (0 to pass, -inf to block) of shape
/// `query rows x key rows` is applied to the pre-softmax scores, so masked
/// positions receive exactly zero attention weight.
pub fn multi_head_attention(
    tape: &mut Tape,
    query_src: NodeId,
    key_src: NodeId,
    value_src: NodeId,
    params: &MhaParams,
    heads: usize,
    mask: Option<NodeId>,
) -> NodeId {
    let d = tape.shape(query_src).1;
    assert!(
        heads >= 1 && d % heads == 0,
        "embedding dim {d} is not divisible by {heads} heads"
    );
    let head_dim = d / heads;
    let q = linear(tape, query_src, params.query);
    let k = linear(tape, key_src, params.key);
    let v = linear(tape, value_src, params.value);
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim);
        let kh = tape.slice_cols(k, h * head_dim, head_dim);
        let vh = tape.slice_cols(v, h * head_dim, head_dim);
        let scores = tape.matmul_nt(qh, kh);
        let scores = tape.scale(scores, scale);
        let scores = match mask {
            Some(m) => tape.add(scores, m),
            None => scores,
        };
        let weights = tape.softmax_rows(scores);
        head_outputs.push(tape.matmul(weights, vh));
    }
    let concat = tape.concat_cols(&head_outputs);
    linear(tape, concat, params.output)
}
