//! Attention blocks in which a single user-state row attends over the
//! sequence matrix `E`, which every block reuses unchanged.

use super::common::{embed_backward, embed_sequence, key_mask, tail_backward, tail_forward, TailCache};
use super::{BlockParams, Hyper, ModelParams};
use crate::numerics::{axpy, dot, masked_softmax_into, softmax_backward, Matrix, OpCounter, Rng};
use crate::{Error, Result};

/// Cached intermediates of one attention layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCache {
    pub query: Vec<f64>,
    pub keys: Matrix,
    pub values: Matrix,
    /// One probability vector of length `n` per head.
    pub betas: Vec<Vec<f64>>,
    pub concat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RamBlockTrace {
    pub attention: AttentionCache,
    pub tail: TailCache,
}

/// Everything a backward pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RamTrace {
    pub slots: Vec<u32>,
    pub valid: Vec<bool>,
    pub embedded: Matrix,
    /// `h^(0) = e_n` through `h^(n_b)`.
    pub states: Vec<Vec<f64>>,
    pub blocks: Vec<RamBlockTrace>,
}

impl RamTrace {
    pub fn output(&self) -> &[f64] {
        self.states.last().expect("at least h0")
    }

    pub fn betas(&self, block: usize) -> &[Vec<f64>] {
        &self.blocks[block].attention.betas
    }
}

fn attention_forward(
    h_prev: &[f64],
    embedded: &Matrix,
    block: &BlockParams,
    valid: &[bool],
    hyper: &Hyper,
    ops: &mut OpCounter,
) -> Result<(Vec<f64>, AttentionCache)> {
    if !valid.iter().any(|&v| v) {
        return Err(Error::Degenerate("attention over a fully masked window".into()));
    }
    let n = embedded.rows();
    let dh = hyper.head_dim();
    let divisor = hyper.logit_divisor();
    let query = block.query.left_mul(h_prev, ops)?;
    let keys = embedded.matmul_counted(&block.key, ops)?;
    let values = embedded.matmul_counted(&block.value, ops)?;
    let mut betas = Vec::with_capacity(hyper.heads);
    let mut concat = vec![0.0; hyper.d];
    let mut logits = vec![0.0; n];
    for k in 0..hyper.heads {
        let cols = k * dh..(k + 1) * dh;
        for (t, l) in logits.iter_mut().enumerate() {
            *l = dot(&query[cols.clone()], &keys.row(t)[cols.clone()]) / divisor;
        }
        let mut beta = vec![0.0; n];
        masked_softmax_into(&logits, valid, &mut beta)?;
        let head = &mut concat[cols.clone()];
        for (t, &b) in beta.iter().enumerate() {
            axpy(head, b, &values.row(t)[cols.clone()]);
        }
        betas.push(beta);
    }
    ops.attention(2 * n * hyper.d);
    let g = block.mix.left_mul(&concat, ops)?;
    Ok((g, AttentionCache { query, keys, values, betas, concat }))
}

fn attention_backward(
    d_g: &[f64],
    h_prev: &[f64],
    embedded: &Matrix,
    cache: &AttentionCache,
    block: &BlockParams,
    hyper: &Hyper,
    grads: &mut BlockParams,
    d_embedded: &mut Matrix,
) -> Result<Vec<f64>> {
    let n = embedded.rows();
    let dh = hyper.head_dim();
    let divisor = hyper.logit_divisor();
    grads.mix.add_outer(&cache.concat, d_g);
    let d_concat = block.mix.mul_vec(d_g);
    let mut d_query = vec![0.0; hyper.d];
    let mut d_keys = Matrix::zeros(n, hyper.d);
    let mut d_values = Matrix::zeros(n, hyper.d);
    let mut d_beta = vec![0.0; n];
    let mut d_logits = vec![0.0; n];
    for (k, beta) in cache.betas.iter().enumerate() {
        let cols = k * dh..(k + 1) * dh;
        let d_head = &d_concat[cols.clone()];
        for t in 0..n {
            d_beta[t] = dot(&cache.values.row(t)[cols.clone()], d_head);
            axpy(&mut d_values.row_mut(t)[cols.clone()], beta[t], d_head);
        }
        softmax_backward(beta, &d_beta, &mut d_logits);
        for t in 0..n {
            let dl = d_logits[t] / divisor;
            if dl == 0.0 {
                continue;
            }
            axpy(&mut d_query[cols.clone()], dl, &cache.keys.row(t)[cols.clone()]);
            axpy(&mut d_keys.row_mut(t)[cols.clone()], dl, &cache.query[cols.clone()]);
        }
    }
    grads.query.add_outer(h_prev, &d_query);
    Matrix::add_tn_product(&mut grads.key, embedded, &d_keys)?;
    Matrix::add_tn_product(&mut grads.value, embedded, &d_values)?;
    d_embedded.add_assign(&d_keys.matmul_nt(&block.key)?)?;
    d_embedded.add_assign(&d_values.matmul_nt(&block.value)?)?;
    Ok(block.query.mul_vec(&d_query))
}

/// Attention layer output `g` and the per-head weights.
pub fn attention_block(
    h_prev: &[f64],
    embedded: &Matrix,
    block: &BlockParams,
    valid: &[bool],
    hyper: &Hyper,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (g, cache) =
        attention_forward(h_prev, embedded, block, valid, hyper, &mut OpCounter::disabled())?;
    Ok((g, cache.betas))
}

/// One full block: attention layer, then the residual feed-forward tail.
pub fn block_step(
    h_prev: &[f64],
    embedded: &Matrix,
    block: &BlockParams,
    valid: &[bool],
    hyper: &Hyper,
) -> Result<Vec<f64>> {
    let mut ops = OpCounter::disabled();
    block_forward(h_prev, embedded, block, valid, hyper, None, &mut ops).map(|(h, _)| h)
}

pub(crate) fn block_forward(
    h_prev: &[f64],
    embedded: &Matrix,
    block: &BlockParams,
    valid: &[bool],
    hyper: &Hyper,
    rng: Option<&mut Rng>,
    ops: &mut OpCounter,
) -> Result<(Vec<f64>, RamBlockTrace)> {
    let (g, attention) = attention_forward(h_prev, embedded, block, valid, hyper, ops)?;
    let (h, tail) = tail_forward(h_prev, g, block, hyper.activation, hyper.dropout, rng, ops)?;
    Ok((h, RamBlockTrace { attention, tail }))
}

pub fn forward(slots: &[u32], params: &ModelParams, hyper: &Hyper) -> Result<RamTrace> {
    forward_with(slots, params, hyper, None, &mut OpCounter::disabled())
}

/// Forward pass with optional training-time dropout and op counting.
pub fn forward_with(
    slots: &[u32],
    params: &ModelParams,
    hyper: &Hyper,
    mut rng: Option<&mut Rng>,
    ops: &mut OpCounter,
) -> Result<RamTrace> {
    let embedded = embed_sequence(slots, params)?;
    let valid = key_mask(slots, hyper);
    let mut states = vec![embedded.row(embedded.rows() - 1).to_vec()];
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (h, trace) = block_forward(
            states.last().expect("nonempty"),
            &embedded,
            block,
            &valid,
            hyper,
            rng.as_deref_mut(),
            ops,
        )?;
        states.push(h);
        blocks.push(trace);
    }
    Ok(RamTrace { slots: slots.to_vec(), valid, embedded, states, blocks })
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to `h^(n_b)` is `d_output`.
pub fn backward(
    trace: &RamTrace,
    d_output: &[f64],
    params: &ModelParams,
    hyper: &Hyper,
    grads: &mut ModelParams,
) -> Result<()> {
    if trace.blocks.len() != params.blocks.len()
        || grads.blocks.len() != params.blocks.len()
        || d_output.len() != params.d()
        || trace.embedded.cols() != params.d()
    {
        return Err(Error::Contract("trace, gradient and parameter layouts disagree".into()));
    }
    let mut d_embedded = Matrix::zeros(trace.embedded.rows(), trace.embedded.cols());
    let mut d_h = d_output.to_vec();
    for m in (0..params.blocks.len()).rev() {
        let bt = &trace.blocks[m];
        let (mut d_prev, d_g) =
            tail_backward(&d_h, &bt.tail, &params.blocks[m], hyper.activation, &mut grads.blocks[m]);
        let d_prev_attn = attention_backward(
            &d_g,
            &trace.states[m],
            &trace.embedded,
            &bt.attention,
            &params.blocks[m],
            hyper,
            &mut grads.blocks[m],
            &mut d_embedded,
        )?;
        axpy(&mut d_prev, 1.0, &d_prev_attn);
        d_h = d_prev;
    }
    let last = d_embedded.rows() - 1;
    axpy(d_embedded.row_mut(last), 1.0, &d_h);
    embed_backward(&trace.slots, &d_embedded, grads);
    Ok(())
}
