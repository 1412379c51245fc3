//! Causal self-attention comparator: every block rewrites all `n` item
//! representations and exposes an `n x n` attention map.

use super::common::{embed_backward, embed_sequence, key_mask, tail_backward, tail_forward, TailCache};
use super::{BlockParams, Hyper, ModelParams};
use crate::numerics::{axpy, dot, masked_softmax_into, softmax_backward, Matrix, OpCounter, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SaBlockTrace {
    pub query: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
    /// Per-head `n x n` weights; row `j` is zero when position `j` has no
    /// key to attend to.
    pub weights: Vec<Matrix>,
    pub concat: Matrix,
    pub tails: Vec<TailCache>,
}

impl SaBlockTrace {
    /// Weights averaged over heads.
    pub fn mean_weights(&self) -> Matrix {
        let mut out = self.weights[0].clone();
        for w in &self.weights[1..] {
            out.add_assign(w).expect("same shape");
        }
        out.scale(1.0 / self.weights.len() as f64);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaTrace {
    pub slots: Vec<u32>,
    pub key_valid: Vec<bool>,
    /// `H^(0) = E` through `H^(n_b)`.
    pub states: Vec<Matrix>,
    pub blocks: Vec<SaBlockTrace>,
}

impl SaTrace {
    /// Last-position row of the final block.
    pub fn output(&self) -> &[f64] {
        let last = self.states.last().expect("at least E");
        last.row(last.rows() - 1)
    }

    /// Head-averaged map of every block.
    pub fn attention_maps(&self) -> Vec<Matrix> {
        self.blocks.iter().map(SaBlockTrace::mean_weights).collect()
    }
}

pub(crate) fn block_forward(
    input: &Matrix,
    block: &BlockParams,
    key_valid: &[bool],
    hyper: &Hyper,
    mut rng: Option<&mut Rng>,
    ops: &mut OpCounter,
) -> Result<(Matrix, SaBlockTrace)> {
    let n = input.rows();
    let d = hyper.d;
    let dh = hyper.head_dim();
    let divisor = hyper.logit_divisor();
    if key_valid.len() != n {
        return Err(Error::Shape(format!("{} mask entries for {n} rows", key_valid.len())));
    }
    if !key_valid.iter().any(|&v| v) {
        return Err(Error::Degenerate("self-attention over a fully masked window".into()));
    }
    let query = input.matmul_counted(&block.query, ops)?;
    let keys = input.matmul_counted(&block.key, ops)?;
    let values = input.matmul_counted(&block.value, ops)?;

    let mut weights = Vec::with_capacity(hyper.heads);
    let mut concat = Matrix::zeros(n, d);
    let mut logits = vec![0.0; n];
    let mut allowed = vec![false; n];
    for k in 0..hyper.heads {
        let cols = k * dh..(k + 1) * dh;
        let mut w = Matrix::zeros(n, n);
        for j in 0..n {
            let q = &query.row(j)[cols.clone()];
            for (t, l) in logits.iter_mut().enumerate() {
                *l = dot(q, &keys.row(t)[cols.clone()]) / divisor;
            }
            for (t, a) in allowed.iter_mut().enumerate() {
                *a = t <= j && key_valid[t];
            }
            if allowed.iter().any(|&a| a) {
                masked_softmax_into(&logits, &allowed, w.row_mut(j))?;
            }
            let out = &mut concat.row_mut(j)[cols.clone()];
            for (t, &a) in w.row(j).iter().enumerate() {
                axpy(out, a, &values.row(t)[cols.clone()]);
            }
        }
        weights.push(w);
    }
    ops.attention(2 * n * n * d);
    if weights[0].row(n - 1).iter().all(|&a| a == 0.0) {
        return Err(Error::Degenerate("last position has nothing to attend to".into()));
    }

    let mixed = concat.matmul_counted(&block.mix, ops)?;
    let mut output = Matrix::zeros(n, d);
    let mut tails = Vec::with_capacity(n);
    for j in 0..n {
        let (row, tail) = tail_forward(
            input.row(j),
            mixed.row(j).to_vec(),
            block,
            hyper.activation,
            hyper.dropout,
            rng.as_deref_mut(),
            ops,
        )?;
        output.row_mut(j).copy_from_slice(&row);
        tails.push(tail);
    }
    Ok((output, SaBlockTrace { query, keys, values, weights, concat, tails }))
}

fn block_backward(
    d_output: &Matrix,
    input: &Matrix,
    trace: &SaBlockTrace,
    block: &BlockParams,
    hyper: &Hyper,
    grads: &mut BlockParams,
) -> Result<Matrix> {
    let n = input.rows();
    let d = hyper.d;
    let dh = hyper.head_dim();
    let divisor = hyper.logit_divisor();
    let mut d_input = Matrix::zeros(n, d);
    let mut d_mixed = Matrix::zeros(n, d);
    for j in 0..n {
        let dr = d_output.row(j);
        if dr.iter().all(|&v| v == 0.0) {
            continue;
        }
        let (d_prev, d_g) = tail_backward(dr, &trace.tails[j], block, hyper.activation, grads);
        d_input.row_mut(j).copy_from_slice(&d_prev);
        d_mixed.row_mut(j).copy_from_slice(&d_g);
    }
    Matrix::add_tn_product(&mut grads.mix, &trace.concat, &d_mixed)?;
    let d_concat = d_mixed.matmul_nt(&block.mix)?;

    let mut d_query = Matrix::zeros(n, d);
    let mut d_keys = Matrix::zeros(n, d);
    let mut d_values = Matrix::zeros(n, d);
    let mut d_w = vec![0.0; n];
    let mut d_logits = vec![0.0; n];
    for (k, w) in trace.weights.iter().enumerate() {
        let cols = k * dh..(k + 1) * dh;
        for j in 0..n {
            let d_head = &d_concat.row(j)[cols.clone()];
            if d_head.iter().all(|&v| v == 0.0) {
                continue;
            }
            let row = w.row(j);
            for t in 0..n {
                d_w[t] = dot(d_head, &trace.values.row(t)[cols.clone()]);
                if row[t] != 0.0 {
                    axpy(&mut d_values.row_mut(t)[cols.clone()], row[t], d_head);
                }
            }
            softmax_backward(row, &d_w, &mut d_logits);
            for t in 0..n {
                let dl = d_logits[t] / divisor;
                if dl == 0.0 {
                    continue;
                }
                axpy(&mut d_query.row_mut(j)[cols.clone()], dl, &trace.keys.row(t)[cols.clone()]);
                axpy(&mut d_keys.row_mut(t)[cols.clone()], dl, &trace.query.row(j)[cols.clone()]);
            }
        }
    }
    Matrix::add_tn_product(&mut grads.query, input, &d_query)?;
    Matrix::add_tn_product(&mut grads.key, input, &d_keys)?;
    Matrix::add_tn_product(&mut grads.value, input, &d_values)?;
    d_input.add_assign(&d_query.matmul_nt(&block.query)?)?;
    d_input.add_assign(&d_keys.matmul_nt(&block.key)?)?;
    d_input.add_assign(&d_values.matmul_nt(&block.value)?)?;
    Ok(d_input)
}

/// One self-attention block over `input`, returning the new
/// representations and the head-averaged attention map.
pub fn sa_block(
    input: &Matrix,
    block: &BlockParams,
    slots: &[u32],
    hyper: &Hyper,
) -> Result<(Matrix, Matrix)> {
    let valid = key_mask(slots, hyper);
    let (out, trace) =
        block_forward(input, block, &valid, hyper, None, &mut OpCounter::disabled())?;
    Ok((out, trace.mean_weights()))
}

pub fn forward(slots: &[u32], params: &ModelParams, hyper: &Hyper) -> Result<SaTrace> {
    forward_with(slots, params, hyper, None, &mut OpCounter::disabled())
}

pub fn forward_with(
    slots: &[u32],
    params: &ModelParams,
    hyper: &Hyper,
    mut rng: Option<&mut Rng>,
    ops: &mut OpCounter,
) -> Result<SaTrace> {
    let embedded = embed_sequence(slots, params)?;
    let key_valid = key_mask(slots, hyper);
    let mut states = vec![embedded];
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (h, trace) = block_forward(
            states.last().expect("nonempty"),
            block,
            &key_valid,
            hyper,
            rng.as_deref_mut(),
            ops,
        )?;
        states.push(h);
        blocks.push(trace);
    }
    Ok(SaTrace { slots: slots.to_vec(), key_valid, states, blocks })
}

/// Accumulates parameter gradients given `dL/dh` at the last position of
/// the final block.
pub fn backward(
    trace: &SaTrace,
    d_output: &[f64],
    params: &ModelParams,
    hyper: &Hyper,
    grads: &mut ModelParams,
) -> Result<()> {
    if trace.blocks.len() != params.blocks.len()
        || grads.blocks.len() != params.blocks.len()
        || d_output.len() != params.d()
        || trace.states[0].cols() != params.d()
    {
        return Err(Error::Contract("trace, gradient and parameter layouts disagree".into()));
    }
    let n = trace.slots.len();
    let mut d_h = Matrix::zeros(n, params.d());
    d_h.row_mut(n - 1).copy_from_slice(d_output);
    for m in (0..params.blocks.len()).rev() {
        d_h = block_backward(
            &d_h,
            &trace.states[m],
            &trace.blocks[m],
            &params.blocks[m],
            hyper,
            &mut grads.blocks[m],
        )?;
    }
    embed_backward(&trace.slots, &d_h, grads);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;

    fn hyper(d: usize, n: usize, heads: usize, blocks: usize) -> Hyper {
        Hyper { kind: ModelKind::Sa, d, n, heads, blocks, ..Hyper::default() }
    }

    #[test]
    fn single_position_map() {
        let h = hyper(4, 2, 2, 1);
        let p = ModelParams::init(&h, 0, 5, &mut Rng::new(1));
        let e = embed_sequence(&[0, 3], &p).unwrap();
        let (_, a) = sa_block(&e, &p.blocks[0], &[0, 3], &h).unwrap();
        assert_eq!(a.row(0), &[0.0, 0.0]);
        assert_eq!(a.row(1), &[0.0, 1.0]);
    }

    #[test]
    fn causal_zeros_and_row_sums() {
        let h = hyper(6, 7, 3, 2);
        for seed in 0..10 {
            let p = ModelParams::init(&h, 0, 12, &mut Rng::new(seed));
            let slots = [0, 0, 4, 9, 1, 12, 3];
            let trace = forward(&slots, &p, &h).unwrap();
            for map in trace.attention_maps() {
                for j in 0..7 {
                    for t in j + 1..7 {
                        assert_eq!(map.get(j, t), 0.0);
                    }
                    let s: f64 = map.row(j).iter().sum();
                    if j >= 2 {
                        assert!((s - 1.0).abs() < 1e-9);
                        assert_eq!(map.get(j, 0), 0.0);
                    } else {
                        assert_eq!(s, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn zeroed_weights_pass_last_embedding_through() {
        let h = hyper(4, 3, 2, 1);
        let mut p = ModelParams::init(&h, 0, 5, &mut Rng::new(2));
        p.zero_blocks();
        let trace = forward(&[1, 2, 3], &p, &h).unwrap();
        let e = embed_sequence(&[1, 2, 3], &p).unwrap();
        assert_eq!(trace.output(), e.row(2));
    }

    #[test]
    fn stacking_matches_manual_chaining() {
        let h = hyper(4, 5, 2, 3);
        let p = ModelParams::init(&h, 0, 9, &mut Rng::new(3));
        let slots = [0, 5, 1, 2, 8];
        let trace = forward(&slots, &p, &h).unwrap();
        let mut state = embed_sequence(&slots, &p).unwrap();
        for b in &p.blocks {
            state = sa_block(&state, b, &slots, &h).unwrap().0;
        }
        assert_eq!(trace.states.last().unwrap(), &state);
    }

    #[test]
    fn all_padding_is_degenerate() {
        let h = hyper(4, 3, 2, 1);
        let p = ModelParams::init(&h, 0, 5, &mut Rng::new(2));
        assert!(matches!(forward(&[0, 0, 0], &p, &h), Err(Error::Degenerate(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let h = hyper(4, 3, 2, 2);
        let p = ModelParams::init(&h, 0, 5, &mut Rng::new(2));
        let trace = forward(&[0, 1, 2], &p, &h).unwrap();
        let mut g = p.zeros_like();
        backward(&trace, &[0.0; 4], &p, &h, &mut g).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }
}
