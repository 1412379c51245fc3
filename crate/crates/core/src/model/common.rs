//! Pieces shared by both block families: sequence embedding, dropout and
//! the residual feed-forward tail.

use super::{BlockParams, Hyper, ModelParams};
use crate::datapipe::PAD;
use crate::numerics::{axpy, Activation, Matrix, OpCounter, Rng};
use crate::{Error, Result};

/// Row `t` is `items[slot_t] + positions[t]`; padding rows equal the
/// position row exactly.
pub fn embed_sequence(slots: &[u32], params: &ModelParams) -> Result<Matrix> {
    if slots.len() != params.positions.rows() {
        return Err(Error::Shape(format!(
            "window of {} slots for {} positions",
            slots.len(),
            params.positions.rows()
        )));
    }
    let d = params.d();
    let mut e = Matrix::zeros(slots.len(), d);
    for (t, &slot) in slots.iter().enumerate() {
        if slot as usize >= params.items.rows() {
            return Err(Error::Index(format!(
                "item id {slot} with {} items",
                params.num_items()
            )));
        }
        let row = e.row_mut(t);
        row.copy_from_slice(params.positions.row(t));
        if slot != PAD {
            for (x, v) in row.iter_mut().zip(params.items.row(slot as usize)) {
                *x += v;
            }
        }
    }
    Ok(e)
}

/// Routes `dE` into the item and position gradients. Padding rows of the
/// item table receive nothing.
pub(crate) fn embed_backward(slots: &[u32], d_embedded: &Matrix, grads: &mut ModelParams) {
    for (t, &slot) in slots.iter().enumerate() {
        let dr = d_embedded.row(t);
        axpy(grads.positions.row_mut(t), 1.0, dr);
        if slot != PAD {
            axpy(grads.items.row_mut(slot as usize), 1.0, dr);
        }
    }
}

/// Key positions that attention may look at.
pub(crate) fn key_mask(slots: &[u32], hyper: &Hyper) -> Vec<bool> {
    slots.iter().map(|&s| !hyper.mask_padding || s != PAD).collect()
}

/// Inverted-dropout multipliers (`0` or `1/(1-rate)`), or `None` when
/// dropout is inactive.
pub(crate) fn dropout_mask(len: usize, rate: f64, rng: Option<&mut Rng>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some((0..len).map(|_| if rng.next_f64() < rate { 0.0 } else { keep }).collect())
}

fn apply_mask(v: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        v.iter_mut().zip(m).for_each(|(x, k)| *x *= k);
    }
}

/// Cached activations of `h_next = a + f(a W1 + b1) W2 + b2` with
/// `a = h_prev + g`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailCache {
    pub attention_mask: Option<Vec<f64>>,
    pub residual: Vec<f64>,
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
    pub hidden_mask: Option<Vec<f64>>,
}

pub(crate) fn tail_forward(
    h_prev: &[f64],
    mut g: Vec<f64>,
    block: &BlockParams,
    activation: Activation,
    dropout_rate: f64,
    mut rng: Option<&mut Rng>,
    ops: &mut OpCounter,
) -> Result<(Vec<f64>, TailCache)> {
    let attention_mask = dropout_mask(g.len(), dropout_rate, rng.as_deref_mut());
    apply_mask(&mut g, &attention_mask);
    let residual: Vec<f64> = h_prev.iter().zip(&g).map(|(h, x)| h + x).collect();
    ops.residual(residual.len());
    let mut pre_activation = block.ffn_in.left_mul(&residual, ops)?;
    axpy(&mut pre_activation, 1.0, block.ffn_in_bias.row(0));
    let mut hidden: Vec<f64> = pre_activation.iter().map(|&z| activation.apply(z)).collect();
    let hidden_mask = dropout_mask(hidden.len(), dropout_rate, rng);
    apply_mask(&mut hidden, &hidden_mask);
    let mut out = block.ffn_out.left_mul(&hidden, ops)?;
    axpy(&mut out, 1.0, block.ffn_out_bias.row(0));
    for (o, a) in out.iter_mut().zip(&residual) {
        *o += a;
    }
    ops.residual(out.len());
    Ok((out, TailCache { attention_mask, residual, pre_activation, hidden, hidden_mask }))
}

/// Returns `(dL/dh_prev through the residual path, dL/dg)`.
pub(crate) fn tail_backward(
    d_out: &[f64],
    cache: &TailCache,
    block: &BlockParams,
    activation: Activation,
    grads: &mut BlockParams,
) -> (Vec<f64>, Vec<f64>) {
    grads.ffn_out.add_outer(&cache.hidden, d_out);
    axpy(grads.ffn_out_bias.row_mut(0), 1.0, d_out);
    let mut d_hidden = block.ffn_out.mul_vec(d_out);
    apply_mask(&mut d_hidden, &cache.hidden_mask);
    let d_pre: Vec<f64> = d_hidden
        .iter()
        .zip(&cache.pre_activation)
        .map(|(dh, &z)| dh * activation.derivative(z))
        .collect();
    grads.ffn_in.add_outer(&cache.residual, &d_pre);
    axpy(grads.ffn_in_bias.row_mut(0), 1.0, &d_pre);
    let mut d_residual = block.ffn_in.mul_vec(&d_pre);
    axpy(&mut d_residual, 1.0, d_out);
    let mut d_g = d_residual.clone();
    apply_mask(&mut d_g, &cache.attention_mask);
    (d_residual, d_g)
}
