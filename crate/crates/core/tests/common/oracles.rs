//! Independent reference implementations used by tests.
#![allow(dead_code)]

/// Average entropy by explicit double summation over users and query rows,
/// counting only rows whose query slot is valid.
pub fn entropy_oracle(maps: &[(Vec<bool>, Vec<Vec<f64>>)]) -> f64 {
    let mut total = 0.0;
    let mut rows = 0usize;
    for (valid, map) in maps {
        for (j, row) in map.iter().enumerate() {
            if !valid[j] {
                continue;
            }
            let mut h = 0.0;
            for k in 0..row.len() {
                let a = row[k];
                if a > 0.0 {
                    h -= a * a.ln();
                }
            }
            total += h;
            rows += 1;
        }
    }
    total / rows as f64
}

/// Rank by sorting every item by (score desc, id asc).
pub fn rank_by_sort(scores: &[f64], target: u32) -> usize {
    let mut ids: Vec<usize> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    ids.iter().position(|&i| i + 1 == target as usize).unwrap() + 1
}

/// Random causal row-stochastic map with a valid suffix of length `valid`.
pub fn random_causal_map(n: usize, valid: usize, mut next: impl FnMut() -> f64) -> (Vec<bool>, Vec<Vec<f64>>) {
    let first = n - valid;
    let mask: Vec<bool> = (0..n).map(|j| j >= first).collect();
    let mut map = vec![vec![0.0; n]; n];
    for j in first..n {
        let mut w: Vec<f64> = (first..=j).map(|_| next()).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        for (o, k) in (first..=j).enumerate() {
            map[j][k] = w[o];
        }
    }
    (mask, map)
}

use ramrec::model::{BlockParams, Model};
use ramrec::numerics::{Activation, Matrix};

fn mat(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.get(r, c)).collect()).collect()
}

fn vec_mat(x: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    let cols = m[0].len();
    (0..cols).map(|c| (0..x.len()).map(|r| x[r] * m[r][c]).sum()).collect()
}

fn softmax_masked(logits: &[f64], allowed: &[bool]) -> Vec<f64> {
    let mx = logits.iter().zip(allowed).filter(|(_, &a)| a).map(|(&l, _)| l).fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return vec![0.0; logits.len()];
    }
    let e: Vec<f64> = logits.iter().zip(allowed).map(|(&l, &a)| if a { (l - mx).exp() } else { 0.0 }).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn ffn_tail(h: &[f64], g: &[f64], b: &BlockParams, act: Activation) -> Vec<f64> {
    let a: Vec<f64> = h.iter().zip(g).map(|(x, y)| x + y).collect();
    let w1 = mat(&b.ffn_in);
    let w2 = mat(&b.ffn_out);
    let mut z = vec_mat(&a, &w1);
    for (c, v) in z.iter_mut().enumerate() {
        *v = act.apply(*v + b.ffn_in_bias.get(0, c));
    }
    let mut o = vec_mat(&z, &w2);
    for (c, v) in o.iter_mut().enumerate() {
        *v += b.ffn_out_bias.get(0, c) + a[c];
    }
    o
}

fn embed(model: &Model, slots: &[u32]) -> Vec<Vec<f64>> {
    let p = &model.params;
    slots
        .iter()
        .enumerate()
        .map(|(t, &s)| (0..p.d()).map(|c| p.items.get(s as usize, c) + p.positions.get(t, c)).collect())
        .collect()
}

/// RAM sequence representation by direct loops over heads and positions.
pub fn ram_forward_oracle(model: &Model, slots: &[u32]) -> Vec<f64> {
    let hp = &model.hyper;
    let (n, d, dh) = (hp.n, hp.d, hp.d / hp.heads);
    let div = match hp.scale {
        ramrec::model::ScaleRule::SqrtD => (d as f64).sqrt(),
        ramrec::model::ScaleRule::SqrtHeadDim => (dh as f64).sqrt(),
    };
    let e = embed(model, slots);
    let valid: Vec<bool> = slots.iter().map(|&s| !hp.mask_padding || s != 0).collect();
    let mut h = e[n - 1].clone();
    for b in &model.params.blocks {
        let (q, z, w, c) = (mat(&b.query), mat(&b.key), mat(&b.value), mat(&b.mix));
        let qh = vec_mat(&h, &q);
        let keys: Vec<Vec<f64>> = e.iter().map(|r| vec_mat(r, &z)).collect();
        let vals: Vec<Vec<f64>> = e.iter().map(|r| vec_mat(r, &w)).collect();
        let mut concat = vec![0.0; d];
        for k in 0..hp.heads {
            let logits: Vec<f64> =
                (0..n).map(|t| (k * dh..(k + 1) * dh).map(|i| qh[i] * keys[t][i]).sum::<f64>() / div).collect();
            let beta = softmax_masked(&logits, &valid);
            for i in k * dh..(k + 1) * dh {
                concat[i] = (0..n).map(|t| beta[t] * vals[t][i]).sum();
            }
        }
        let g = vec_mat(&concat, &c);
        h = ffn_tail(&h, &g, b, hp.activation);
    }
    h
}

/// Causal self-attention stack by direct loops; returns the last row.
pub fn sa_forward_oracle(model: &Model, slots: &[u32]) -> Vec<f64> {
    let hp = &model.hyper;
    let (n, d, dh) = (hp.n, hp.d, hp.d / hp.heads);
    let div = match hp.scale {
        ramrec::model::ScaleRule::SqrtD => (d as f64).sqrt(),
        ramrec::model::ScaleRule::SqrtHeadDim => (dh as f64).sqrt(),
    };
    let valid: Vec<bool> = slots.iter().map(|&s| !hp.mask_padding || s != 0).collect();
    let mut x = embed(model, slots);
    for b in &model.params.blocks {
        let (q, z, w, c) = (mat(&b.query), mat(&b.key), mat(&b.value), mat(&b.mix));
        let qs: Vec<Vec<f64>> = x.iter().map(|r| vec_mat(r, &q)).collect();
        let ks: Vec<Vec<f64>> = x.iter().map(|r| vec_mat(r, &z)).collect();
        let vs: Vec<Vec<f64>> = x.iter().map(|r| vec_mat(r, &w)).collect();
        let mut next = Vec::with_capacity(n);
        for j in 0..n {
            let allowed: Vec<bool> = (0..n).map(|t| t <= j && valid[t]).collect();
            let mut concat = vec![0.0; d];
            for k in 0..hp.heads {
                let logits: Vec<f64> =
                    (0..n).map(|t| (k * dh..(k + 1) * dh).map(|i| qs[j][i] * ks[t][i]).sum::<f64>() / div).collect();
                let a = softmax_masked(&logits, &allowed);
                for i in k * dh..(k + 1) * dh {
                    concat[i] = (0..n).map(|t| a[t] * vs[t][i]).sum();
                }
            }
            let g = vec_mat(&concat, &c);
            next.push(ffn_tail(&x[j], &g, b, hp.activation));
        }
        x = next;
    }
    x[n - 1].clone()
}
