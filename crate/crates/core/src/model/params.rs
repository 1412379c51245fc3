use serde::{Deserialize, Serialize};

use super::Hyper;
use crate::numerics::{FrozenRow, Matrix, Rng};
use crate::{Error, Result};

/// Learnable matrices of one attention block. Head `k` uses columns
/// `k*d/n_h..(k+1)*d/n_h` of `query`, `key` and `value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub mix: Matrix,
    pub ffn_in: Matrix,
    pub ffn_in_bias: Matrix,
    pub ffn_out: Matrix,
    pub ffn_out_bias: Matrix,
}

impl BlockParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            query: Matrix::zeros(d, d),
            key: Matrix::zeros(d, d),
            value: Matrix::zeros(d, d),
            mix: Matrix::zeros(d, d),
            ffn_in: Matrix::zeros(d, d),
            ffn_in_bias: Matrix::zeros(1, d),
            ffn_out: Matrix::zeros(d, d),
            ffn_out_bias: Matrix::zeros(1, d),
        }
    }

    pub fn random(d: usize, rng: &mut Rng) -> Self {
        let s = 1.0 / (d as f64).sqrt();
        Self {
            query: rng.uniform_matrix(d, d, s),
            key: rng.uniform_matrix(d, d, s),
            value: rng.uniform_matrix(d, d, s),
            mix: rng.uniform_matrix(d, d, s),
            ffn_in: rng.uniform_matrix(d, d, s),
            ffn_in_bias: Matrix::zeros(1, d),
            ffn_out: rng.uniform_matrix(d, d, s),
            ffn_out_bias: Matrix::zeros(1, d),
        }
    }

    const NAMES: [&'static str; 8] =
        ["query", "key", "value", "mix", "ffn_in", "ffn_in_bias", "ffn_out", "ffn_out_bias"];

    fn tensors(&self) -> [&Matrix; 8] {
        [
            &self.query,
            &self.key,
            &self.value,
            &self.mix,
            &self.ffn_in,
            &self.ffn_in_bias,
            &self.ffn_out,
            &self.ffn_out_bias,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.mix,
            &mut self.ffn_in,
            &mut self.ffn_in_bias,
            &mut self.ffn_out,
            &mut self.ffn_out_bias,
        ]
    }
}

/// All learnable parameters of either model family. `items` has one row per
/// item plus row 0 for padding, which stays exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub items: Matrix,
    pub positions: Matrix,
    pub users: Option<Matrix>,
    pub blocks: Vec<BlockParams>,
}

/// Index of `items` in [`ModelParams::tensors`].
pub const ITEMS_TENSOR: usize = 0;

impl ModelParams {
    /// Zero-mean uniform initialization with scale `1/sqrt(d)`; biases and
    /// the padding row start at zero.
    pub fn init(hyper: &Hyper, num_users: usize, num_items: usize, rng: &mut Rng) -> Self {
        let d = hyper.d;
        let s = 1.0 / (d as f64).sqrt();
        let mut items = rng.uniform_matrix(num_items + 1, d, s);
        items.row_mut(0).fill(0.0);
        let positions = rng.uniform_matrix(hyper.n, d, s);
        let users = hyper.uses_user_embedding().then(|| rng.uniform_matrix(num_users, d, s));
        let blocks = (0..hyper.blocks).map(|_| BlockParams::random(d, rng)).collect();
        Self { items, positions, users, blocks }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            items: z(&self.items),
            positions: z(&self.positions),
            users: self.users.as_ref().map(z),
            blocks: self.blocks.iter().map(|b| BlockParams::zeros(b.query.rows())).collect(),
        }
    }

    pub fn d(&self) -> usize {
        self.items.cols()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows() - 1
    }

    pub fn num_users(&self) -> usize {
        self.users.as_ref().map_or(0, Matrix::rows)
    }

    /// Named tensors in a fixed order shared with [`Self::tensors_mut`].
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("items".to_owned(), &self.items), ("positions".to_owned(), &self.positions)];
        if let Some(u) = &self.users {
            out.push(("users".to_owned(), u));
        }
        for (m, b) in self.blocks.iter().enumerate() {
            for (name, t) in BlockParams::NAMES.iter().zip(b.tensors()) {
                out.push((format!("block{m}.{name}"), t));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.items, &mut self.positions];
        if let Some(u) = &mut self.users {
            out.push(u);
        }
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out
    }

    pub fn frozen_rows(&self) -> Vec<FrozenRow> {
        vec![FrozenRow { param: ITEMS_TENSOR, row: 0 }]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }

    pub fn same_layout(&self, other: &ModelParams) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Shape("parameter sets differ in layout".into()));
        }
        for (a, (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += scale * y;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors().iter().fold(0.0, |m, (_, t)| m.max(t.max_abs()))
    }

    /// Zeroes every block parameter, leaving embeddings intact.
    pub fn zero_blocks(&mut self) {
        for b in &mut self.blocks {
            for t in b.tensors_mut() {
                t.fill(0.0);
            }
        }
    }
}
