//! Model parameters, the two block families and recommendation scoring.

pub mod checkpoint;
pub mod gradcheck;
mod common;
mod hyper;
mod params;
pub mod ram;
pub mod sa;

pub use common::{embed_sequence, TailCache};
pub use hyper::{Hyper, ModelKind, ScaleRule};
pub use params::{BlockParams, ModelParams, ITEMS_TENSOR};

use crate::datapipe::PAD;
use crate::numerics::{axpy, dot, Matrix, OpCounter, Rng};
use crate::{Error, Result};

/// Forward-pass record of either model family.
#[derive(Debug, Clone, PartialEq)]
pub enum Trace {
    Ram(ram::RamTrace),
    Sa(sa::SaTrace),
}

impl Trace {
    /// The sequence representation fed to scoring.
    pub fn output(&self) -> &[f64] {
        match self {
            Trace::Ram(t) => t.output(),
            Trace::Sa(t) => t.output(),
        }
    }
}

/// Hyperparameters plus parameters: everything needed to score.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub hyper: Hyper,
    pub params: ModelParams,
}

impl Model {
    pub fn new(hyper: Hyper, num_users: usize, num_items: usize, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if num_items == 0 {
            return Err(Error::Degenerate("model over zero items".into()));
        }
        let params = ModelParams::init(&hyper, num_users, num_items, &mut Rng::new(seed));
        Ok(Self { hyper, params })
    }

    pub fn from_parts(hyper: Hyper, params: ModelParams) -> Result<Self> {
        hyper.validate()?;
        let expect_blocks = params.blocks.len() == hyper.blocks;
        let expect_users = params.users.is_some() == hyper.uses_user_embedding();
        if !expect_blocks
            || !expect_users
            || params.d() != hyper.d
            || params.positions.shape() != (hyper.n, hyper.d)
        {
            return Err(Error::Contract("parameters do not match hyperparameters".into()));
        }
        Ok(Self { hyper, params })
    }

    pub fn num_items(&self) -> usize {
        self.params.num_items()
    }

    pub fn forward(&self, slots: &[u32]) -> Result<Trace> {
        self.forward_with(slots, None, &mut OpCounter::disabled())
    }

    /// Forward pass; `rng` enables training-time dropout when the model has a
    /// nonzero dropout rate.
    pub fn forward_with(
        &self,
        slots: &[u32],
        rng: Option<&mut Rng>,
        ops: &mut OpCounter,
    ) -> Result<Trace> {
        match self.hyper.kind {
            ModelKind::Ram | ModelKind::RamU => {
                ram::forward_with(slots, &self.params, &self.hyper, rng, ops).map(Trace::Ram)
            }
            ModelKind::Sa => sa::forward_with(slots, &self.params, &self.hyper, rng, ops).map(Trace::Sa),
        }
    }

    pub fn backward(&self, trace: &Trace, d_output: &[f64], grads: &mut ModelParams) -> Result<()> {
        match (trace, self.hyper.kind) {
            (Trace::Ram(t), ModelKind::Ram | ModelKind::RamU) => {
                ram::backward(t, d_output, &self.params, &self.hyper, grads)
            }
            (Trace::Sa(t), ModelKind::Sa) => sa::backward(t, d_output, &self.params, &self.hyper, grads),
            _ => Err(Error::Contract("trace from a different model family".into())),
        }
    }

    fn user_row(&self, user: u32) -> Result<Option<&[f64]>> {
        match (&self.params.users, self.hyper.uses_user_embedding()) {
            (Some(u), true) => {
                if user as usize >= u.rows() {
                    return Err(Error::Index(format!("user {user} with {} users", u.rows())));
                }
                Ok(Some(u.row(user as usize)))
            }
            _ => Ok(None),
        }
    }

    /// `h + u_i` with the user embedding, `h` without.
    pub fn preference(&self, h: &[f64], user: u32) -> Result<Vec<f64>> {
        let mut p = h.to_vec();
        if let Some(u) = self.user_row(user)? {
            axpy(&mut p, 1.0, u);
        }
        Ok(p)
    }

    /// `h . v_j + u_i . v_j`, or `h . v_j` without the user embedding. The
    /// two terms are summed last so the user contribution separates exactly.
    pub fn score(&self, h: &[f64], user: u32, item: u32) -> Result<f64> {
        if item == PAD {
            return Err(Error::Contract("the padding item is never scored".into()));
        }
        if item as usize > self.num_items() {
            return Err(Error::Index(format!("item {item} with {} items", self.num_items())));
        }
        let v = self.params.items.row(item as usize);
        Ok(match self.user_row(user)? {
            Some(u) => dot(h, v) + dot(u, v),
            None => dot(h, v),
        })
    }

    /// Scores for items `1..=num_items`; entry `i` belongs to item `i + 1`.
    pub fn score_all(&self, h: &[f64], user: u32) -> Result<Vec<f64>> {
        let user_row = self.user_row(user)?;
        let items = &self.params.items;
        Ok((1..=self.num_items())
            .map(|i| {
                let v = items.row(i);
                match user_row {
                    Some(u) => dot(h, v) + dot(u, v),
                    None => dot(h, v),
                }
            })
            .collect())
    }

    /// Gradient of `sum_j coef_j * score(h, user, item_j)` into `grads`;
    /// returns `dL/dh`.
    pub fn score_backward(
        &self,
        h: &[f64],
        user: u32,
        items: &[(u32, f64)],
        grads: &mut ModelParams,
    ) -> Result<Vec<f64>> {
        let p = self.preference(h, user)?;
        let mut d_h = vec![0.0; h.len()];
        for &(item, coef) in items {
            if item == PAD || item as usize > self.num_items() {
                return Err(Error::Contract(format!("cannot score item {item}")));
            }
            axpy(&mut d_h, coef, self.params.items.row(item as usize));
            axpy(grads.items.row_mut(item as usize), coef, &p);
        }
        if let (Some(gu), true) = (&mut grads.users, self.hyper.uses_user_embedding()) {
            axpy(gu.row_mut(user as usize), 1.0, &d_h);
        }
        Ok(d_h)
    }

    /// Converts the model into the no-user-embedding ablation sharing
    /// every other parameter.
    pub fn without_user_embedding(&self) -> Model {
        let mut m = self.clone();
        if m.hyper.kind == ModelKind::Ram {
            m.hyper.kind = ModelKind::RamU;
            m.params.users = None;
        }
        m
    }

    /// Item embedding table without the padding row.
    pub fn item_table(&self) -> Matrix {
        let items = &self.params.items;
        Matrix::from_vec(items.rows() - 1, items.cols(), items.data()[items.cols()..].to_vec())
            .expect("sized by construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: ModelKind) -> Model {
        let h = Hyper { kind, d: 2, n: 3, heads: 1, blocks: 1, ..Hyper::default() };
        Model::new(h, 2, 3, 1).unwrap()
    }

    #[test]
    fn score_is_dot_of_user_preference_and_item() {
        let mut m = tiny(ModelKind::Ram);
        m.params.users.as_mut().unwrap().row_mut(1).copy_from_slice(&[0.0, 1.0]);
        m.params.items.row_mut(2).copy_from_slice(&[2.0, 3.0]);
        assert_eq!(m.score(&[1.0, 0.0], 1, 2).unwrap(), 5.0);
        assert!(matches!(m.score(&[1.0, 0.0], 1, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_state_and_user_score_zero() {
        let mut m = tiny(ModelKind::Ram);
        m.params.users.as_mut().unwrap().fill(0.0);
        assert!(m.score_all(&[0.0, 0.0], 0).unwrap().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn score_all_matches_item_by_item() {
        let m = tiny(ModelKind::Ram);
        let h = [0.3, -1.2];
        let all = m.score_all(&h, 1).unwrap();
        for i in 1..=3u32 {
            assert_eq!(all[i as usize - 1], m.score(&h, 1, i).unwrap());
        }
    }

    #[test]
    fn hand_valued_score_vector() {
        let mut m = tiny(ModelKind::Ram);
        m.params.users.as_mut().unwrap().row_mut(0).copy_from_slice(&[1.0, -1.0]);
        m.params.items = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 2.0],
            vec![-1.0, 1.0],
        ])
        .unwrap();
        // h = (0.5, 1.0), u = (1, -1): h.v + u.v per item
        assert_eq!(m.score_all(&[0.5, 1.0], 0).unwrap(), vec![0.5 + 1.0, 2.0 - 2.0, 0.5 - 2.0]);
    }

    #[test]
    fn ablation_drops_user_table() {
        let m = tiny(ModelKind::Ram);
        let u = m.without_user_embedding();
        assert_eq!(u.hyper.kind, ModelKind::RamU);
        assert!(u.params.users.is_none());
        let h = [0.2, 0.1];
        let long = dot(m.params.users.as_ref().unwrap().row(1), m.params.items.row(3));
        assert_eq!(m.score(&h, 1, 3).unwrap(), u.score(&h, 1, 3).unwrap() + long);
    }
}
