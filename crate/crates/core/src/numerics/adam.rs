use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::{Error, Result};

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moment: Vec<Matrix>,
    pub second_moment: Vec<Matrix>,
}

/// A parameter row that the optimizer must never touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrozenRow {
    pub param: usize,
    pub row: usize,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step(
        &mut self,
        params: &mut [&mut Matrix],
        grads: &[&Matrix],
        frozen: &[FrozenRow],
    ) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} parameters with {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len()
            || self.first_moment.iter().zip(params.iter()).any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::Shape("optimizer moments do not match parameters".into()));
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);

        for (idx, ((p, g), (m, v))) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
            .enumerate()
        {
            let cols = p.cols();
            let frozen_rows: Vec<usize> =
                frozen.iter().filter(|f| f.param == idx).map(|f| f.row).collect();
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                if !frozen_rows.is_empty() && frozen_rows.contains(&(i / cols)) {
                    continue;
                }
                md[i] = b1 * md[i] + (1.0 - b1) * gi;
                vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let before = p.clone();
        let g = Matrix::zeros(1, 2);
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut [&mut p], &[&g], &[]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2, so the update is lr * 1 / (1 + 1e-8)
        let mut w = Matrix::zeros(1, 1);
        let g = Matrix::row_vector(&[1.0]);
        let mut adam = AdamState::new(0.1);
        adam.step(&mut [&mut w], &[&g], &[]).unwrap();
        assert!((w.get(0, 0) + 0.1).abs() < 1e-8);
    }

    #[test]
    fn frozen_row_untouched() {
        let mut p = Matrix::zeros(3, 2);
        let g = Matrix::from_rows(&[vec![5.0, 5.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let mut adam = AdamState::new(0.01);
        adam.step(&mut [&mut p], &[&g], &[FrozenRow { param: 0, row: 0 }]).unwrap();
        assert_eq!(p.row(0), &[0.0, 0.0]);
        assert!(p.get(1, 0) < 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Matrix::zeros(2, 2);
        let g = Matrix::zeros(2, 3);
        let mut adam = AdamState::new(0.01);
        assert!(matches!(adam.step(&mut [&mut p], &[&g], &[]), Err(Error::Shape(_))));
        assert_eq!(adam.step, 0);
    }
}
