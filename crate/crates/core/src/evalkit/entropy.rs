//! Average attention entropy over non-padding query positions, and the
//! reference value obtained by refilling the same nonzero pattern with
//! softmax-normalized uniform draws.

use serde::{Deserialize, Serialize};

use crate::datapipe::PAD;
use crate::model::sa::SaTrace;
use crate::model::ram::RamTrace;
use crate::numerics::{masked_softmax, Matrix, Rng};
use crate::{Error, Result};

/// Attention maps captured for one user window.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMaps {
    pub user: u32,
    /// `true` for query positions holding an item.
    pub query_valid: Vec<bool>,
    /// One `n x n` row-stochastic map per block.
    pub blocks: Vec<Matrix>,
}

impl UserMaps {
    pub fn from_sa_trace(user: u32, trace: &SaTrace) -> Self {
        Self {
            user,
            query_valid: trace.slots.iter().map(|&s| s != PAD).collect(),
            blocks: trace.attention_maps(),
        }
    }

    /// Per-head maps instead of the head average; block `m`, head `k` lands
    /// at index `m * n_h + k`.
    pub fn from_sa_trace_per_head(user: u32, trace: &SaTrace) -> Self {
        Self {
            user,
            query_valid: trace.slots.iter().map(|&s| s != PAD).collect(),
            blocks: trace.blocks.iter().flat_map(|b| b.weights.iter().cloned()).collect(),
        }
    }

    /// RAM weights as one query row per head: block `m` becomes an
    /// `n_h x n` map whose rows are all counted.
    pub fn from_ram_trace(user: u32, trace: &RamTrace) -> Self {
        let blocks: Vec<Matrix> = trace
            .blocks
            .iter()
            .map(|b| Matrix::from_rows(&b.attention.betas).expect("equal-length rows"))
            .collect();
        let heads = blocks.first().map_or(0, Matrix::rows);
        Self { user, query_valid: vec![true; heads], blocks }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEntropy {
    pub block: usize,
    pub learned: f64,
    pub uniform_baseline: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub blocks: Vec<BlockEntropy>,
    /// Counted (user, query position) pairs per block.
    pub counted_rows: usize,
    pub baseline_repeats: usize,
    pub source: String,
}

/// `-sum p ln p` with `0 ln 0 = 0`.
pub fn row_entropy(row: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in row {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

const ROW_SUM_TOLERANCE: f64 = 1e-6;

fn check_row(row: &[f64], j: usize, causal: bool) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::Data(format!("attention row {j} is not a distribution (sum {sum})")));
    }
    if causal && row[j + 1..].iter().any(|&p| p != 0.0) {
        return Err(Error::Data(format!("attention row {j} attends to a later position")));
    }
    Ok(())
}

fn block_count(maps: &[UserMaps]) -> Result<usize> {
    let nb = maps.first().map_or(0, |m| m.blocks.len());
    if maps.iter().any(|m| m.blocks.len() != nb) {
        return Err(Error::Data("users disagree on block count".into()));
    }
    Ok(nb)
}

/// Mean row entropy per block over every valid query row of every user.
/// Square maps are also checked for causality.
pub fn average_entropy(maps: &[UserMaps]) -> Result<Vec<f64>> {
    let nb = block_count(maps)?;
    let mut totals = vec![0.0; nb];
    let mut counted = 0usize;
    for um in maps {
        for (m, map) in um.blocks.iter().enumerate() {
            let causal = map.rows() == map.cols();
            for j in 0..map.rows() {
                if !um.query_valid[j] {
                    continue;
                }
                let row = map.row(j);
                check_row(row, j, causal)?;
                totals[m] += row_entropy(row);
                if m == 0 {
                    counted += 1;
                }
            }
        }
    }
    if counted == 0 {
        return Err(Error::Degenerate("no non-padding query rows".into()));
    }
    Ok(totals.into_iter().map(|t| t / counted as f64).collect())
}

/// Same average with every nonzero slot redrawn from `Uniform(0, 1)` and
/// renormalized by softmax, averaged over `repeats` independent fills.
pub fn uniform_baseline_entropy(maps: &[UserMaps], rng: &mut Rng, repeats: usize) -> Result<Vec<f64>> {
    let nb = block_count(maps)?;
    let repeats = repeats.max(1);
    let mut totals = vec![0.0; nb];
    let mut counted = 0usize;
    for _ in 0..repeats {
        for um in maps {
            for (m, map) in um.blocks.iter().enumerate() {
                for j in 0..map.rows() {
                    if !um.query_valid[j] {
                        continue;
                    }
                    let support: Vec<bool> = map.row(j).iter().map(|&p| p > 0.0).collect();
                    let draws: Vec<f64> =
                        support.iter().map(|&s| if s { rng.next_f64() } else { 0.0 }).collect();
                    totals[m] += row_entropy(&masked_softmax(&draws, &support)?);
                    if m == 0 {
                        counted += 1;
                    }
                }
            }
        }
    }
    if counted == 0 {
        return Err(Error::Degenerate("no non-padding query rows".into()));
    }
    Ok(totals.into_iter().map(|t| t / counted as f64).collect())
}

pub fn entropy_report(maps: &[UserMaps], rng: &mut Rng, repeats: usize, source: &str) -> Result<EntropyReport> {
    let learned = average_entropy(maps)?;
    let baseline = uniform_baseline_entropy(maps, rng, repeats)?;
    let counted_rows = maps
        .iter()
        .filter(|m| !m.blocks.is_empty())
        .map(|m| (0..m.blocks[0].rows()).filter(|&j| m.query_valid[j]).count())
        .sum();
    Ok(EntropyReport {
        blocks: learned
            .into_iter()
            .zip(baseline)
            .enumerate()
            .map(|(block, (learned, uniform_baseline))| BlockEntropy { block, learned, uniform_baseline })
            .collect(),
        counted_rows,
        baseline_repeats: repeats.max(1),
        source: source.to_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lower_uniform(n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for j in 0..n {
            for k in 0..=j {
                m.set(j, k, 1.0 / (j + 1) as f64);
            }
        }
        m
    }

    #[test]
    fn uniform_rows_give_log_support() {
        let um = UserMaps { user: 0, query_valid: vec![false, false, false, true], blocks: vec![lower_uniform(4)] };
        assert_eq!(average_entropy(&[um]).unwrap(), vec![4f64.ln()]);
        let um = UserMaps { user: 0, query_valid: vec![true; 3], blocks: vec![lower_uniform(3)] };
        let want = (0.0 + 2f64.ln() + 3f64.ln()) / 3.0;
        assert!((average_entropy(&[um]).unwrap()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn one_hot_rows_give_zero() {
        let um = UserMaps { user: 0, query_valid: vec![true; 3], blocks: vec![Matrix::identity(3)] };
        assert_eq!(average_entropy(&[um]).unwrap(), vec![0.0]);
    }

    #[test]
    fn explicit_row_value() {
        assert!((row_entropy(&[0.5, 0.25, 0.25]) - 1.03972).abs() < 1e-5);
    }

    #[test]
    fn malformed_rows_rejected() {
        let mut m = lower_uniform(2);
        m.set(1, 1, 0.9);
        let um = UserMaps { user: 0, query_valid: vec![true; 2], blocks: vec![m] };
        assert!(matches!(average_entropy(&[um]), Err(Error::Data(_))));
        let m = Matrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let um = UserMaps { user: 0, query_valid: vec![true; 2], blocks: vec![m] };
        assert!(matches!(average_entropy(&[um]), Err(Error::Data(_))));
    }

    #[test]
    fn single_slot_baseline_is_zero() {
        let um = UserMaps { user: 0, query_valid: vec![true], blocks: vec![Matrix::identity(1)] };
        assert_eq!(uniform_baseline_entropy(&[um], &mut Rng::new(1), 3).unwrap(), vec![0.0]);
    }

    #[test]
    fn two_slot_baseline_expectation() {
        let rows = 100_000;
        let maps: Vec<UserMaps> = vec![UserMaps {
            user: 0,
            query_valid: vec![true; rows],
            blocks: vec![Matrix::from_vec(rows, 2, vec![0.5; 2 * rows]).unwrap()],
        }];
        let h = uniform_baseline_entropy(&maps, &mut Rng::new(8), 1).unwrap()[0];
        // independent 1e7-sample Monte-Carlo estimate of E[H(softmax(u1, u2))]: 0.6733
        assert!((h - 0.6733).abs() < 0.01, "{h}");
        assert!(h <= 2f64.ln());
    }

    #[test]
    fn padding_users_change_nothing() {
        let base = UserMaps { user: 0, query_valid: vec![true; 3], blocks: vec![lower_uniform(3)] };
        let pad = UserMaps { user: 1, query_valid: vec![false; 3], blocks: vec![Matrix::zeros(3, 3)] };
        let a = average_entropy(&[base.clone()]).unwrap();
        let b = average_entropy(&[base, pad]).unwrap();
        assert_eq!(a, b);
    }
}
