use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::{FixedWindow, PAD};
use crate::model::Model;
use crate::{Error, Result};

/// 1-based rank of `target` among items `1..=scores.len()` (entry `i` of
/// `scores` is item `i + 1`). Ties rank the smaller item id first.
pub fn rank_of_target(scores: &[f64], target: u32) -> usize {
    rank_excluding(scores, target, &[])
}

/// As [`rank_of_target`], skipping the items in `excluded` (sorted
/// ascending). The target itself is never skipped.
pub fn rank_excluding(scores: &[f64], target: u32, excluded: &[u32]) -> usize {
    let t = target as usize - 1;
    let ts = scores[t];
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if i == t {
            continue;
        }
        if s > ts || (s == ts && i < t) {
            let item = i as u32 + 1;
            if excluded.binary_search(&item).is_err() {
                rank += 1;
            }
        }
    }
    rank
}

/// Hit indicator and `1/log2(rank+1)` discount within the top `k`.
pub fn recall_ndcg(rank: usize, k: usize) -> (f64, f64) {
    if rank >= 1 && rank <= k {
        (1.0, 1.0 / ((rank + 1) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cutoffs: Vec<CutoffMetrics>,
    pub users: usize,
    /// Windows holding no item at all, left out of the averages.
    pub skipped_empty: usize,
    pub exclude_seen: bool,
    pub tie_break: String,
}

impl EvalReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().find(|c| c.k == k).map(|c| c.recall)
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.cutoffs.iter().find(|c| c.k == k).map(|c| c.ndcg)
    }

    /// `0 <= ndcg@k <= recall@k <= 1` and recall non-decreasing in `k`.
    pub fn check_bounds(&self) -> Result<()> {
        let mut sorted = self.cutoffs.clone();
        sorted.sort_by_key(|c| c.k);
        for c in &sorted {
            if !(0.0..=1.0).contains(&c.recall) || c.ndcg < 0.0 || c.ndcg > c.recall + 1e-12 {
                return Err(Error::Data(format!("metric bounds violated at k={}", c.k)));
            }
        }
        if sorted.windows(2).any(|w| w[1].recall + 1e-12 < w[0].recall) {
            return Err(Error::Data("recall decreases with k".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions<'a> {
    /// Per-user sorted item lists removed from the ranking (except the
    /// target). `None` ranks over every item.
    pub exclude: Option<&'a [Vec<u32>]>,
}

/// Averages recall and NDCG at every cutoff from per-user ranks.
pub fn summarize(ranks: &[usize], cutoffs: &[usize], skipped: usize, exclude_seen: bool) -> EvalReport {
    let users = ranks.len();
    let cutoffs = cutoffs
        .iter()
        .map(|&k| {
            let (mut r, mut g) = (0.0, 0.0);
            for &rank in ranks {
                let (a, b) = recall_ndcg(rank, k);
                r += a;
                g += b;
            }
            let div = users.max(1) as f64;
            CutoffMetrics { k, recall: r / div, ndcg: g / div }
        })
        .collect();
    EvalReport {
        cutoffs,
        users,
        skipped_empty: skipped,
        exclude_seen,
        tie_break: "ascending item id".to_owned(),
    }
}

/// Ranks of each pair's target under the model; `None` for windows with no
/// items. Users fan out across the current rayon pool; the output order is
/// the input order.
pub fn model_ranks(model: &Model, pairs: &[FixedWindow], opts: EvalOptions<'_>) -> Result<Vec<Option<usize>>> {
    pairs
        .par_iter()
        .map(|w| {
            if w.slots.iter().all(|&s| s == PAD) {
                return Ok(None);
            }
            let trace = model.forward(&w.slots)?;
            let scores = model.score_all(trace.output(), w.user)?;
            let excluded = opts
                .exclude
                .and_then(|e| e.get(w.user as usize))
                .map_or(&[][..], Vec::as_slice);
            Ok(Some(rank_excluding(&scores, w.target, excluded)))
        })
        .collect()
}

pub fn evaluate(
    model: &Model,
    pairs: &[FixedWindow],
    cutoffs: &[usize],
    opts: EvalOptions<'_>,
) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Degenerate("evaluation split is empty".into()));
    }
    let ranks = model_ranks(model, pairs, opts)?;
    let skipped = ranks.iter().filter(|r| r.is_none()).count();
    let ranks: Vec<usize> = ranks.into_iter().flatten().collect();
    Ok(summarize(&ranks, cutoffs, skipped, opts.exclude.is_some()))
}

/// Evaluates a fixed score vector shared by every user, such as item
/// popularity.
pub fn evaluate_static(scores: &[f64], pairs: &[FixedWindow], cutoffs: &[usize]) -> EvalReport {
    let ranks: Vec<usize> = pairs.iter().map(|w| rank_of_target(scores, w.target)).collect();
    summarize(&ranks, cutoffs, 0, false)
}

/// Item interaction counts over training sequences, entry `i` for item `i+1`.
pub fn popularity_scores(train: &[Vec<u32>], num_items: usize) -> Vec<f64> {
    let mut counts = vec![0.0; num_items];
    for seq in train {
        for &i in seq {
            counts[i as usize - 1] += 1.0;
        }
    }
    counts
}
