use serde::{Deserialize, Serialize};

use crate::datapipe::FixedWindow;
use crate::model::{Model, Trace};
use crate::numerics::{cosine_similarity, Rng};
use crate::{Error, Result};

/// Mean cosine similarity between consecutive block outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSimilarity {
    /// Entry `m` compares `h^(m)` with `h^(m+1)`.
    pub mean: Vec<f64>,
    pub counted: Vec<usize>,
    /// Pairs dropped because one side had zero norm.
    pub skipped: Vec<usize>,
}

/// `states[u]` holds `h^(0)..h^(n_b)` for user `u`.
pub fn block_similarity(states: &[Vec<Vec<f64>>]) -> Result<BlockSimilarity> {
    let pairs = states.first().map_or(0, |s| s.len().saturating_sub(1));
    if pairs == 0 {
        return Err(Error::Degenerate("need at least one block".into()));
    }
    let mut sums = vec![0.0; pairs];
    let mut counted = vec![0; pairs];
    let mut skipped = vec![0; pairs];
    for user in states {
        if user.len() != pairs + 1 {
            return Err(Error::Data("users disagree on block count".into()));
        }
        for m in 0..pairs {
            match cosine_similarity(&user[m], &user[m + 1]) {
                Ok(c) => {
                    sums[m] += c;
                    counted[m] += 1;
                }
                Err(Error::Degenerate(_)) => skipped[m] += 1,
                Err(e) => return Err(e),
            }
        }
    }
    let mean = sums.iter().zip(&counted).map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 }).collect();
    Ok(BlockSimilarity { mean, counted, skipped })
}

/// Block outputs `h^(0)..h^(n_b)` of a forward pass. For the comparator these
/// are the last-position rows.
pub fn block_states(trace: &Trace) -> Vec<Vec<f64>> {
    match trace {
        Trace::Ram(t) => t.states.clone(),
        Trace::Sa(t) => t.states.iter().map(|s| s.row(s.rows() - 1).to_vec()).collect(),
    }
}

/// Fixed-width histogram over `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(bin_width: f64) -> Self {
        let bins = (2.0 / bin_width).round() as usize;
        Self { bin_width, counts: vec![0; bins] }
    }

    pub fn add(&mut self, v: f64) {
        let idx = ((v.clamp(-1.0, 1.0) + 1.0) / self.bin_width).floor() as usize;
        let idx = idx.min(self.counts.len() - 1);
        self.counts[idx] += 1;
    }

    pub fn lower_edge(&self, bin: usize) -> f64 {
        -1.0 + bin as f64 * self.bin_width
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    /// `sim(h_i, u_i)`.
    pub own: Histogram,
    /// `sim(h_i, u_j)` for a seeded random `j != i`.
    pub other: Histogram,
    pub users: usize,
    pub skipped: usize,
    pub mean_own: f64,
    pub mean_other: f64,
}

impl SimilarityReport {
    /// Two-column plotting table: bin lower edge, own count, other count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lower,own,other\n");
        for b in 0..self.own.counts.len() {
            out.push_str(&format!(
                "{:.2},{},{}\n",
                self.own.lower_edge(b),
                self.own.counts[b],
                self.other.counts[b]
            ));
        }
        out
    }
}

/// Other user drawn uniformly from `0..users` excluding `own`.
pub fn sample_other_user(own: u32, users: usize, rng: &mut Rng) -> u32 {
    let j = rng.below(users - 1) as u32;
    if j >= own {
        j + 1
    } else {
        j
    }
}

/// Compares block outputs with the user embedding table. `states[i]` is
/// `h^(n_b)` for user `users[i]`.
pub fn similarity_from_states(
    states: &[Vec<f64>],
    users: &[u32],
    user_table: &crate::numerics::Matrix,
    rng: &mut Rng,
    bin_width: f64,
) -> Result<SimilarityReport> {
    if user_table.rows() < 2 {
        return Err(Error::Degenerate("need at least two users".into()));
    }
    let mut own = Histogram::new(bin_width);
    let mut other = Histogram::new(bin_width);
    let (mut so, mut sx, mut skipped) = (0.0, 0.0, 0);
    for (h, &u) in states.iter().zip(users) {
        let j = sample_other_user(u, user_table.rows(), rng);
        let a = cosine_similarity(h, user_table.row(u as usize));
        let b = cosine_similarity(h, user_table.row(j as usize));
        match (a, b) {
            (Ok(a), Ok(b)) => {
                own.add(a);
                other.add(b);
                so += a;
                sx += b;
            }
            (Err(Error::Degenerate(_)), _) | (_, Err(Error::Degenerate(_))) => skipped += 1,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    let counted = own.total();
    let div = counted.max(1) as f64;
    Ok(SimilarityReport {
        own,
        other,
        users: counted,
        skipped,
        mean_own: so / div,
        mean_other: sx / div,
    })
}

pub fn user_similarity_histogram(
    model: &Model,
    windows: &[FixedWindow],
    rng: &mut Rng,
    bin_width: f64,
) -> Result<SimilarityReport> {
    let table = model
        .params
        .users
        .as_ref()
        .ok_or_else(|| Error::Contract("model has no user embeddings".into()))?;
    let mut states = Vec::with_capacity(windows.len());
    let mut users = Vec::with_capacity(windows.len());
    for w in windows {
        states.push(model.forward(&w.slots)?.output().to_vec());
        users.push(w.user);
    }
    similarity_from_states(&states, &users, table, rng, bin_width)
}
