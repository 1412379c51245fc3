//! First-order Markov interaction generator used for learning checks.

use super::Dataset;
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovSpec {
    pub users: usize,
    pub items: usize,
    pub length: usize,
    /// High-probability successors per item.
    pub successors: usize,
    /// Probability of moving to one of the successors; otherwise the next
    /// item is uniform over all items.
    pub follow_probability: f64,
    pub seed: u64,
}

impl Default for MarkovSpec {
    fn default() -> Self {
        Self { users: 1000, items: 100, length: 30, successors: 5, follow_probability: 0.9, seed: 7 }
    }
}

/// Successor sets: items are laid on a random cycle and every item's
/// successors sit at the same random set of nonzero offsets along it. Each
/// item then has exactly `successors` successors and predecessors, so the
/// chain's stationary distribution is uniform and item popularity carries
/// no signal about the next item.
pub fn successor_table(items: usize, successors: usize, rng: &mut Rng) -> Vec<Vec<u32>> {
    let mut order: Vec<u32> = (1..=items as u32).collect();
    rng.shuffle(&mut order);
    let mut offsets: Vec<usize> = (1..items).collect();
    rng.shuffle(&mut offsets);
    offsets.truncate(successors);
    let mut table = vec![Vec::new(); items];
    for (p, &item) in order.iter().enumerate() {
        table[item as usize - 1] = offsets.iter().map(|o| order[(p + o) % items]).collect();
    }
    table
}

/// Sequences start uniformly and then follow the chain: with
/// `follow_probability` a uniform pick among the current item's successors,
/// otherwise a uniform item.
pub fn markov_dataset(spec: &MarkovSpec) -> Dataset {
    let mut rng = Rng::new(spec.seed);
    let table = successor_table(spec.items, spec.successors, &mut rng);
    let mut sequences = Vec::with_capacity(spec.users);
    for _ in 0..spec.users {
        let mut seq = Vec::with_capacity(spec.length);
        let mut cur = 1 + rng.below(spec.items) as u32;
        seq.push(cur);
        while seq.len() < spec.length {
            cur = if rng.next_f64() < spec.follow_probability {
                let succ = &table[cur as usize - 1];
                succ[rng.below(succ.len())]
            } else {
                1 + rng.below(spec.items) as u32
            };
            seq.push(cur);
        }
        sequences.push(seq);
    }
    Dataset {
        user_keys: (0..spec.users).map(|u| format!("u{u}")).collect(),
        item_keys: (1..=spec.items).map(|i| format!("i{i}")).collect(),
        timestamps: sequences.iter().map(|s| (0..s.len() as i64).collect()).collect(),
        sequences,
    }
}
