use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Interaction;
use crate::{Error, Result};

/// Filtering and binarization applied to a raw log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub min_user_events: usize,
    pub min_item_events: usize,
    /// When set, events whose rating is below the threshold are dropped
    /// before filtering. Events without a rating are kept.
    pub rating_threshold: Option<f64>,
}

impl Default for Policy {
    fn default() -> Self {
        Self { min_user_events: 5, min_item_events: 5, rating_threshold: None }
    }
}

/// Dense, chronologically ordered interaction sequences.
///
/// Users are indexed `0..num_users`. Items are indexed `1..=num_items`;
/// id 0 is the padding sentinel and never appears in a sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub user_keys: Vec<String>,
    /// `item_keys[id - 1]` is the external key of item `id`.
    pub item_keys: Vec<String>,
    pub sequences: Vec<Vec<u32>>,
    pub timestamps: Vec<Vec<i64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub interactions_per_user: f64,
    pub interactions_per_item: f64,
}

impl Dataset {
    pub fn num_users(&self) -> usize {
        self.user_keys.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_keys.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    pub fn item_key(&self, id: u32) -> Option<&str> {
        (id as usize).checked_sub(1).and_then(|i| self.item_keys.get(i)).map(String::as_str)
    }

    pub fn stats(&self) -> DatasetStats {
        let interactions = self.num_interactions();
        let per = |n: usize| if n == 0 { 0.0 } else { interactions as f64 / n as f64 };
        DatasetStats {
            users: self.num_users(),
            items: self.num_items(),
            interactions,
            interactions_per_user: per(self.num_users()),
            interactions_per_item: per(self.num_items()),
        }
    }

    /// Structural checks: ids in range, no padding ids, matching lengths.
    pub fn validate(&self) -> Result<()> {
        if self.sequences.len() != self.user_keys.len()
            || self.timestamps.len() != self.sequences.len()
        {
            return Err(Error::Data("sequence table does not match user table".into()));
        }
        let items = self.num_items() as u32;
        for (u, (seq, ts)) in self.sequences.iter().zip(&self.timestamps).enumerate() {
            if seq.len() != ts.len() {
                return Err(Error::Data(format!("user {u}: timestamp count mismatch")));
            }
            if let Some(bad) = seq.iter().find(|&&i| i == 0 || i > items) {
                return Err(Error::Data(format!("user {u}: item id {bad} out of range")));
            }
            if ts.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Data(format!("user {u}: sequence not chronological")));
            }
        }
        Ok(())
    }
}

/// Applies the rating threshold, iterates user/item minimum-count filtering
/// to a fixed point, and assigns dense ids by first appearance in the
/// chronologically sorted stream (ties keep input order).
pub fn apply_policy(log: &[Interaction], policy: &Policy) -> Result<Dataset> {
    if log.is_empty() {
        return Err(Error::Degenerate("empty interaction log".into()));
    }
    let mut user_ids: HashMap<&str, usize> = HashMap::new();
    let mut item_ids: HashMap<&str, usize> = HashMap::new();
    let mut events: Vec<(usize, usize, usize)> = Vec::with_capacity(log.len());
    for (pos, ev) in log.iter().enumerate() {
        if let (Some(t), Some(r)) = (policy.rating_threshold, ev.rating) {
            if r < t {
                continue;
            }
        }
        let next_user = user_ids.len();
        let u = *user_ids.entry(ev.user.as_str()).or_insert(next_user);
        let next_item = item_ids.len();
        let i = *item_ids.entry(ev.item.as_str()).or_insert(next_item);
        events.push((u, i, pos));
    }

    let mut alive = vec![true; events.len()];
    loop {
        let mut user_count = vec![0usize; user_ids.len()];
        let mut item_count = vec![0usize; item_ids.len()];
        for (&(u, i, _), _) in events.iter().zip(&alive).filter(|(_, a)| **a) {
            user_count[u] += 1;
            item_count[i] += 1;
        }
        let mut changed = false;
        for (&(u, i, _), a) in events.iter().zip(alive.iter_mut()) {
            if *a && (user_count[u] < policy.min_user_events || item_count[i] < policy.min_item_events)
            {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut kept: Vec<(usize, usize, usize)> =
        events.into_iter().zip(alive).filter_map(|(e, a)| a.then_some(e)).collect();
    if kept.is_empty() {
        return Err(Error::Degenerate("no interactions survive filtering".into()));
    }
    kept.sort_by_key(|&(_, _, pos)| (log[pos].timestamp, pos));

    let mut dense_user: HashMap<usize, usize> = HashMap::new();
    let mut dense_item: HashMap<usize, u32> = HashMap::new();
    let mut ds = Dataset {
        user_keys: Vec::new(),
        item_keys: Vec::new(),
        sequences: Vec::new(),
        timestamps: Vec::new(),
    };
    for (u, i, pos) in kept {
        let ev = &log[pos];
        let du = *dense_user.entry(u).or_insert_with(|| {
            ds.user_keys.push(ev.user.clone());
            ds.sequences.push(Vec::new());
            ds.timestamps.push(Vec::new());
            ds.user_keys.len() - 1
        });
        let di = *dense_item.entry(i).or_insert_with(|| {
            ds.item_keys.push(ev.item.clone());
            ds.item_keys.len() as u32
        });
        ds.sequences[du].push(di);
        ds.timestamps[du].push(ev.timestamp);
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(user: &str, item: &str, ts: i64) -> Interaction {
        Interaction { user: user.into(), item: item.into(), rating: Some(4.0), timestamp: ts }
    }

    #[test]
    fn all_retained_when_thresholds_met() {
        let mut log = Vec::new();
        for u in ["a", "b", "c"] {
            for i in 0..5 {
                log.push(ev(u, &format!("i{i}"), i));
            }
        }
        let p = Policy { min_user_events: 5, min_item_events: 1, rating_threshold: None };
        let ds = apply_policy(&log, &p).unwrap();
        assert_eq!(ds.num_users(), 3);
        assert_eq!(ds.num_interactions(), 15);
    }

    #[test]
    fn cascade_removes_items_of_removed_users() {
        // user z has 4 events, the only events on items q1, q2; with z gone those
        // items fall out and the remaining users keep only shared items.
        let mut log = Vec::new();
        for u in ["a", "b"] {
            for i in 0..5 {
                log.push(ev(u, &format!("s{i}"), i));
            }
        }
        for (k, it) in ["q1", "q2", "s0", "s1"].iter().enumerate() {
            log.push(ev("z", it, 10 + k as i64));
        }
        let p = Policy { min_user_events: 5, min_item_events: 2, rating_threshold: None };
        let ds = apply_policy(&log, &p).unwrap();
        assert_eq!(ds.user_keys, vec!["a", "b"]);
        assert_eq!(ds.num_items(), 5);
        assert!(ds.item_keys.iter().all(|k| k.starts_with('s')));
    }

    #[test]
    fn rating_threshold_drops_low_ratings() {
        let mut log = vec![ev("a", "x", 1), ev("a", "y", 2)];
        log[1].rating = Some(2.0);
        let p = Policy { min_user_events: 1, min_item_events: 1, rating_threshold: Some(4.0) };
        let ds = apply_policy(&log, &p).unwrap();
        assert_eq!(ds.num_interactions(), 1);
    }

    #[test]
    fn ids_follow_chronological_first_appearance() {
        let log = vec![ev("late", "x", 50), ev("early", "y", 10), ev("early", "x", 10)];
        let p = Policy { min_user_events: 1, min_item_events: 1, rating_threshold: None };
        let ds = apply_policy(&log, &p).unwrap();
        assert_eq!(ds.user_keys, vec!["early", "late"]);
        assert_eq!(ds.item_keys, vec!["y", "x"]);
        // tie at ts=10 keeps input order: y before x
        assert_eq!(ds.sequences[0], vec![1, 2]);
        ds.validate().unwrap();
    }

    #[test]
    fn empty_results_are_degenerate() {
        assert!(matches!(apply_policy(&[], &Policy::default()), Err(Error::Degenerate(_))));
        let log = vec![ev("a", "x", 1)];
        assert!(matches!(apply_policy(&log, &Policy::default()), Err(Error::Degenerate(_))));
    }
}
