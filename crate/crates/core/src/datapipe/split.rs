use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Error, Result};

/// Padding sentinel item id.
pub const PAD: u32 = 0;

/// Exactly `n` item slots, padding only as a left prefix, and the item to
/// predict after them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedWindow {
    pub user: u32,
    pub slots: Vec<u32>,
    pub target: u32,
}

impl FixedWindow {
    /// Window over the last `n` entries of `history`, left-padded.
    pub fn from_history(user: u32, history: &[u32], n: usize, target: u32) -> Self {
        Self { user, slots: left_pad(history, n), target }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn padding_len(&self) -> usize {
        self.slots.iter().take_while(|&&s| s == PAD).count()
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.slots.iter().map(|&s| s != PAD).collect()
    }

    pub fn check(&self) -> Result<()> {
        let pad = self.padding_len();
        if self.slots[pad..].contains(&PAD) {
            return Err(Error::Contract("padding must be a contiguous left prefix".into()));
        }
        if self.target == PAD {
            return Err(Error::Contract("window target is the padding id".into()));
        }
        Ok(())
    }
}

/// The last `n` entries of `items`, left-padded with [`PAD`] to length `n`.
pub fn left_pad(items: &[u32], n: usize) -> Vec<u32> {
    let tail = &items[items.len().saturating_sub(n)..];
    let mut out = vec![PAD; n - tail.len()];
    out.extend_from_slice(tail);
    out
}

/// Per-user leave-one-out partition of a sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub user: u32,
    pub train: Vec<u32>,
    pub validation: u32,
    pub test: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeaveOneOut {
    pub users: Vec<UserSplit>,
    /// Users with fewer than three interactions.
    pub excluded: Vec<u32>,
}

/// Last item to test, second-last to validation, the rest to training.
pub fn leave_one_out(ds: &Dataset) -> LeaveOneOut {
    let mut out = LeaveOneOut::default();
    for (u, seq) in ds.sequences.iter().enumerate() {
        let u = u as u32;
        if seq.len() < 3 {
            out.excluded.push(u);
            continue;
        }
        let k = seq.len();
        out.users.push(UserSplit {
            user: u,
            train: seq[..k - 2].to_vec(),
            validation: seq[k - 2],
            test: seq[k - 1],
        });
    }
    out
}

/// Prefix-augmented training windows: from the last `n` training items
/// `b1..bm`, one example per `t` in `2..=m` predicting `b_t` from
/// `b1..b_{t-1}`.
pub fn make_windows(user: u32, train: &[u32], n: usize) -> Result<Vec<FixedWindow>> {
    if n < 2 {
        return Err(Error::Contract(format!("window length {n} < 2")));
    }
    let tail = &train[train.len().saturating_sub(n)..];
    Ok((1..tail.len())
        .map(|t| FixedWindow::from_history(user, &tail[..t], n, tail[t]))
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub n: usize,
    pub train: Vec<FixedWindow>,
    pub validation: Vec<FixedWindow>,
    pub test: Vec<FixedWindow>,
}

impl SplitBundle {
    pub fn build(splits: &LeaveOneOut, n: usize) -> Result<Self> {
        let mut bundle = SplitBundle { n, ..Default::default() };
        for s in &splits.users {
            bundle.train.extend(make_windows(s.user, &s.train, n)?);
            bundle.validation.push(FixedWindow::from_history(s.user, &s.train, n, s.validation));
            let mut seen = s.train.clone();
            seen.push(s.validation);
            bundle.test.push(FixedWindow::from_history(s.user, &seen, n, s.test));
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn dataset(seqs: Vec<Vec<u32>>) -> Dataset {
        let items = seqs.iter().flatten().copied().max().unwrap_or(0) as usize;
        Dataset {
            user_keys: (0..seqs.len()).map(|u| u.to_string()).collect(),
            item_keys: (1..=items).map(|i| i.to_string()).collect(),
            timestamps: seqs.iter().map(|s| (0..s.len() as i64).collect()).collect(),
            sequences: seqs,
        }
    }

    #[test]
    fn five_item_sequence_split() {
        let ds = dataset(vec![vec![1, 2, 3, 4, 5]]);
        let loo = leave_one_out(&ds);
        assert_eq!(loo.users[0].train, vec![1, 2, 3]);
        assert_eq!(loo.users[0].validation, 4);
        assert_eq!(loo.users[0].test, 5);
        let b = SplitBundle::build(&loo, 5).unwrap();
        assert_eq!(b.validation[0].slots, vec![0, 0, 1, 2, 3]);
        assert_eq!(b.test[0].slots, vec![0, 1, 2, 3, 4]);
        assert_eq!(b.test[0].target, 5);
    }

    #[test]
    fn short_users_excluded() {
        let ds = dataset(vec![vec![1, 2], vec![1, 2, 3]]);
        let loo = leave_one_out(&ds);
        assert_eq!(loo.excluded, vec![0]);
        assert_eq!(loo.users.len(), 1);
    }

    #[test]
    fn counting_oracle_over_random_users() {
        let mut rng = Rng::new(11);
        let seqs: Vec<Vec<u32>> = (0..100)
            .map(|_| (0..3 + rng.below(20)).map(|_| 1 + rng.below(50) as u32).collect())
            .collect();
        let expected_train: usize =
            seqs.iter().map(|s| (s.len() - 2).min(7).saturating_sub(1)).sum();
        let b = SplitBundle::build(&leave_one_out(&dataset(seqs)), 7).unwrap();
        assert_eq!(b.validation.len(), 100);
        assert_eq!(b.test.len(), 100);
        assert_eq!(b.train.len(), expected_train);
    }

    #[test]
    fn windows_for_short_train() {
        let w = make_windows(0, &[7, 8, 9], 5).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!((w[0].slots.clone(), w[0].target), (vec![0, 0, 0, 0, 7], 8));
        assert_eq!((w[1].slots.clone(), w[1].target), (vec![0, 0, 0, 7, 8], 9));
        assert!(make_windows(0, &[7], 5).unwrap().is_empty());
        assert!(make_windows(0, &[], 5).unwrap().is_empty());
        assert!(make_windows(0, &[1, 2], 1).is_err());
    }

    #[test]
    fn windows_use_only_last_n_items() {
        let train: Vec<u32> = (1..=10).collect();
        let w = make_windows(0, &train, 4).unwrap();
        // enumerate: last four items 7..10, prefixes of length 1..3
        let want = vec![
            (vec![0, 0, 0, 7], 8),
            (vec![0, 0, 7, 8], 9),
            (vec![0, 7, 8, 9], 10),
        ];
        let got: Vec<_> = w.iter().map(|x| (x.slots.clone(), x.target)).collect();
        assert_eq!(got, want);
        for x in &w {
            x.check().unwrap();
        }
    }

    proptest::proptest! {
        #[test]
        fn windows_preserve_order_and_never_leak_test(
            seq in proptest::collection::vec(1u32..30, 3..40),
            n in 2usize..12,
        ) {
            let ds = dataset(vec![seq.clone()]);
            let b = SplitBundle::build(&leave_one_out(&ds), n).unwrap();
            let train = &seq[..seq.len() - 2];
            for w in &b.train {
                w.check().unwrap();
                let body: Vec<u32> = w.slots[w.padding_len()..].to_vec();
                // body followed by target is a contiguous run of the training sequence
                let mut run = body.clone();
                run.push(w.target);
                proptest::prop_assert!(train.windows(run.len()).any(|win| win == run.as_slice()));
            }
            // the test position never contributes to a training window
            let train_positions = b.train.len();
            proptest::prop_assert!(train_positions <= train.len().saturating_sub(1));
        }
    }
}
