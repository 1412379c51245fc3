mod common;

use common::oracles::rank_by_sort;
use ramrec::datapipe::FixedWindow;
use ramrec::evalkit::{evaluate, rank_of_target, EvalOptions};
use ramrec::model::{Hyper, Model};
use ramrec::numerics::Rng;

#[test]
fn rank_matches_full_sort() {
    let mut rng = Rng::new(77);
    for _ in 0..10_000 {
        let m = 1 + rng.below(60);
        // coarse values force ties
        let coarse = rng.below(2) == 0;
        let scores: Vec<f64> =
            (0..m).map(|_| if coarse { rng.below(5) as f64 } else { rng.symmetric(3.0) }).collect();
        let target = 1 + rng.below(m) as u32;
        assert_eq!(rank_of_target(&scores, target), rank_by_sort(&scores, target));
    }
}

#[test]
fn report_orderings_hold() {
    let mut rng = Rng::new(8);
    for seed in 0..5 {
        let h = Hyper { d: 8, n: 5, heads: 2, blocks: 1, ..Hyper::default() };
        let model = Model::new(h, 30, 40, seed).unwrap();
        let pairs: Vec<FixedWindow> = (0..30)
            .map(|u| {
                let hist: Vec<u32> = (0..1 + rng.below(8)).map(|_| 1 + rng.below(40) as u32).collect();
                FixedWindow::from_history(u, &hist, 5, 1 + rng.below(40) as u32)
            })
            .collect();
        let r = evaluate(&model, &pairs, &[10, 20], EvalOptions::default()).unwrap();
        r.check_bounds().unwrap();
        assert!(r.recall(20).unwrap() >= r.recall(10).unwrap());
        for k in [10, 20] {
            assert!(r.ndcg(k).unwrap() <= r.recall(k).unwrap());
        }
    }
}
