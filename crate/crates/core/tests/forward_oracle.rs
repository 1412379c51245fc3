mod common;

use common::oracles::{ram_forward_oracle, sa_forward_oracle};
use ramrec::model::{Hyper, Model, ModelKind, ScaleRule};
use ramrec::numerics::{Activation, Rng};

fn windows(n: usize, items: usize, rng: &mut Rng) -> Vec<Vec<u32>> {
    (0..10)
        .map(|_| {
            let pad = rng.below(n);
            (0..n).map(|t| if t < pad { 0 } else { 1 + rng.below(items) as u32 }).collect()
        })
        .collect()
}

fn close(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()))
}

#[test]
fn scalar_case_d2_n2() {
    for kind in [ModelKind::Ram, ModelKind::Sa] {
        let h = Hyper { kind, d: 2, n: 2, heads: 1, blocks: 1, ..Hyper::default() };
        let model = Model::new(h, 3, 5, 4).unwrap();
        for slots in [[1u32, 2], [0, 3], [5, 5]] {
            let got = model.forward(&slots).unwrap().output().to_vec();
            let want = match kind {
                ModelKind::Sa => sa_forward_oracle(&model, &slots),
                _ => ram_forward_oracle(&model, &slots),
            };
            assert!(close(&got, &want), "{kind:?} {slots:?}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn stacked_multi_head_configurations() {
    let mut rng = Rng::new(21);
    for seed in 0..6 {
        for kind in [ModelKind::Ram, ModelKind::RamU, ModelKind::Sa] {
            for (act, scale, mask) in [
                (Activation::Gelu, ScaleRule::SqrtD, true),
                (Activation::Relu, ScaleRule::SqrtHeadDim, true),
                (Activation::Gelu, ScaleRule::SqrtD, false),
            ] {
                let h = Hyper {
                    kind,
                    d: 6,
                    n: 5,
                    heads: 3,
                    blocks: 1 + seed as usize % 3,
                    activation: act,
                    scale,
                    mask_padding: mask,
                    ..Hyper::default()
                };
                let model = Model::new(h, 2, 9, seed).unwrap();
                for slots in windows(5, 9, &mut rng) {
                    let got = model.forward(&slots).unwrap().output().to_vec();
                    let want = match kind {
                        ModelKind::Sa => sa_forward_oracle(&model, &slots),
                        _ => ram_forward_oracle(&model, &slots),
                    };
                    assert!(close(&got, &want), "{h:?} {slots:?}");
                }
            }
        }
    }
}
