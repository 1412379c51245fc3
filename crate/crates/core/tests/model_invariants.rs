use ramrec::model::{embed_sequence, ram, Hyper, Model, ModelKind};
use ramrec::numerics::{dot, Rng};

#[test]
fn user_term_separates_exactly() {
    let h = Hyper { d: 8, n: 5, heads: 2, blocks: 2, ..Hyper::default() };
    let ram_model = Model::new(h, 6, 15, 9).unwrap();
    let ram_u = ram_model.without_user_embedding();
    assert_eq!(ram_u.hyper.kind, ModelKind::RamU);
    assert!(ram_u.params.users.is_none());
    let users = ram_model.params.users.as_ref().unwrap();
    let trace = ram_model.forward(&[0, 3, 7, 1, 2]).unwrap();
    let h_out = trace.output();
    assert_eq!(ram_u.forward(&[0, 3, 7, 1, 2]).unwrap().output(), h_out);
    for user in 0..6u32 {
        let with_user = ram_model.score_all(h_out, user).unwrap();
        let without = ram_u.score_all(h_out, user).unwrap();
        for item in 1..=15u32 {
            let uv = dot(users.row(user as usize), ram_model.params.items.row(item as usize));
            let i = item as usize - 1;
            assert_eq!(with_user[i], without[i] + uv);
            assert_eq!(ram_model.score(h_out, user, item).unwrap(), with_user[i]);
        }
    }
}

#[test]
fn embedding_matrix_is_reused_unchanged() {
    let mut rng = Rng::new(3);
    for blocks in 1..=8 {
        let h = Hyper { d: 8, n: 6, heads: 2, blocks, ..Hyper::default() };
        let model = Model::new(h, 2, 12, blocks as u64).unwrap();
        let slots: Vec<u32> = (0..6).map(|t| if t < 2 { 0 } else { 1 + rng.below(12) as u32 }).collect();
        let before = embed_sequence(&slots, &model.params).unwrap().checksum();
        let trace = ram::forward(&slots, &model.params, &model.hyper).unwrap();
        assert_eq!(trace.embedded.checksum(), before);
        assert_eq!(trace.states.len(), blocks + 1);
    }
}

#[test]
fn zeroed_blocks_are_identity() {
    for blocks in 1..=8 {
        let h = Hyper { d: 8, n: 6, heads: 2, blocks, ..Hyper::default() };
        let mut model = Model::new(h, 2, 12, 5).unwrap();
        model.params.zero_blocks();
        let slots = [0, 0, 4, 9, 1, 12];
        let e = embed_sequence(&slots, &model.params).unwrap();
        let trace = model.forward(&slots).unwrap();
        assert_eq!(trace.output(), e.row(5));
    }
}
