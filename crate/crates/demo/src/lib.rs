//! WebAssembly bindings for the static demo page. Every export takes plain
//! numbers or strings and returns a JSON document.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ramrec::bench::{analytic_ops, BlockKind};
use ramrec::datapipe::left_pad;
use ramrec::evalkit::{average_entropy, UserMaps};
use ramrec::model::{Hyper, Model, ModelKind, Trace};
use ramrec::numerics::{Matrix, OpCounter};

#[derive(Serialize)]
struct BlockMaps {
    block: usize,
    /// Head-averaged `n x n` self-attention weights.
    sa: Vec<Vec<f64>>,
    /// One `n`-long RAM weight row per head.
    ram: Vec<Vec<f64>>,
    sa_entropy: f64,
    ram_entropy: f64,
}

#[derive(Serialize)]
struct Comparison {
    slots: Vec<u32>,
    blocks: Vec<BlockMaps>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn parse_history(history: &str) -> Result<Vec<u32>, String> {
    history
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u32>().map_err(|_| format!("not an item id: {t:?}")))
        .collect()
}

fn model(kind: ModelKind, items: usize, n: usize, d: usize, heads: usize, blocks: usize, seed: u64) -> Result<Model, String> {
    let hyper = Hyper { kind, d, n, heads, blocks, ..Hyper::default() };
    Model::new(hyper, 4, items, seed).map_err(|e| e.to_string())
}

/// Attention of a randomly initialized comparator and RAM model over the
/// same window.
pub fn attention_comparison_json(history: &str, items: usize, n: usize, d: usize, heads: usize, blocks: usize, seed: u64) -> Result<String, String> {
    let hist = parse_history(history)?;
    if hist.is_empty() {
        return Err("history is empty".into());
    }
    if let Some(bad) = hist.iter().find(|&&i| i == 0 || i as usize > items) {
        return Err(format!("item {bad} outside 1..={items}"));
    }
    let slots = left_pad(&hist, n);
    let sa = model(ModelKind::Sa, items, n, d, heads, blocks, seed)?;
    let ram_model = model(ModelKind::Ram, items, n, d, heads, blocks, seed)?;
    let (Trace::Sa(st), Trace::Ram(rt)) = (
        sa.forward(&slots).map_err(|e| e.to_string())?,
        ram_model.forward(&slots).map_err(|e| e.to_string())?,
    ) else {
        return Err("unexpected trace kind".into());
    };
    let sa_maps = UserMaps::from_sa_trace(0, &st);
    let ram_maps = UserMaps::from_ram_trace(0, &rt);
    let sa_h = average_entropy(std::slice::from_ref(&sa_maps)).map_err(|e| e.to_string())?;
    let ram_h = average_entropy(std::slice::from_ref(&ram_maps)).map_err(|e| e.to_string())?;
    let blocks = (0..blocks)
        .map(|b| BlockMaps {
            block: b + 1,
            sa: rows(&sa_maps.blocks[b]),
            ram: rows(&ram_maps.blocks[b]),
            sa_entropy: sa_h[b],
            ram_entropy: ram_h[b],
        })
        .collect();
    Ok(serde_json::to_string(&Comparison { slots, blocks }).expect("plain data"))
}

#[derive(Serialize)]
struct CostPoint {
    n: u64,
    sa: u64,
    ram: u64,
    /// Multiplies plus residual additions counted during a real forward pass.
    sa_counted: Option<u64>,
    ram_counted: Option<u64>,
}

/// Closed-form block costs for `n = step, 2 step, ..., n_max`; points up to
/// `count_limit` also carry instrumented counts.
pub fn cost_curves_json(d: u64, n_max: u64, step: u64, count_limit: u64) -> Result<String, String> {
    if d == 0 || step == 0 || n_max < step {
        return Err("need d >= 1 and n_max >= step >= 1".into());
    }
    let counted = |kind: BlockKind, n: u64| -> Option<u64> {
        (n <= count_limit)
            .then(|| ramrec::bench::count_block(kind, n as usize, d as usize, 1).ok())
            .flatten()
            .map(|c: OpCounter| c.formula_comparable())
    };
    let points: Vec<CostPoint> = (1..=n_max / step)
        .map(|i| {
            let n = i * step;
            CostPoint {
                n,
                sa: analytic_ops(BlockKind::Sa, n, d),
                ram: analytic_ops(BlockKind::Ram, n, d),
                sa_counted: counted(BlockKind::Sa, n),
                ram_counted: counted(BlockKind::Ram, n),
            }
        })
        .collect();
    Ok(serde_json::to_string(&points).expect("plain data"))
}

#[derive(Serialize)]
struct Ranked {
    item: u32,
    score: f64,
    /// `u . v`, the part of the score contributed by the user embedding.
    user_term: f64,
}

#[derive(Serialize)]
struct TopK {
    with_user: Vec<Ranked>,
    without_user: Vec<Ranked>,
}

/// Top-`k` items of a randomly initialized RAM model for one of its four
/// users, with and without the user embedding.
pub fn top_k_json(history: &str, user: u32, items: usize, n: usize, d: usize, k: usize, seed: u64) -> Result<String, String> {
    let hist = parse_history(history)?;
    if let Some(bad) = hist.iter().find(|&&i| i == 0 || i as usize > items) {
        return Err(format!("item {bad} outside 1..={items}"));
    }
    if user >= 4 {
        return Err("user must be 0..3".into());
    }
    let m = model(ModelKind::Ram, items, n, d, 2.min(d), 2, seed)?;
    let mu = m.without_user_embedding();
    let slots = left_pad(&hist, n);
    let trace = m.forward(&slots).map_err(|e| e.to_string())?;
    let h = trace.output();
    let u = m.params.users.as_ref().expect("ram model").row(user as usize).to_vec();
    let rank = |scores: Vec<f64>| -> Vec<Ranked> {
        let mut ids: Vec<usize> = (0..scores.len()).collect();
        ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        ids.into_iter()
            .take(k)
            .map(|i| Ranked {
                item: i as u32 + 1,
                score: scores[i],
                user_term: ramrec::numerics::dot(&u, m.params.items.row(i + 1)),
            })
            .collect()
    };
    let with_user = rank(m.score_all(h, user).map_err(|e| e.to_string())?);
    let without_user = rank(mu.score_all(h, user).map_err(|e| e.to_string())?);
    Ok(serde_json::to_string(&TopK { with_user, without_user }).expect("plain data"))
}

#[wasm_bindgen]
pub fn attention_comparison(history: &str, items: usize, n: usize, d: usize, heads: usize, blocks: usize, seed: u32) -> Result<String, JsValue> {
    attention_comparison_json(history, items, n, d, heads, blocks, seed as u64).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn cost_curves(d: u32, n_max: u32, step: u32) -> Result<String, JsValue> {
    cost_curves_json(d as u64, n_max as u64, step as u64, 128).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn top_k(history: &str, user: u32, items: usize, n: usize, d: usize, k: usize, seed: u32) -> Result<String, JsValue> {
    top_k_json(history, user, items, n, d, k, seed as u64).map_err(|e| JsValue::from_str(&e))
}
