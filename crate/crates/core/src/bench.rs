//! Closed-form block cost formulas, instrumented single-block timing and
//! log-log scaling fits.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::model::{ram, sa, BlockParams, Hyper, ModelKind};
use crate::numerics::{OpCounter, Rng};
use crate::{Error, Result};

pub const WARMUP_RUNS: usize = 3;
pub const MIN_REPETITIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Sa,
    Ram,
}

impl BlockKind {
    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Sa => "sa",
            BlockKind::Ram => "ram",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "sa" => Ok(BlockKind::Sa),
            "ram" => Ok(BlockKind::Ram),
            other => Err(Error::Config(format!("unknown block kind {other:?} (expected sa or ram)"))),
        }
    }
}

/// `6nd^2 + 2n^2 d + 2nd` for self-attention, `2nd^2 + 4d^2 + 2nd + 2d`
/// for a RAM block.
pub fn analytic_ops(kind: BlockKind, n: u64, d: u64) -> u64 {
    match kind {
        BlockKind::Sa => 6 * n * d * d + 2 * n * n * d + 2 * n * d,
        BlockKind::Ram => 2 * n * d * d + 4 * d * d + 2 * n * d + 2 * d,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub kind: BlockKind,
    pub n: usize,
    pub d: usize,
    pub n_h: usize,
    pub analytic_ops: u64,
    /// Every scalar multiply of one forward pass.
    pub measured_muls: u64,
    pub median_ns: u64,
    pub reps: usize,
    /// Multiplies in the main path plus residual additions.
    pub formula_ops: u64,
}

pub const CSV_HEADER: &str = "kind,n,d,n_h,analytic_ops,measured_muls,median_ns,reps,formula_ops";

fn block_hyper(kind: BlockKind, n: usize, d: usize, n_h: usize) -> Hyper {
    Hyper {
        kind: match kind {
            BlockKind::Sa => ModelKind::Sa,
            BlockKind::Ram => ModelKind::Ram,
        },
        d,
        n,
        heads: n_h,
        blocks: 1,
        ..Hyper::default()
    }
}

/// Runs one forward pass of a single block on prepared random inputs.
struct Prepared {
    hyper: Hyper,
    block: BlockParams,
    input: crate::numerics::Matrix,
    h_prev: Vec<f64>,
    valid: Vec<bool>,
}

impl Prepared {
    fn new(kind: BlockKind, n: usize, d: usize, n_h: usize, rng: &mut Rng) -> Result<Self> {
        let hyper = block_hyper(kind, n, d, n_h);
        if n == 0 || d == 0 || n_h == 0 || !d.is_multiple_of(n_h) {
            return Err(Error::Config(format!("need n, d >= 1 and d mod n_h = 0 (n={n}, d={d}, n_h={n_h})")));
        }
        let block = BlockParams::random(d, rng);
        let input = rng.uniform_matrix(n, d, 1.0);
        let h_prev = input.row(n - 1).to_vec();
        Ok(Self { hyper, block, input, h_prev, valid: vec![true; n] })
    }

    fn run(&self, ops: &mut OpCounter) -> Result<f64> {
        Ok(match self.hyper.kind {
            ModelKind::Sa => {
                let (out, _) = sa::block_forward(&self.input, &self.block, &self.valid, &self.hyper, None, ops)?;
                out.get(0, 0)
            }
            _ => {
                let (h, _) =
                    ram::block_forward(&self.h_prev, &self.input, &self.block, &self.valid, &self.hyper, None, ops)?;
                h[0]
            }
        })
    }
}

/// Multiply counts of one forward pass; a pure function of the shape.
pub fn count_block(kind: BlockKind, n: usize, d: usize, n_h: usize) -> Result<OpCounter> {
    let prepared = Prepared::new(kind, n, d, n_h, &mut Rng::new(0))?;
    let mut ops = OpCounter::enabled();
    prepared.run(&mut ops)?;
    Ok(ops)
}

fn median(mut xs: Vec<u64>) -> u64 {
    xs.sort_unstable();
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2
    }
}

/// Times `reps` forward passes of one block on the calling thread after
/// [`WARMUP_RUNS`] untimed passes.
pub fn measure_block(kind: BlockKind, n: usize, d: usize, n_h: usize, reps: usize, rng: &mut Rng) -> Result<BenchRecord> {
    if reps < MIN_REPETITIONS {
        return Err(Error::Contract(format!("at least {MIN_REPETITIONS} repetitions required (got {reps})")));
    }
    let prepared = Prepared::new(kind, n, d, n_h, rng)?;
    let mut ops = OpCounter::enabled();
    prepared.run(&mut ops)?;
    let mut sink = 0.0;
    for _ in 0..WARMUP_RUNS {
        sink += prepared.run(&mut OpCounter::disabled())?;
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        sink += prepared.run(&mut OpCounter::disabled())?;
        times.push((start.elapsed().as_nanos() as u64).max(1));
    }
    std::hint::black_box(sink);
    Ok(BenchRecord {
        kind,
        n,
        d,
        n_h,
        analytic_ops: analytic_ops(kind, n as u64, d as u64),
        measured_muls: ops.true_muls(),
        median_ns: median(times),
        reps,
        formula_ops: ops.formula_comparable(),
    })
}

pub fn write_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.kind.name(),
            r.n,
            r.d,
            r.n_h,
            r.analytic_ops,
            r.measured_muls,
            r.median_ns,
            r.reps,
            r.formula_ops
        ));
    }
    out
}

pub fn read_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Format(format!("bench CSV must start with {CSV_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("line {}: {what}", i + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad(&format!("bad number {s:?}")));
        out.push(BenchRecord {
            kind: BlockKind::parse(f[0]).map_err(|_| bad("bad kind"))?,
            n: num(f[1])? as usize,
            d: num(f[2])? as usize,
            n_h: num(f[3])? as usize,
            analytic_ops: num(f[4])?,
            measured_muls: num(f[5])?,
            median_ns: num(f[6])?,
            reps: num(f[7])? as usize,
            formula_ops: num(f[8])?,
        });
    }
    Ok(out)
}

/// Least-squares slope of `ln y` against `ln x`. Needs at least four
/// points spanning a factor of four in `x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 4 {
        return Err(Error::Contract(format!("scaling fit needs at least 4 points (got {})", points.len())));
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    if !(lo > 0.0 && hi >= 4.0 * lo) {
        return Err(Error::Contract(format!("sweep must span a 4x range (got {lo}..{hi})")));
    }
    if points.iter().any(|p| p.1.is_nan() || p.1 <= 0.0) {
        return Err(Error::Contract("timings must be positive".into()));
    }
    let m = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Time exponent in `n` for each block kind present in `records`.
pub fn scaling_fit(records: &[BenchRecord]) -> Result<Vec<(BlockKind, f64)>> {
    let mut out = Vec::new();
    for kind in [BlockKind::Sa, BlockKind::Ram] {
        let pts: Vec<(f64, f64)> =
            records.iter().filter(|r| r.kind == kind).map(|r| (r.n as f64, r.median_ns as f64)).collect();
        if !pts.is_empty() {
            out.push((kind, log_log_slope(&pts)?));
        }
    }
    if out.is_empty() {
        return Err(Error::Contract("no records to fit".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_spot_values() {
        assert_eq!(analytic_ops(BlockKind::Sa, 1, 1), 10);
        assert_eq!(analytic_ops(BlockKind::Ram, 1, 1), 10);
        assert_eq!(analytic_ops(BlockKind::Sa, 50, 64), 1_555_200);
        assert_eq!(analytic_ops(BlockKind::Ram, 50, 64), 432_512);
    }

    #[test]
    fn ram_cheaper_than_sa_on_grid() {
        for n in 2..40 {
            for d in 2..40 {
                assert!(analytic_ops(BlockKind::Ram, n, d) < analytic_ops(BlockKind::Sa, n, d));
            }
        }
    }

    #[test]
    fn instrumented_counts_match_formulas() {
        for &(n, d, h) in &[(1, 1, 1), (5, 4, 2), (50, 64, 2), (17, 12, 3), (64, 8, 8)] {
            for kind in [BlockKind::Sa, BlockKind::Ram] {
                let ops = count_block(kind, n, d, h).unwrap();
                assert_eq!(ops.formula_comparable(), analytic_ops(kind, n as u64, d as u64), "{kind:?} n={n} d={d}");
            }
        }
    }

    #[test]
    fn count_growth_in_n() {
        for n in [64, 128, 256] {
            let r = count_block(BlockKind::Ram, 2 * n, 64, 2).unwrap().true_muls() as f64
                / count_block(BlockKind::Ram, n, 64, 2).unwrap().true_muls() as f64;
            assert!((1.9..=2.1).contains(&r), "ram ratio {r}");
            let s = count_block(BlockKind::Sa, 2 * n, 64, 2).unwrap().true_muls() as f64
                / count_block(BlockKind::Sa, n, 64, 2).unwrap().true_muls() as f64;
            assert!(s > 2.0 && s < 4.0, "sa ratio {s}");
            if 2 * n * n * 64 > 6 * n * 64 * 64 {
                assert!(s > 3.0);
            }
        }
    }

    #[test]
    fn measure_is_count_deterministic() {
        let a = measure_block(BlockKind::Sa, 8, 4, 2, 5, &mut Rng::new(1)).unwrap();
        let b = measure_block(BlockKind::Sa, 8, 4, 2, 5, &mut Rng::new(1)).unwrap();
        assert_eq!(a.measured_muls, b.measured_muls);
        assert!(a.median_ns > 0);
        assert!(measure_block(BlockKind::Ram, 8, 4, 2, 4, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn fit_synthetic_exponents() {
        let lin: Vec<(f64, f64)> = [64.0, 128.0, 256.0, 512.0].iter().map(|&n| (n, 3.0 * n)).collect();
        let quad: Vec<(f64, f64)> = [64.0, 128.0, 256.0, 512.0].iter().map(|&n| (n, 0.5 * n * n)).collect();
        assert!((log_log_slope(&lin).unwrap() - 1.0).abs() < 0.01);
        assert!((log_log_slope(&quad).unwrap() - 2.0).abs() < 0.01);
        assert!(log_log_slope(&lin[..3]).is_err());
        let narrow: Vec<(f64, f64)> = [64.0, 80.0, 100.0, 120.0].iter().map(|&n| (n, n)).collect();
        assert!(log_log_slope(&narrow).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            measure_block(BlockKind::Ram, 6, 4, 2, 5, &mut Rng::new(2)).unwrap(),
            measure_block(BlockKind::Sa, 6, 4, 1, 5, &mut Rng::new(2)).unwrap(),
        ];
        let text = write_csv(&recs);
        assert_eq!(read_csv(&text).unwrap(), recs);
        assert!(read_csv("nope\n").is_err());
    }
}
