use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ramrec::bench::{measure_block, scaling_fit, write_csv, BlockKind};
use ramrec::config::RunConfig;
use ramrec::datapipe::canonical::{load_dir, save_dir, ID_MAP_FILE, INTERACTIONS_FILE};
use ramrec::datapipe::{apply_policy, parse_log, Dataset, DatasetStats, FixedWindow, LogFormat};
use ramrec::evalkit::trace_io::TraceFile;
use ramrec::evalkit::{
    block_similarity, block_states, entropy_report, evaluate, user_similarity_histogram, EvalOptions, UserMaps,
    DEFAULT_BIN_WIDTH,
};
use ramrec::model::checkpoint::Checkpoint;
use ramrec::model::{Model, ModelKind, Trace};
use ramrec::numerics::Rng;
use ramrec::trainer::{fit_with, sweep, SweepGrid, TrainLog, TrainState, TrainData};
use ramrec::Error;

use crate::manifest::{checksum_files, ManifestWriter};
use crate::{AnalysisKind, Common, Split};

pub const BEST_FILE: &str = "best.ckpt";
pub const LAST_FILE: &str = "last.ckpt";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Thread pool, configuration file, `--set` overrides and `--seed`.
fn setup(common: &Common) -> Result<RunConfig> {
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().ok();
    }
    let text = match &common.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
        None => String::new(),
    };
    let mut pairs = Vec::new();
    let mut problems = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => pairs.push((k.trim().to_owned(), v.trim().to_owned())),
            None => problems.push(format!("config line {}: expected key = value", i + 1)),
        }
    }
    let mut seen = BTreeSet::new();
    for (k, _) in &pairs {
        if !seen.insert(k.clone()) {
            problems.push(format!("duplicate key {k:?}"));
        }
    }
    for o in &common.overrides {
        match o.split_once('=') {
            Some((k, v)) => pairs.push((k.trim().to_owned(), v.trim().to_owned())),
            None => problems.push(format!("--set {o:?}: expected KEY=VALUE")),
        }
    }
    if let Some(seed) = common.seed {
        pairs.push(("seed".to_owned(), seed.to_string()));
    }
    Ok(RunConfig::from_pairs(&pairs, problems)?)
}

fn data_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| cfg.data.clone())
        .ok_or_else(|| Error::Config("no dataset: pass --data or set the data key".into()).into())
}

fn load_dataset(dir: &Path) -> Result<(Dataset, String)> {
    let ds = load_dir(dir).with_context(|| format!("loading dataset from {}", dir.display()))?;
    let sum = checksum_files(&[dir.join(INTERACTIONS_FILE), dir.join(ID_MAP_FILE)])?;
    Ok((ds, sum))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn stats_line(s: &DatasetStats) -> String {
    format!(
        "users {}  items {}  interactions {}  intrns/u {:.1}  intrns/i {:.1}",
        s.users, s.items, s.interactions, s.interactions_per_user, s.interactions_per_item
    )
}

#[derive(Serialize)]
struct PrepareStats {
    raw: DatasetStats,
    malformed_lines: usize,
    filtered: DatasetStats,
}

pub fn prepare(common: &Common, input: &Path, format: &str) -> Result<()> {
    let cfg = setup(common)?;
    let format = LogFormat::parse(format)?;
    let sum = checksum_files(&[input.to_path_buf()])?;
    let mf = ManifestWriter::begin(&common.out, "prepare", Some(cfg.to_text()), Some(sum))?;
    let file = fs::File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let parsed = parse_log(BufReader::new(file), format)?;
    if parsed.malformed > 0 {
        let shown: Vec<String> = parsed.malformed_lines.iter().take(10).map(ToString::to_string).collect();
        eprintln!("skipped {} malformed lines (first: {})", parsed.malformed, shown.join(", "));
    }
    let users: BTreeSet<&str> = parsed.interactions.iter().map(|i| i.user.as_str()).collect();
    let items: BTreeSet<&str> = parsed.interactions.iter().map(|i| i.item.as_str()).collect();
    let total = parsed.interactions.len();
    let per = |n: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    let raw = DatasetStats {
        users: users.len(),
        items: items.len(),
        interactions: total,
        interactions_per_user: per(users.len()),
        interactions_per_item: per(items.len()),
    };
    let ds = apply_policy(&parsed.interactions, &cfg.policy)?;
    save_dir(&ds, &common.out)?;
    let filtered = ds.stats();
    write_json(&common.out.join("stats.json"), &PrepareStats { raw, malformed_lines: parsed.malformed, filtered })?;
    println!("raw       {}", stats_line(&raw));
    println!("prepared  {}", stats_line(&filtered));
    mf.finish()
}

fn parse_grid(grid: &[String], cfg: &RunConfig) -> Result<SweepGrid> {
    let h = &cfg.hyper;
    let mut g = SweepGrid { d: vec![h.d], n: vec![h.n], heads: vec![h.heads], blocks: vec![h.blocks] };
    let mut problems = Vec::new();
    for axis in grid {
        let Some((k, vs)) = axis.split_once('=') else {
            problems.push(format!("--grid {axis:?}: expected KEY=V1,V2"));
            continue;
        };
        let values: std::result::Result<Vec<usize>, _> = vs.split(',').map(|v| v.trim().parse()).collect();
        let Ok(values) = values else {
            problems.push(format!("--grid {axis:?}: values must be positive integers"));
            continue;
        };
        match k.trim() {
            "d" => g.d = values,
            "n" => g.n = values,
            "n_h" => g.heads = values,
            "n_b" => g.blocks = values,
            other => problems.push(format!("--grid: unknown axis {other:?} (expected d, n, n_h or n_b)")),
        }
    }
    if problems.is_empty() {
        Ok(g)
    } else {
        Err(Error::Config(problems.join("\n")).into())
    }
}

pub fn train(common: &Common, data: Option<PathBuf>, resume: bool, grid: &[String]) -> Result<()> {
    let cfg = setup(common)?;
    let dir = data_dir(&cfg, data)?;
    let (ds, sum) = load_dataset(&dir)?;
    let out = &common.out;
    if !grid.is_empty() {
        let g = parse_grid(grid, &cfg)?;
        let mf = ManifestWriter::begin(out, "train --grid", Some(cfg.to_text()), Some(sum))?;
        let result = sweep(&g, &cfg.hyper, &ds, &cfg.train)?;
        fs::write(out.join("sweep.csv"), result.to_csv())?;
        write_json(&out.join("sweep.json"), &result)?;
        print!("{}", result.to_csv());
        for s in &result.skipped {
            eprintln!("skipped {s}");
        }
        return mf.finish();
    }
    let td = TrainData::from_dataset(&ds, cfg.hyper.n)?;
    let state = if resume {
        let last = Checkpoint::load(&out.join(LAST_FILE)).context("resuming")?;
        if last.model.hyper != cfg.hyper || last.meta.seed != cfg.train.seed {
            return Err(Error::Config("checkpoint was trained with a different configuration".into()).into());
        }
        let best_path = out.join(BEST_FILE);
        let best = if best_path.exists() { Some(Checkpoint::load(&best_path)?) } else { None };
        let log = TrainLog::from_jsonl(&fs::read_to_string(out.join(LOG_FILE)).context("reading training log")?)?;
        TrainState::resume(last, best, log)?
    } else {
        TrainState::new(Model::new(cfg.hyper, td.num_users, td.num_items, cfg.train.seed)?, &cfg.train)
    };
    let mut mf = ManifestWriter::begin(out, "train", Some(cfg.to_text()), Some(sum))?;
    let mut saved_best = state.best.as_ref().map(|b| b.meta.epoch);
    let outcome = fit_with(state, &td, &cfg.train, |s| {
        let e = s.log.epochs.last().expect("hook runs after an epoch");
        eprintln!(
            "epoch {:>3}  loss {:.6}  val R@10 {}  {:.1}s",
            e.epoch,
            e.loss,
            e.val_recall10.map_or("-".to_owned(), |r| format!("{r:.4}")),
            e.seconds
        );
        mf.manifest.epoch_seconds.push(e.seconds);
        if let Some(best) = &s.best {
            if saved_best != Some(best.meta.epoch) {
                best.save(&out.join(BEST_FILE))?;
                saved_best = Some(best.meta.epoch);
            }
        }
        s.last_checkpoint(&cfg.train).save(&out.join(LAST_FILE))?;
        fs::write(out.join(LOG_FILE), s.log.to_jsonl())?;
        Ok(())
    })?;
    outcome.best.save(&out.join(BEST_FILE))?;
    outcome.last.save(&out.join(LAST_FILE))?;
    fs::write(out.join(LOG_FILE), outcome.log.to_jsonl())?;
    println!(
        "best epoch {}  val R@10 {}",
        outcome.best.meta.epoch,
        outcome.best.meta.val_recall10.map_or("-".to_owned(), |r| format!("{r:.4}"))
    );
    mf.finish()
}

fn load_for_analysis(cfg: &RunConfig, checkpoint: &Path, data: Option<PathBuf>) -> Result<(Checkpoint, Dataset, String)> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let (ds, sum) = load_dataset(&data_dir(cfg, data)?)?;
    if ckpt.model.num_items() != ds.num_items() {
        return Err(Error::Data(format!(
            "checkpoint scores {} items but the dataset has {}",
            ckpt.model.num_items(),
            ds.num_items()
        ))
        .into());
    }
    Ok((ckpt, ds, sum))
}

/// Items a user has interacted with before the held-out target, sorted.
fn history_before(ds: &Dataset, split: Split) -> Vec<Vec<u32>> {
    let keep = match split {
        Split::Val => 2,
        Split::Test => 1,
    };
    ds.sequences
        .iter()
        .map(|s| {
            let mut v = s[..s.len().saturating_sub(keep)].to_vec();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect()
}

pub fn eval(common: &Common, checkpoint: &Path, data: Option<PathBuf>, split: Split, cutoffs: &[usize], exclude_seen: bool) -> Result<()> {
    let cfg = setup(common)?;
    let (ckpt, ds, sum) = load_for_analysis(&cfg, checkpoint, data)?;
    let mf = ManifestWriter::begin(&common.out, "eval", Some(cfg.to_text()), Some(sum))?;
    let td = TrainData::from_dataset(&ds, ckpt.model.hyper.n)?;
    let pairs = match split {
        Split::Val => &td.bundle.validation,
        Split::Test => &td.bundle.test,
    };
    let history = exclude_seen.then(|| history_before(&ds, split));
    let report = evaluate(&ckpt.model, pairs, cutoffs, EvalOptions { exclude: history.as_deref() })?;
    report.check_bounds()?;
    let name = match split {
        Split::Val => "eval_val.json",
        Split::Test => "eval_test.json",
    };
    write_json(&common.out.join(name), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    mf.finish()
}

pub fn analyze(
    common: &Common,
    kind: AnalysisKind,
    checkpoint: &Path,
    data: Option<PathBuf>,
    users: Option<usize>,
    repeats: usize,
) -> Result<()> {
    let cfg = setup(common)?;
    let (ckpt, ds, sum) = load_for_analysis(&cfg, checkpoint, data)?;
    let model = &ckpt.model;
    let hyper = model.hyper;
    match (kind, hyper.kind) {
        (AnalysisKind::Entropy, ModelKind::Ram | ModelKind::RamU) => {
            return Err(Error::Config(
                "entropy analysis is defined on the self-attention comparator's n x n maps; a RAM checkpoint \
                 has one attention row per block and head, use --kind ram-beta-entropy instead"
                    .into(),
            )
            .into())
        }
        (AnalysisKind::RamBetaEntropy, ModelKind::Sa) => {
            return Err(Error::Config("ram-beta-entropy needs a RAM checkpoint; use --kind entropy".into()).into())
        }
        (AnalysisKind::Usersim, _) if !hyper.uses_user_embedding() => {
            return Err(Error::Config(format!("usersim needs user embeddings, which a {} model lacks", hyper.kind.name())).into())
        }
        _ => {}
    }
    let out = &common.out;
    let mf = ManifestWriter::begin(out, "analyze", Some(cfg.to_text()), Some(sum))?;
    let td = TrainData::from_dataset(&ds, hyper.n)?;
    let windows: Vec<FixedWindow> = td
        .bundle
        .test
        .iter()
        .filter(|w| w.slots.iter().any(|&s| s != 0))
        .take(users.unwrap_or(usize::MAX))
        .cloned()
        .collect();
    if windows.is_empty() {
        return Err(Error::Data("no users to analyze".into()).into());
    }
    let mut rng = Rng::new(cfg.train.seed);
    match kind {
        AnalysisKind::Entropy | AnalysisKind::RamBetaEntropy => {
            let sa = kind == AnalysisKind::Entropy;
            let mut traces = TraceFile::new(if sa { "sa-mean" } else { "ram-beta" }, hyper.n, hyper.blocks, hyper.heads);
            let mut maps = Vec::with_capacity(windows.len());
            for w in &windows {
                let m = match model.forward(&w.slots)? {
                    Trace::Sa(t) => UserMaps::from_sa_trace(w.user, &t),
                    Trace::Ram(t) => UserMaps::from_ram_trace(w.user, &t),
                };
                for (b, map) in m.blocks.iter().enumerate() {
                    traces.push_map(w.user, b, None, map, sa);
                }
                maps.push(m);
            }
            let source = if sa { "sa head-averaged maps" } else { "ram beta rows (extension)" };
            let report = entropy_report(&maps, &mut rng, repeats, source)?;
            let mut csv = String::from("block,learned,uniform_baseline\n");
            for b in &report.blocks {
                csv.push_str(&format!("{},{},{}\n", b.block + 1, b.learned, b.uniform_baseline));
            }
            let stem = if sa { "entropy" } else { "ram_beta_entropy" };
            fs::write(out.join(format!("{stem}.csv")), &csv)?;
            write_json(&out.join(format!("{stem}.json")), &report)?;
            traces.write(fs::File::create(out.join("attention_traces.csv"))?)?;
            print!("{csv}");
        }
        AnalysisKind::Blocksim => {
            let states = windows
                .iter()
                .map(|w| model.forward(&w.slots).map(|t| block_states(&t)))
                .collect::<ramrec::Result<Vec<_>>>()?;
            let sim = block_similarity(&states)?;
            let mut csv = String::from("from_block,to_block,mean_cosine,counted,skipped\n");
            for (m, mean) in sim.mean.iter().enumerate() {
                csv.push_str(&format!("{},{},{},{},{}\n", m, m + 1, mean, sim.counted[m], sim.skipped[m]));
            }
            fs::write(out.join("blocksim.csv"), &csv)?;
            write_json(&out.join("blocksim.json"), &sim)?;
            print!("{csv}");
        }
        AnalysisKind::Usersim => {
            let report = user_similarity_histogram(model, &windows, &mut rng, DEFAULT_BIN_WIDTH)?;
            fs::write(out.join("usersim.csv"), report.to_csv())?;
            write_json(&out.join("usersim.json"), &report)?;
            println!(
                "users {}  mean sim(h, own u) {:.4}  mean sim(h, other u) {:.4}",
                report.users, report.mean_own, report.mean_other
            );
        }
    }
    mf.finish()
}

#[derive(Serialize)]
struct Exponent {
    kind: BlockKind,
    d: usize,
    exponent: f64,
}

pub fn bench(common: &Common, kinds: &[String], ns: &[usize], ds: &[usize], heads: usize, reps: usize) -> Result<()> {
    let cfg = setup(common)?;
    let kinds = kinds.iter().map(|k| BlockKind::parse(k)).collect::<ramrec::Result<Vec<_>>>()?;
    if ns.is_empty() || ds.is_empty() {
        bail!(Error::Config("need at least one n and one d".into()));
    }
    let mf = ManifestWriter::begin(&common.out, "bench", Some(cfg.to_text()), None)?;
    let mut records = Vec::new();
    for &kind in &kinds {
        for &d in ds {
            for &n in ns {
                let r = measure_block(kind, n, d, heads, reps, &mut Rng::new(cfg.train.seed))?;
                eprintln!("{} n={n} d={d}: {} ns", kind.name(), r.median_ns);
                records.push(r);
            }
        }
    }
    let csv = write_csv(&records);
    fs::write(common.out.join("bench.csv"), &csv)?;
    print!("{csv}");
    let mut exponents = Vec::new();
    for &d in ds {
        let at_d: Vec<_> = records.iter().filter(|r| r.d == d).cloned().collect();
        match scaling_fit(&at_d) {
            Ok(fits) => exponents.extend(fits.into_iter().map(|(kind, exponent)| Exponent { kind, d, exponent })),
            Err(e) => eprintln!("no scaling fit at d={d}: {e}"),
        }
    }
    for e in &exponents {
        println!("# {} d={}: time ~ n^{:.2}", e.kind.name(), e.d, e.exponent);
    }
    write_json(&common.out.join("scaling.json"), &exponents)?;
    mf.finish()
}

