//! Pairwise binary cross-entropy training with one sampled negative per
//! example per epoch, Adam updates, validation-driven early stopping and
//! grid sweeps.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::{leave_one_out, Dataset, FixedWindow, SplitBundle};
use crate::evalkit::{evaluate, EvalOptions, EvalReport};
use crate::model::checkpoint::{Checkpoint, CheckpointMeta};
use crate::model::{Hyper, Model, ModelParams};
use crate::numerics::{sigmoid, softplus, AdamState, Matrix, Rng, RNG_ALGORITHM};
use crate::{Error, Result};

pub const INIT_SCHEME: &str = "uniform(-1/sqrt(d), 1/sqrt(d)) for embeddings and projections; zero biases; zero padding row";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Examples per Adam step; 1 is plain per-example updating.
    pub batch_size: usize,
    pub seed: u64,
    /// Evaluations without improvement tolerated before stopping.
    pub patience: usize,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 100, learning_rate: 1e-3, batch_size: 1, seed: 42, patience: 10, eval_every: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_owned());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_owned());
        }
        if self.eval_every == 0 {
            problems.push("eval_every must be at least 1".to_owned());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push(format!("lr must be a non-negative number (got {})", self.learning_rate));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_recall10: Option<f64>,
    /// Wall-clock time; kept out of the serialized log so that log files
    /// are reproducible byte for byte.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain struct") + "\n")
            .collect()
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let epochs = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(e.to_string())))
            .collect::<Result<_>>()?;
        Ok(Self { epochs })
    }

    /// The log with wall-clock times zeroed: the part fixed by seed, data
    /// and configuration.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        out.epochs.iter_mut().for_each(|e| e.seconds = 0.0);
        out
    }
}

/// `-ln sigmoid(pos) - ln(1 - sigmoid(neg))` in softplus form.
pub fn bce_pair_loss(pos: f64, neg: f64) -> f64 {
    softplus(-pos) + softplus(neg)
}

/// Derivatives of [`bce_pair_loss`] with respect to both scores.
pub fn bce_pair_gradient(pos: f64, neg: f64) -> (f64, f64) {
    (sigmoid(pos) - 1.0, sigmoid(neg))
}

/// Uniform item in `1..=num_items` outside the sorted `seen` list.
pub fn sample_negative(seen: &[u32], num_items: usize, rng: &mut Rng) -> Result<u32> {
    if seen.len() >= num_items {
        return Err(Error::Degenerate("user has interacted with every item".into()));
    }
    loop {
        let item = 1 + rng.below(num_items) as u32;
        if seen.binary_search(&item).is_err() {
            return Ok(item);
        }
    }
}

/// Training windows, held-out pairs and every user's full item set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub bundle: SplitBundle,
    /// Sorted, deduplicated full sequence of each user.
    pub seen: Vec<Vec<u32>>,
    pub num_users: usize,
    pub num_items: usize,
}

impl TrainData {
    pub fn from_dataset(ds: &Dataset, n: usize) -> Result<Self> {
        let bundle = SplitBundle::build(&leave_one_out(ds), n)?;
        let seen = ds
            .sequences
            .iter()
            .map(|s| {
                let mut v = s.clone();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        Ok(Self { bundle, seen, num_users: ds.num_users(), num_items: ds.num_items() })
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Seeded example order of an epoch.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    Rng::stream(epoch_seed(seed, epoch), u64::MAX).shuffle(&mut order);
    order
}

/// Random stream for example `index` in `epoch`: first the negative draw,
/// then any dropout masks.
pub fn example_rng(seed: u64, epoch: usize, index: usize) -> Rng {
    Rng::stream(epoch_seed(seed, epoch), index as u64)
}

/// Loss of one example against `negative`, with its gradient added to
/// `grads`.
pub fn accumulate_example(
    model: &Model,
    window: &FixedWindow,
    negative: u32,
    dropout_rng: Option<&mut Rng>,
    grads: &mut ModelParams,
) -> Result<f64> {
    let trace = model.forward_with(&window.slots, dropout_rng, &mut Default::default())?;
    let h = trace.output();
    let pos = model.score(h, window.user, window.target)?;
    let neg = model.score(h, window.user, negative)?;
    let loss = bce_pair_loss(pos, neg);
    let (d_pos, d_neg) = bce_pair_gradient(pos, neg);
    let d_h = model.score_backward(h, window.user, &[(window.target, d_pos), (negative, d_neg)], grads)?;
    model.backward(&trace, &d_h, grads)?;
    Ok(loss)
}

fn example_loss(model: &Model, window: &FixedWindow, negative: u32, rng: Option<&mut Rng>) -> Result<f64> {
    let trace = model.forward_with(&window.slots, rng, &mut Default::default())?;
    let h = trace.output();
    Ok(bce_pair_loss(model.score(h, window.user, window.target)?, model.score(h, window.user, negative)?))
}

fn nan_report(model: &Model, config: &TrainConfig, epoch: usize) -> Error {
    Error::Numerical(format!(
        "non-finite loss in epoch {}: lr={}, d={}, largest |param|={:.3e}, init: {INIT_SCHEME}",
        epoch + 1,
        config.learning_rate,
        model.hyper.d,
        model.params.max_abs()
    ))
}

fn dropout_rng<'a>(model: &Model, rng: &'a mut Rng) -> Option<&'a mut Rng> {
    (model.hyper.dropout > 0.0).then_some(rng)
}

/// One pass over the training windows in a seeded order. Returns the mean
/// pair loss.
pub fn train_epoch(
    model: &mut Model,
    adam: &mut AdamState,
    data: &TrainData,
    config: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let examples = &data.bundle.train;
    if examples.is_empty() {
        return Err(Error::Degenerate("no training examples".into()));
    }
    adam.learning_rate = config.learning_rate;
    let order = epoch_order(examples.len(), config.seed, epoch);
    let frozen = model.params.frozen_rows();
    let mut total = 0.0;
    for batch in order.chunks(config.batch_size) {
        let (loss, mut grads) = if batch.len() == 1 {
            let idx = batch[0];
            let w = &examples[idx];
            let mut rng = example_rng(config.seed, epoch, idx);
            let neg = sample_negative(&data.seen[w.user as usize], data.num_items, &mut rng)?;
            let mut grads = model.params.zeros_like();
            let loss = accumulate_example(model, w, neg, dropout_rng(model, &mut rng), &mut grads)?;
            (loss, grads)
        } else {
            let m: &Model = model;
            let parts: Vec<(f64, ModelParams)> = batch
                .par_iter()
                .map(|&idx| {
                    let w = &examples[idx];
                    let mut rng = example_rng(config.seed, epoch, idx);
                    let neg = sample_negative(&data.seen[w.user as usize], data.num_items, &mut rng)?;
                    let mut grads = m.params.zeros_like();
                    let loss = accumulate_example(m, w, neg, dropout_rng(m, &mut rng), &mut grads)?;
                    Ok((loss, grads))
                })
                .collect::<Result<_>>()?;
            let mut iter = parts.into_iter();
            let (mut loss, mut grads) = iter.next().expect("nonempty batch");
            for (l, g) in iter {
                loss += l;
                grads.add_scaled(&g, 1.0)?;
            }
            for t in grads.tensors_mut() {
                t.scale(1.0 / batch.len() as f64);
            }
            (loss, grads)
        };
        if !loss.is_finite() {
            return Err(nan_report(model, config, epoch));
        }
        total += loss;
        let g: Vec<&Matrix> = grads.tensors_mut().into_iter().map(|t| &*t).collect();
        adam.step(&mut model.params.tensors_mut(), &g, &frozen)?;
    }
    if !model.params.is_finite() {
        return Err(nan_report(model, config, epoch));
    }
    Ok(total / examples.len() as f64)
}

/// Mean pair loss of an epoch's examples and negatives without updating.
pub fn epoch_loss(model: &Model, data: &TrainData, config: &TrainConfig, epoch: usize) -> Result<f64> {
    let examples = &data.bundle.train;
    let order = epoch_order(examples.len(), config.seed, epoch);
    let mut total = 0.0;
    for idx in order {
        let w = &examples[idx];
        let mut rng = example_rng(config.seed, epoch, idx);
        let neg = sample_negative(&data.seen[w.user as usize], data.num_items, &mut rng)?;
        total += example_loss(model, w, neg, dropout_rng(model, &mut rng))?;
    }
    Ok(total / examples.len() as f64)
}

/// Validation Recall@10 over every user.
pub fn validation_recall10(model: &Model, data: &TrainData) -> Result<f64> {
    let rep = evaluate(model, &data.bundle.validation, &[10], EvalOptions::default())?;
    Ok(rep.recall(10).expect("cutoff requested"))
}

pub fn evaluate_split(model: &Model, pairs: &[FixedWindow], cutoffs: &[usize]) -> Result<EvalReport> {
    evaluate(model, pairs, cutoffs, EvalOptions::default())
}

/// Mid-training state; enough to continue a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub best: Option<Checkpoint>,
    pub evals_since_best: usize,
    pub log: TrainLog,
    pub stopped: bool,
}

impl TrainState {
    pub fn new(model: Model, config: &TrainConfig) -> Self {
        Self {
            model,
            adam: AdamState::new(config.learning_rate),
            epochs_done: 0,
            best: None,
            evals_since_best: 0,
            log: TrainLog::default(),
            stopped: false,
        }
    }

    fn meta(&self, role: &str, config: &TrainConfig, recall: Option<f64>) -> CheckpointMeta {
        CheckpointMeta {
            epoch: self.epochs_done,
            val_recall10: recall,
            role: role.to_owned(),
            seed: config.seed,
            init_scheme: INIT_SCHEME.to_owned(),
            rng_algorithm: RNG_ALGORITHM.to_owned(),
            evals_since_best: self.evals_since_best,
            best_val_recall10: self.best.as_ref().and_then(|b| b.meta.val_recall10),
            stopped: self.stopped,
        }
    }

    /// The current parameters with optimizer state, for resuming.
    pub fn last_checkpoint(&self, config: &TrainConfig) -> Checkpoint {
        let recall = self.log.epochs.last().and_then(|e| e.val_recall10);
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.adam.clone()),
            meta: self.meta("last", config, recall),
        }
    }

    /// Rebuilds a state from a `last` checkpoint, its best companion and the
    /// log written so far.
    pub fn resume(last: Checkpoint, best: Option<Checkpoint>, log: TrainLog) -> Result<Self> {
        let adam = last
            .optimizer
            .clone()
            .ok_or_else(|| Error::Contract("checkpoint carries no optimizer state".into()))?;
        if log.epochs.len() != last.meta.epoch {
            return Err(Error::Contract(format!(
                "log has {} epochs but checkpoint was taken after {}",
                log.epochs.len(),
                last.meta.epoch
            )));
        }
        Ok(Self {
            model: last.model,
            adam,
            epochs_done: last.meta.epoch,
            best,
            evals_since_best: last.meta.evals_since_best,
            log,
            stopped: last.meta.stopped,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: TrainLog,
}

/// Trains until `config.epochs` or until validation Recall@10 fails to
/// improve for more than `patience` consecutive evaluations. The hook runs
/// after every epoch with the updated state.
pub fn fit_with<F>(mut state: TrainState, data: &TrainData, config: &TrainConfig, mut hook: F) -> Result<FitOutcome>
where
    F: FnMut(&TrainState) -> Result<()>,
{
    config.validate()?;
    while !state.stopped && state.epochs_done < config.epochs {
        let epoch = state.epochs_done;
        let start = Instant::now();
        let loss = train_epoch(&mut state.model, &mut state.adam, data, config, epoch)?;
        state.epochs_done += 1;
        let mut val = None;
        if state.epochs_done.is_multiple_of(config.eval_every) {
            let recall = validation_recall10(&state.model, data)?;
            val = Some(recall);
            let improved = state
                .best
                .as_ref()
                .and_then(|b| b.meta.val_recall10)
                .is_none_or(|best| recall > best);
            if improved {
                state.evals_since_best = 0;
                let meta = state.meta("best", config, Some(recall));
                state.best = Some(Checkpoint { model: state.model.clone(), optimizer: None, meta });
            } else {
                state.evals_since_best += 1;
                if state.evals_since_best > config.patience {
                    state.stopped = true;
                }
            }
        }
        state.log.epochs.push(EpochLog {
            epoch: state.epochs_done,
            loss,
            val_recall10: val,
            seconds: start.elapsed().as_secs_f64(),
        });
        hook(&state)?;
    }
    let last = state.last_checkpoint(config);
    let best = match state.best.clone() {
        Some(b) => b,
        None => {
            let mut b = last.clone();
            b.optimizer = None;
            b.meta.role = "best".to_owned();
            b
        }
    };
    Ok(FitOutcome { best, last, log: state.log })
}

pub fn fit(model: Model, data: &TrainData, config: &TrainConfig) -> Result<FitOutcome> {
    let state = TrainState::new(model, config);
    fit_with(state, data, config, |_| Ok(()))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub d: Vec<usize>,
    pub n: Vec<usize>,
    pub heads: Vec<usize>,
    pub blocks: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub d: usize,
    pub n: usize,
    pub heads: usize,
    pub blocks: usize,
    pub val_recall10: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    /// Sorted by validation Recall@10, best first.
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<String>,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d,n,n_h,n_b,val_recall10,best_epoch,epochs_run\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.d, r.n, r.heads, r.blocks, r.val_recall10, r.best_epoch, r.epochs_run
            ));
        }
        out
    }
}

/// One [`fit`] per grid cell; cells that fail validation are skipped and
/// listed.
pub fn sweep(grid: &SweepGrid, base: &Hyper, ds: &Dataset, config: &TrainConfig) -> Result<SweepResult> {
    if [&grid.d, &grid.n, &grid.heads, &grid.blocks].iter().any(|v| v.is_empty()) {
        return Err(Error::Config("every sweep axis needs at least one value".into()));
    }
    let mut result = SweepResult::default();
    for &n in &grid.n {
        let data = match TrainData::from_dataset(ds, n) {
            Ok(d) => d,
            Err(e) => {
                result.skipped.push(format!("n={n}: {e}"));
                continue;
            }
        };
        for &d in &grid.d {
            for &heads in &grid.heads {
                for &blocks in &grid.blocks {
                    let hyper = Hyper { d, n, heads, blocks, ..*base };
                    let cell = format!("d={d} n={n} n_h={heads} n_b={blocks}");
                    let model = match Model::new(hyper, data.num_users, data.num_items, config.seed) {
                        Ok(m) => m,
                        Err(e) => {
                            result.skipped.push(format!("{cell}: {e}"));
                            continue;
                        }
                    };
                    let outcome = fit(model, &data, config)?;
                    result.rows.push(SweepRow {
                        d,
                        n,
                        heads,
                        blocks,
                        val_recall10: outcome.best.meta.val_recall10.unwrap_or(f64::NAN),
                        best_epoch: outcome.best.meta.epoch,
                        epochs_run: outcome.log.epochs.len(),
                    });
                }
            }
        }
    }
    result.rows.sort_by(|a, b| b.val_recall10.total_cmp(&a.val_recall10));
    Ok(result)
}
