//! Teacher-forced training with Adam, gradient clipping, validation-based
//! model selection and checkpointing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use graphsum_numerics::{
    finite_difference_check, Adam, AdamConfig, GradCheckOptions, GradCheckReport, Graph, Gradients, ParamStore,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::corpus::Report;
use crate::error::{CoreError, Result};
use crate::inference::{evaluate, DecodeMode};
use crate::layers::Dropout;
use crate::model::{Model, Prepared};

/// One line of the training log. Contains no wall-clock data so that a
/// seeded run reproduces it byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean token NLL over the epoch's batches, as seen during training.
    pub train_loss: f64,
    /// Mean pre-clipping gradient norm over the epoch's batches.
    pub grad_norm: f64,
    pub valid_rouge1: Option<f64>,
    pub best: bool,
    pub config_hash: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("record serializes") + "\n")
            .collect()
    }
}

pub struct TrainOutcome {
    pub log: TrainLog,
    /// Per-epoch wall time in seconds, kept apart from the log.
    pub seconds: Vec<f64>,
    pub best_epoch: Option<usize>,
    /// Parameters of the best validation epoch (the last epoch without a
    /// validation set).
    pub best_params: ParamStore,
}

/// Where checkpoints and logs go. Nothing is written when `dir` is `None`.
#[derive(Clone, Debug, Default)]
pub struct Outputs {
    pub dir: Option<PathBuf>,
}

impl Outputs {
    fn path(&self, name: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(name))
    }
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

fn pool(threads: usize) -> Result<Option<rayon::ThreadPool>> {
    if threads <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map(Some)
        .map_err(|e| CoreError::Config(format!("thread pool: {e}")))
}

/// Gradients of the mean token NLL over `batch`, plus summed loss and
/// token count. Per-example gradients are summed in batch order, so the
/// result does not depend on the thread count.
pub fn batch_gradients(
    model: &Model,
    batch: &[(&Prepared, u64)],
    pool: Option<&rayon::ThreadPool>,
) -> Result<(Gradients, f64, usize)> {
    let one = |&(p, seed): &(&Prepared, u64)| model.example_gradients(p, &mut model.dropout(seed));
    let parts: Vec<(f64, usize, Gradients)> = match pool {
        Some(pool) => pool.install(|| batch.par_iter().map(one).collect::<Result<_>>())?,
        None => batch.iter().map(one).collect::<Result<_>>()?,
    };
    let mut grads = Gradients::zeros_like(&model.params);
    let (mut loss, mut tokens) = (0.0, 0);
    for (l, n, g) in &parts {
        grads.add(g);
        loss += l;
        tokens += n;
    }
    grads.scale(1.0 / tokens.max(1) as f64);
    Ok((grads, loss, tokens))
}

/// Train `model` in place. `on_epoch` sees the model after each epoch and
/// returns `false` to stop early.
pub fn train(
    model: &mut Model,
    train_set: &[Report],
    valid_set: &[Report],
    cfg: &TrainConfig,
    outputs: &Outputs,
    mut on_epoch: impl FnMut(&Model, &EpochRecord) -> bool,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(CoreError::Data("empty training set".into()));
    }
    if let Some(dir) = &outputs.dir {
        fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    }
    let prepared: Vec<Prepared> = train_set.iter().map(|r| model.prepare(r)).collect::<Result<_>>()?;
    let hash = model.config_hash();
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let workers = pool(cfg.threads)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    let mut seconds = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut best_params = model.params.clone();
    let mut order: Vec<usize> = (0..prepared.len()).collect();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut token_sum, mut norm_sum, mut batches) = (0.0, 0usize, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&Prepared, u64)> = chunk.iter().map(|&i| (&prepared[i], rng.gen())).collect();
            let (mut grads, loss, tokens) = batch_gradients(model, &batch, workers.as_ref())?;
            let norm = grads.clip_global_norm(cfg.clip_norm);
            if !norm.is_finite() {
                return Err(CoreError::Data(format!("non-finite gradient norm in epoch {epoch}")));
            }
            adam.step(&mut model.params, &grads);
            loss_sum += loss;
            token_sum += tokens;
            norm_sum += norm;
            batches += 1;
        }

        let valid_rouge1 = if valid_set.is_empty() {
            None
        } else {
            let (report, _) = evaluate(model, valid_set, cfg.max_decode_len, DecodeMode::Greedy, cfg.threads)?;
            Some(report.overall.rouge1)
        };
        let improved = match (valid_rouge1, best) {
            (None, _) => true,
            (Some(r), None) => {
                best = Some((r, epoch));
                true
            }
            (Some(r), Some((b, _))) if r > b => {
                best = Some((r, epoch));
                true
            }
            _ => false,
        };
        if improved {
            best_params = model.params.clone();
            if let Some(path) = outputs.path(BEST_CHECKPOINT) {
                model.to_checkpoint(Some(adam.clone())).save(&path).map_err(|e| with_path(e, &path))?;
            }
        }
        if let Some(path) = outputs.path(LAST_CHECKPOINT) {
            model.to_checkpoint(Some(adam.clone())).save(&path).map_err(|e| with_path(e, &path))?;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / token_sum.max(1) as f64,
            grad_norm: norm_sum / batches.max(1) as f64,
            valid_rouge1,
            best: improved,
            config_hash: hash.clone(),
        };
        seconds.push(start.elapsed().as_secs_f64());
        append(outputs.path(LOG_FILE), &serde_json::to_string(&record).expect("serializes"), epoch == 1)?;
        append(
            outputs.path(TIMING_FILE),
            &format!("{{\"epoch\":{epoch},\"seconds\":{:.3}}}", seconds[epoch - 1]),
            epoch == 1,
        )?;
        let keep_going = on_epoch(model, &record);
        log.epochs.push(record);
        if !keep_going {
            break;
        }
    }
    let best_epoch = match best {
        Some((_, e)) => Some(e),
        None => log.epochs.last().map(|e| e.epoch),
    };
    Ok(TrainOutcome {
        log,
        seconds,
        best_epoch,
        best_params,
    })
}

fn with_path(e: graphsum_numerics::NumericsError, path: &Path) -> CoreError {
    match e {
        graphsum_numerics::NumericsError::Io(source) => CoreError::io(path, source),
        other => other.into(),
    }
}

fn append(path: Option<PathBuf>, line: &str, truncate: bool) -> Result<()> {
    let Some(path) = path else {
        return Ok(());
    };
    let mut f = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!truncate)
        .truncate(truncate)
        .open(&path)
        .map_err(|e| CoreError::io(&path, e))?;
    writeln!(f, "{line}").map_err(|e| CoreError::io(&path, e))
}

/// Summed NLL of `examples` (no dropout) evaluated with `params`, which must
/// have the layout of `model.params`.
pub fn total_nll_with(model: &Model, params: &ParamStore, examples: &[Prepared]) -> Result<f64> {
    let mut total = 0.0;
    for p in examples {
        let mut g = Graph::new(params);
        let (loss, _) = model.nll(&mut g, p, &mut Dropout::off())?;
        total += g.value(loss).item()?;
    }
    Ok(total)
}

/// Central-difference check of the analytic gradient of the mean token NLL
/// of `reports` with respect to every parameter tensor. The absolute floor
/// of the relative error is scaled by `max(1, |loss|)`, since rounding noise
/// in the differences grows with the loss value.
pub fn gradient_check(model: &Model, reports: &[Report], opts: GradCheckOptions) -> Result<GradCheckReport> {
    let prepared: Vec<Prepared> = reports.iter().map(|r| model.prepare(r)).collect::<Result<_>>()?;
    let mut grads = Gradients::zeros_like(&model.params);
    let mut tokens = 0;
    for p in &prepared {
        let (_, n, g) = model.example_gradients(p, &mut Dropout::off())?;
        grads.add(&g);
        tokens += n;
    }
    let scale = 1.0 / tokens.max(1) as f64;
    grads.scale(scale);
    let loss = |s: &ParamStore| Ok::<_, CoreError>(total_nll_with(model, s, &prepared)? * scale);
    let base = loss(&model.params)?;
    let opts = GradCheckOptions {
        abs_floor: opts.abs_floor * base.abs().max(1.0),
        ..opts
    };
    let mut store = model.params.clone();
    finite_difference_check(&mut store, &grads, loss, opts)
}
