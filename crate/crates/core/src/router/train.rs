use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::curriculum::CurriculumState;
use super::decision::argmax_lowest;
use super::losses::bce_value;
use super::StepLoss;
use crate::corpus::RoutingExample;
use crate::error::{contract, Error, Result};
use crate::numeric::{AdamW, AdamWConfig, Bound, LrSchedule, ParamStore, Tape, Tensor, TensorError};

/// A model the shared training loop can optimize.
pub trait Trainable {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    /// Curriculum template; the loop fills in progress and seed.
    fn curriculum(&self) -> CurriculumState;
    fn example_loss(
        &self,
        tape: &mut Tape,
        p: &Bound,
        ex: &RoutingExample,
        curriculum: &CurriculumState,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepLoss>;
    /// Per-model scores used for validation routing.
    fn example_scores(&self, ex: &RoutingExample) -> Result<Vec<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub min_lr: f64,
    pub warmup_frac: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Validate every this many optimizer steps (and after the last one).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            batch_size: 64,
            lr: 5e-5,
            min_lr: 0.0,
            warmup_frac: 0.1,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
            eval_every: 100,
            seed: 0,
        }
    }
}

/// One optimizer step of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub route_loss: f64,
    pub resp_loss: f64,
    pub mask_ratio: f64,
    pub grad_norm: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: usize,
    /// Step whose weights were kept; 0 means the initial weights.
    pub best_step: usize,
    pub best_val_accuracy: Option<f64>,
    pub history: Vec<LogRow>,
    pub warnings: Vec<String>,
}

impl TrainReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("step\tepoch\tlr\tloss\troute_loss\tresp_loss\tmask_ratio\tgrad_norm\tval_accuracy\tval_loss\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.history {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.3e}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}\t{}\t{}",
                r.step,
                r.epoch,
                r.lr,
                r.loss,
                r.route_loss,
                r.resp_loss,
                r.mask_ratio,
                r.grad_norm,
                opt(r.val_accuracy),
                opt(r.val_loss)
            );
        }
        s
    }
}

/// Mean label of the selected model, and mean BCE of the scores against the
/// labels.
pub fn validation_metrics<M: Trainable + ?Sized>(model: &M, examples: &[RoutingExample]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::UndefinedMetric("empty validation set".into()));
    }
    let mut acc = 0.0;
    let mut loss = 0.0;
    for ex in examples {
        let s = model.example_scores(ex)?;
        if ex.labels.len() != s.len() {
            return Err(Error::Input(format!("record {} is not binarized", ex.id)));
        }
        acc += ex.labels[argmax_lowest(&s)];
        loss += bce_value(&s, &ex.labels);
    }
    let n = examples.len() as f64;
    Ok((acc / n, loss / n))
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::Tensor(TensorError::NonFinite { op, index }) => Error::Diverged {
            step,
            detail: format!("non-finite value from {op} at index {index}"),
        },
        other => other,
    }
}

/// AdamW with warmup and cosine decay, periodic validation, and restoration of
/// the best validated weights.
pub fn train<M: Trainable + ?Sized>(
    model: &mut M,
    train: &[RoutingExample],
    validation: &[RoutingExample],
    config: &TrainConfig,
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    if config.epochs == 0 || config.batch_size == 0 || config.eval_every == 0 {
        return Err(contract("epochs, batch size and validation interval must be positive"));
    }
    let per_epoch = train.len().div_ceil(config.batch_size);
    let total = per_epoch * config.epochs;
    let warmup = ((config.warmup_frac * total as f64).round() as usize).min(total.saturating_sub(1));
    let schedule = LrSchedule::new(config.lr, config.min_lr, total, warmup, crate::numeric::Decay::Cosine)?;
    let mut opt = AdamW::for_store(
        AdamWConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..AdamWConfig::default()
        },
        model.params(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let template = model.curriculum();
    let mut report = TrainReport::default();

    let mut best: Option<(f64, f64, Vec<Tensor>)> = None;
    if !validation.is_empty() {
        let (a, l) = validation_metrics(model, validation)?;
        best = Some((a, l, snapshot(model.params())));
        report.best_val_accuracy = Some(a);
    }

    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let progress = step as f64 / total as f64;
            let curriculum = CurriculumState {
                progress,
                seed: config.seed,
                ..template
            };
            model.params_mut().zero_grad();
            let (mut sum, mut route, mut resp) = (0.0, 0.0, 0.0);
            for &i in batch {
                let mut tape = Tape::new();
                let p = model.params().bind(&mut tape, true);
                let out = model
                    .example_loss(&mut tape, &p, &train[i], &curriculum, &mut rng)
                    .map_err(|e| diverged(step + 1, e))?;
                let value = tape.value(out.total).item();
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        step: step + 1,
                        detail: format!("loss {value} on record {}", train[i].id),
                    });
                }
                tape.backward(out.total).map_err(|e| diverged(step + 1, e.into()))?;
                model.params_mut().accumulate(&tape, &p);
                sum += value;
                route += out.route;
                resp += out.resp;
                for w in out.warnings {
                    if report.warnings.len() < 1000 {
                        report.warnings.push(format!("record {}: {w}", train[i].id));
                    }
                }
            }
            let b = batch.len() as f64;
            model.params_mut().scale_grads(1.0 / b);
            let norm = model.params().grad_norm();
            if !norm.is_finite() {
                return Err(Error::Diverged {
                    step: step + 1,
                    detail: "non-finite gradient norm".into(),
                });
            }
            if let Some(c) = config.clip_norm {
                if norm > c {
                    model.params_mut().scale_grads(c / norm);
                }
            }
            let lr = schedule.lr_at(step + 1)?;
            opt.set_lr(lr);
            opt.step_store(model.params_mut())?;
            step += 1;

            let mut row = LogRow {
                step,
                epoch,
                lr,
                loss: sum / b,
                route_loss: route / b,
                resp_loss: resp / b,
                mask_ratio: curriculum.ratio(),
                grad_norm: norm,
                val_accuracy: None,
                val_loss: None,
            };
            if !validation.is_empty() && (step % config.eval_every == 0 || step == total) {
                let (a, l) = validation_metrics(model, validation)?;
                row.val_accuracy = Some(a);
                row.val_loss = Some(l);
                let better = match &best {
                    Some((ba, bl, _)) => a > *ba || (a == *ba && l < *bl),
                    None => true,
                };
                if better {
                    best = Some((a, l, snapshot(model.params())));
                    report.best_step = step;
                    report.best_val_accuracy = Some(a);
                }
            }
            report.history.push(row);
        }
    }
    report.steps = step;
    match best {
        Some((_, _, weights)) => restore(model.params_mut(), weights)?,
        None => report.best_step = step,
    }
    Ok(report)
}

fn snapshot(store: &ParamStore) -> Vec<Tensor> {
    store.ids().map(|id| store.value(id).clone()).collect()
}

fn restore(store: &mut ParamStore, weights: Vec<Tensor>) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for (id, w) in ids.into_iter().zip(weights) {
        store.set(id, w)?;
    }
    Ok(())
}
