use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::backbone::{argmax, Pointy};
use crate::data::{Dataset, Split};
use crate::embed::PatchInput;
use crate::error::{Error, Result};
use crate::geometry::{rotate_z, FpsStart};
use crate::numerics::rng::{seeded, streams};
use crate::numerics::{AdamW, RngState, Scalar};

use super::{write_history, Checkpoint, CheckpointMeta, EpochMetrics, RunConfig};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

/// Groups every cloud with the deterministic FPS start, in parallel.
pub fn prepare_all<T: Scalar>(model: &Pointy<T>, ds: &Dataset<T>) -> Result<Vec<PatchInput<T>>> {
    ds.clouds
        .par_iter()
        .map(|c| model.prepare(c, FpsStart::default()))
        .collect()
}

/// Predicted class of every prepared input.
pub fn predict<T: Scalar>(model: &Pointy<T>, inputs: &[PatchInput<T>]) -> Result<Vec<usize>> {
    inputs
        .par_iter()
        .map(|x| model.forward_prepared(x).map(|o| argmax(o.logits.data())))
        .collect()
}

/// Overall accuracy in percent.
pub fn evaluate<T: Scalar>(model: &Pointy<T>, inputs: &[PatchInput<T>], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let pred = predict(model, inputs)?;
    let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * correct as f64 / inputs.len() as f64)
}

/// Outcome of [`Trainer::fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_oa: f64,
    pub final_oa: f64,
    pub stopped_early: bool,
}

/// Mini-batch AdamW training with per-epoch evaluation.
///
/// Each epoch draws its shuffle, rotations and FPS starts from its own
/// stream, and per-sample gradients are summed in sample order, so results
/// do not depend on the thread count and a resumed run matches an
/// uninterrupted one bit for bit.
pub struct Trainer<T> {
    run: RunConfig,
    model: Pointy<T>,
    opt: AdamW<T>,
    split: Split<T>,
    test_inputs: Vec<PatchInput<T>>,
    epoch: usize,
    history: Vec<EpochMetrics>,
    best: Option<(usize, f64)>,
    best_model: Option<Pointy<T>>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(run: RunConfig, split: Split<T>) -> Result<Self> {
        run.validate()?;
        let model = Pointy::new(run.model.clone(), run.train.seed)?;
        let opt = AdamW::new(run.train.adamw(), model.params());
        Self::assemble(run, model, opt, split, 0, Vec::new())
    }

    /// Continues from a checkpoint written by [`Trainer::fit`].
    pub fn resume(ckpt: &Checkpoint<T>, split: Split<T>) -> Result<Self> {
        let model = ckpt.model()?;
        let opt = ckpt.optimizer()?;
        let run = ckpt.meta.run.clone();
        let mut t = Self::assemble(run, model, opt, split, ckpt.meta.epoch, ckpt.meta.history.clone())?;
        if let Some(best) = best_of(&t.history) {
            t.best = Some((best.epoch, best.test_oa));
            if best.epoch == t.epoch {
                t.best_model = Some(t.model.clone());
            } else {
                warn!("best weights of resumed run (epoch {}) are on disk only", best.epoch);
            }
        }
        Ok(t)
    }

    fn assemble(
        run: RunConfig,
        model: Pointy<T>,
        opt: AdamW<T>,
        split: Split<T>,
        epoch: usize,
        history: Vec<EpochMetrics>,
    ) -> Result<Self> {
        let classes = run.model.num_classes;
        for ds in [&split.train, &split.test] {
            if ds.num_classes() != classes {
                return Err(Error::Config(format!(
                    "model has {classes} classes, data `{}` has {}",
                    ds.source,
                    ds.num_classes()
                )));
            }
        }
        if split.train.is_empty() {
            return Err(Error::Empty("training split".into()));
        }
        let test_inputs = if split.test.is_empty() {
            Vec::new()
        } else {
            prepare_all(&model, &split.test)?
        };
        Ok(Self {
            run,
            model,
            opt,
            split,
            test_inputs,
            epoch,
            history,
            best: None,
            best_model: None,
        })
    }

    pub fn model(&self) -> &Pointy<T> {
        &self.model
    }

    pub fn run_config(&self) -> &RunConfig {
        &self.run
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn history(&self) -> &[EpochMetrics] {
        &self.history
    }

    /// Highest-accuracy weights seen in this session (earliest on ties).
    pub fn best_model(&self) -> Option<&Pointy<T>> {
        self.best_model.as_ref()
    }

    pub fn test_accuracy(&self) -> Result<f64> {
        if self.test_inputs.is_empty() {
            return Ok(f64::NAN);
        }
        evaluate(&self.model, &self.test_inputs, &self.split.test.labels)
    }

    /// One pass over the training split followed by a test evaluation.
    pub fn run_epoch(&mut self) -> Result<EpochMetrics> {
        let started = Instant::now();
        let cfg = self.run.train.clone();
        let train = &self.split.train;
        let n = train.len();
        let mut rng = seeded(cfg.seed, streams::EPOCH_BASE + self.epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let draws: Vec<(f64, FpsStart)> = order
            .iter()
            .map(|&i| {
                let angle = if cfg.augment { rng.random_range(0.0..std::f64::consts::TAU) } else { 0.0 };
                let start = if cfg.fps_random_start {
                    FpsStart::Index(rng.random_range(0..train.clouds[i].len()))
                } else {
                    FpsStart::default()
                };
                (angle, start)
            })
            .collect();

        let mut loss_sum = 0.0;
        for (b, (idx, draw)) in order.chunks(cfg.batch_size).zip(draws.chunks(cfg.batch_size)).enumerate() {
            let model = &self.model;
            let results: Vec<(T, Vec<Option<Vec<T>>>)> = idx
                .par_iter()
                .zip(draw)
                .map(|(&i, &(angle, start))| {
                    let cloud = &train.clouds[i];
                    let input = if angle != 0.0 {
                        model.prepare(&rotate_z(cloud, angle), start)?
                    } else {
                        model.prepare(cloud, start)?
                    };
                    model.loss_and_grads(&input, train.labels[i])
                })
                .collect::<Result<_>>()
                .map_err(|e| diverged(self.epoch + 1, b, e))?;

            let scale = T::lit(1.0 / idx.len() as f64);
            let params = self.model.params_mut();
            params.zero_grads();
            let mut batch_loss = 0.0;
            for (loss, grads) in &results {
                batch_loss += loss.as_f64();
                params.accumulate_grads(grads, scale);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "epoch {} batch {b}: loss {batch_loss}",
                    self.epoch + 1
                )));
            }
            loss_sum += batch_loss;
            update(&mut self.model, &mut self.opt, &cfg.freeze)?;
            if let Err(e) = self.model.params().check_finite() {
                return Err(diverged(self.epoch + 1, b, e));
            }
        }

        self.epoch += 1;
        let test_oa = self.test_accuracy()?;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            train_loss: loss_sum / n as f64,
            test_oa,
            wall_time_s: if cfg.deterministic { 0.0 } else { started.elapsed().as_secs_f64() },
        };
        if self.best.is_none_or(|b| test_oa > b.1) {
            self.best = Some((self.epoch, test_oa));
            self.best_model = Some(self.model.clone());
        }
        self.history.push(metrics.clone());
        Ok(metrics)
    }

    /// Checkpoint of the current state.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        let next = seeded(self.run.train.seed, streams::EPOCH_BASE + self.epoch as u64);
        let meta = CheckpointMeta {
            run: self.run.clone(),
            epoch: self.epoch,
            optimizer_step: self.opt.step_count(),
            rng: RngState::capture(&next),
            history: self.history.clone(),
            test_oa: self.history.last().map(|m| m.test_oa),
        };
        Checkpoint::capture(&self.model, &self.opt, meta)
    }

    /// Trains until the configured epoch count or accuracy target.
    ///
    /// With `out_dir`, writes `last.ckpt` and `history.csv` after every
    /// epoch and `best.ckpt` whenever test accuracy strictly improves.
    pub fn fit(&mut self, out_dir: Option<&Path>) -> Result<FitSummary> {
        if let Some(dir) = out_dir {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let start_epoch = self.epoch;
        let mut stopped_early = false;
        while self.epoch < self.run.train.epochs {
            let m = self.run_epoch()?;
            info!(
                "epoch {:>3}  loss {:.4}  test OA {:.2}%  {:.1}s",
                m.epoch, m.train_loss, m.test_oa, m.wall_time_s
            );
            if let Some(dir) = out_dir {
                let ckpt = self.checkpoint();
                ckpt.save(dir.join(LAST_CHECKPOINT))?;
                if self.best.is_some_and(|b| b.0 == self.epoch) {
                    ckpt.save(dir.join(BEST_CHECKPOINT))?;
                }
                write_history(dir.join(HISTORY_FILE), &self.history)?;
            }
            if self.run.train.stop_at_oa.is_some_and(|t| m.test_oa >= t) {
                stopped_early = true;
                break;
            }
        }
        let best = best_of(&self.history);
        Ok(FitSummary {
            epochs_run: self.epoch - start_epoch,
            best_epoch: best.map_or(0, |b| b.epoch),
            best_oa: best.map_or(f64::NAN, |b| b.test_oa),
            final_oa: self.history.last().map_or(f64::NAN, |m| m.test_oa),
            stopped_early,
        })
    }
}

/// Optimizer update that leaves parameters matching a `freeze` prefix untouched.
fn update<T: Scalar>(model: &mut Pointy<T>, opt: &mut AdamW<T>, freeze: &[String]) -> Result<()> {
    let frozen: Vec<_> = model
        .params()
        .iter()
        .filter(|(_, name, _)| freeze.iter().any(|p| name.starts_with(p.as_str())))
        .map(|(id, _, t)| (id, t.data().to_vec()))
        .collect();
    let params = model.params_mut();
    params.fill_missing_grads();
    opt.step(params)?;
    for (id, data) in frozen {
        params.get_mut(id).data_mut().copy_from_slice(&data);
    }
    Ok(())
}

/// Highest test accuracy; the earliest epoch wins ties.
fn best_of(history: &[EpochMetrics]) -> Option<&EpochMetrics> {
    history
        .iter()
        .fold(None, |best: Option<&EpochMetrics>, m| match best {
            Some(b) if !(m.test_oa > b.test_oa) => Some(b),
            _ => Some(m),
        })
}

fn diverged(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite { .. } | Error::NonFiniteInput(_) => {
            Error::Diverged(format!("epoch {epoch} batch {batch}: {e}"))
        }
        other => other,
    }
}
