//! Teacher-forced maximum-likelihood training with Adam, per-epoch learning
//! rate decay, global-norm gradient clipping and best-on-dev selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CalorieLevel, RecipeId, UserId};
use crate::dataset::Example;
use crate::model::{EncodedInput, Model, ModelParams, UserContext};
use crate::nn::{clip_global_norm, Adam, AdamConfig, Params};
use crate::tokenizer::PAD;
use crate::{Error, Result};

/// Gradients of a batch are accumulated in this many shards, combined in a
/// fixed order so results do not depend on the thread count.
const GRAD_SHARDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Learning-rate multiplier applied after every epoch.
    pub decay_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    /// Derived from the run's root seed, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 1e-3, decay_rate: 0.9, epochs: 10, batch_size: 16, grad_clip_norm: 5.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return Err(Error::Config(format!("decay_rate must be in (0, 1], got {}", self.decay_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config(format!("grad_clip_norm must be positive, got {}", self.grad_clip_norm)));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based), i.e. after `epoch`
    /// completed epochs of decay.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_rate.powi(epoch as i32)
    }
}

/// Padded batch with explicit length masks. Rows are recovered by stripping
/// the masked-out positions, so padding never reaches the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub names: Vec<Vec<u32>>,
    pub name_mask: Vec<Vec<bool>>,
    pub ingredients: Vec<Vec<usize>>,
    pub ingredient_mask: Vec<Vec<bool>>,
    pub targets: Vec<Vec<u32>>,
    pub target_mask: Vec<Vec<bool>>,
    pub calories: Vec<CalorieLevel>,
    pub users: Vec<UserContext>,
    pub keys: Vec<(UserId, RecipeId)>,
}

fn pad<T: Copy>(rows: Vec<Vec<T>>, fill: T) -> (Vec<Vec<T>>, Vec<Vec<bool>>) {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let masks = rows.iter().map(|r| (0..width).map(|i| i < r.len()).collect()).collect();
    let padded = rows
        .into_iter()
        .map(|mut r| {
            r.resize(width, fill);
            r
        })
        .collect();
    (padded, masks)
}

fn strip<T: Copy>(row: &[T], mask: &[bool]) -> Vec<T> {
    row.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect()
}

impl Batch {
    pub fn from_examples(examples: &[&Example]) -> Self {
        let (names, name_mask) = pad(examples.iter().map(|e| e.input.name.clone()).collect(), PAD);
        let (ingredients, ingredient_mask) = pad(examples.iter().map(|e| e.input.ingredients.clone()).collect(), 0);
        let (targets, target_mask) = pad(examples.iter().map(|e| e.target.clone()).collect(), PAD);
        Batch {
            names,
            name_mask,
            ingredients,
            ingredient_mask,
            targets,
            target_mask,
            calories: examples.iter().map(|e| e.input.calorie).collect(),
            users: examples.iter().map(|e| e.context.clone()).collect(),
            keys: examples.iter().map(|e| (e.user_id.clone(), e.recipe_id.clone())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Widens the target matrix by `extra` masked PAD columns.
    pub fn pad_targets(&mut self, extra: usize) {
        for (row, mask) in self.targets.iter_mut().zip(&mut self.target_mask) {
            row.extend(std::iter::repeat_n(PAD, extra));
            mask.extend(std::iter::repeat_n(false, extra));
        }
    }

    /// Unpadded input, user context and target of row `i`.
    pub fn row(&self, i: usize) -> (EncodedInput, &UserContext, Vec<u32>) {
        let input = EncodedInput {
            name: strip(&self.names[i], &self.name_mask[i]),
            ingredients: strip(&self.ingredients[i], &self.ingredient_mask[i]),
            calorie: self.calories[i],
        };
        (input, &self.users[i], strip(&self.targets[i], &self.target_mask[i]))
    }

    /// Number of predicted (non-PAD, non-BOS) target positions.
    pub fn real_tokens(&self) -> usize {
        self.target_mask.iter().map(|m| m.iter().filter(|&&b| b).count().saturating_sub(1)).sum()
    }

    fn check(&self) -> Result<()> {
        for (i, (row, mask)) in self.targets.iter().zip(&self.target_mask).enumerate() {
            for (&t, &m) in row.iter().zip(mask) {
                if m == (t == PAD) {
                    return Err(Error::Invalid(format!("batch row {i}: target mask does not match padding")));
                }
            }
        }
        Ok(())
    }

    fn describe(&self) -> String {
        let rows: Vec<String> = (0..self.len())
            .map(|i| {
                let (input, _, target) = self.row(i);
                format!(
                    "user={} recipe={} name_len={} ingredients={} target_len={}",
                    self.keys[i].0,
                    self.keys[i].1,
                    input.name.len(),
                    input.ingredients.len(),
                    target.len()
                )
            })
            .collect();
        rows.join("; ")
    }
}

/// Mean negative log-likelihood per real target token.
pub fn compute_loss(model: &Model, batch: &Batch) -> Result<f64> {
    batch.check()?;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let (input, user, target) = batch.row(i);
        total -= model.sequence_log_likelihood(&input, user, &target)?.total;
    }
    Ok(total / batch.real_tokens().max(1) as f64)
}

fn add_into(dst: &mut ModelParams, src: &ModelParams) {
    let src = src.named_tensors();
    for (d, (_, s)) in dst.tensors_mut().into_iter().zip(src) {
        d.add_acc(s.data());
    }
}

/// Mean per-token loss of the batch, with its gradient written into `grad`
/// (which is overwritten).
pub fn loss_and_gradient(model: &Model, batch: &Batch, grad: &mut ModelParams) -> Result<f64> {
    batch.check()?;
    let tokens = batch.real_tokens().max(1) as f64;
    let scale = 1.0 / tokens;
    let shard = batch.len().div_ceil(GRAD_SHARDS).max(1);
    let rows: Vec<usize> = (0..batch.len()).collect();
    let parts: Vec<Result<(f64, ModelParams)>> = rows
        .par_chunks(shard)
        .map(|chunk| {
            let mut g = model.params.zeros_like();
            let mut nll = 0.0;
            for &i in chunk {
                let (input, user, target) = batch.row(i);
                nll += model.accumulate_gradient(&input, user, &target, scale, &mut g)?.0;
            }
            Ok((nll, g))
        })
        .collect();
    grad.zero_grad();
    let mut nll = 0.0;
    for part in parts {
        let (n, g) = part?;
        nll += n;
        add_into(grad, &g);
    }
    Ok(nll / tokens)
}

/// `exp` of the mean negative log-likelihood per BPE token.
pub fn perplexity(model: &Model, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Invalid("perplexity of an empty dataset".into()));
    }
    let parts: Vec<Result<(f64, usize)>> = examples
        .par_iter()
        .map(|e| Ok((-model.sequence_log_likelihood(&e.input, &e.context, &e.target)?.total, e.target_tokens())))
        .collect();
    let (mut nll, mut n) = (0.0, 0usize);
    for p in parts {
        let (a, b) = p?;
        nll += a;
        n += b;
    }
    Ok((nll / n as f64).exp())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_ppl: f64,
    /// `None` when no dev set was given.
    pub dev_ppl: Option<f64>,
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest dev perplexity (lowest
    /// training loss when there is no dev set).
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub log: Vec<EpochRecord>,
}

/// Batches bucketed by target length, in a seeded random order.
fn make_batches<'a>(examples: &'a [Example], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<&'a Example>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| examples[i].target.len());
    let mut batches: Vec<Vec<&Example>> =
        order.chunks(batch_size).map(|c| c.iter().map(|&i| &examples[i]).collect()).collect();
    batches.shuffle(rng);
    batches
}

/// Trains `model` in place of a copy. `on_epoch` sees each epoch's record,
/// the current parameters and whether they are the best so far; it is the
/// hook for logging and checkpointing.
pub fn train<F>(
    mut model: Model,
    config: &TrainConfig,
    train: &[Example],
    dev: &[Example],
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &Model, bool) -> Result<()>,
{
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(AdamConfig::default());
    let mut grad = model.params.zeros_like();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.lr_at(epoch);
        let (mut nll, mut tokens, mut last_norm) = (0.0, 0usize, 0.0);
        for chunk in make_batches(train, config.batch_size, &mut rng) {
            let batch = Batch::from_examples(&chunk);
            let loss = loss_and_gradient(&model, &batch, &mut grad)?;
            if !loss.is_finite() || !grad.all_finite() {
                return Err(diverged(epoch + 1, &batch, loss, "non-finite loss or gradient"));
            }
            last_norm = clip_global_norm(&mut grad, config.grad_clip_norm);
            adam.step(&mut model.params, &grad, lr);
            if !model.all_finite() {
                return Err(diverged(epoch + 1, &batch, loss, "parameters became non-finite"));
            }
            let n = batch.real_tokens();
            nll += loss * n as f64;
            tokens += n;
        }
        let train_loss = nll / tokens.max(1) as f64;
        let dev_ppl = if dev.is_empty() { None } else { Some(perplexity(&model, dev)?) };
        if dev_ppl.is_some_and(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch: epoch + 1, detail: "dev perplexity is not finite".into() });
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss,
            train_ppl: train_loss.exp(),
            dev_ppl,
            grad_norm: last_norm,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        let score = dev_ppl.unwrap_or(record.train_ppl);
        let is_best = best.as_ref().is_none_or(|(b, _, _)| score < *b);
        log::info!(
            "epoch {} lr {:.3e} train loss {:.4} dev ppl {}",
            record.epoch,
            lr,
            train_loss,
            dev_ppl.map_or("-".to_string(), |p| format!("{p:.4}"))
        );
        on_epoch(&record, &model, is_best)?;
        if is_best {
            best = Some((score, epoch + 1, model.clone()));
        }
        log.push(record);
    }
    let (best_model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model.clone(), 0),
    };
    Ok(TrainOutcome { best: best_model, best_epoch, last: model, log })
}

fn diverged(epoch: usize, batch: &Batch, loss: f64, what: &str) -> Error {
    Error::Diverged { epoch, detail: format!("{what} (batch loss {loss}); batch: {}", batch.describe()) }
}
