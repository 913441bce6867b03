use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{phi_distribution, triplet_loss, EntityCache, LossConfig, PropLossKind, Triplet};
use super::sampler::{sample_prop, sample_uniform, SamplerConfig, SamplerKind};
use super::{stream_rng, INIT_STREAM, TRAIN_STREAM};
use crate::error::{Error, Result};
use crate::eval::{evaluate, mean_metrics, Interactions, MetricMeans, Target};
use crate::model::{Model, ModelConfig, ReviewInputs, Side};
use crate::numerics::{Adam, Gradients, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("batch_size, max_epochs and patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub optimizer: OptimConfig,
}

impl TrainConfig {
    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        self.loss.validate()?;
        self.sampler.validate()?;
        self.optimizer.validate()?;
        let needs_phi = self.loss.prop != PropLossKind::None || self.sampler.kind == SamplerKind::PropSample;
        if needs_phi && !model.variant.has_phi() {
            return Err(Error::Config(format!(
                "property loss and PropSample need property weights, variant {} has none",
                model.variant.label()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the score has not strictly improved for `patience`
/// consecutive observations.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, since_best: 0 }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if score <= best => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, score));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    /// Epoch and score of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: MetricMeans,
    pub wall_time_secs: f64,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_valid_map: f64,
    pub initial_valid_map: f64,
}

pub fn validation_map(model: &Model, inputs: Option<&ReviewInputs>, interactions: &Interactions) -> Result<MetricMeans> {
    let vectors = model.all_entity_vectors(inputs)?;
    Ok(mean_metrics(&evaluate(&vectors, interactions, Target::Valid)))
}

fn draw_negative(
    model: &Model,
    interactions: &Interactions,
    user: u32,
    pos: u32,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<u32> {
    let train = &interactions.train[user as usize];
    match cfg.kind {
        SamplerKind::Uniform => sample_uniform(interactions.num_items, train, rng),
        SamplerKind::PropSample => {
            let id = model.phi_param(Side::Item).expect("validated: variant has weights");
            let phi = |i: u32| phi_distribution(model.params.row(id, i as usize));
            Ok(sample_prop(interactions.num_items, train, &phi(pos), phi, cfg, rng)?.item)
        }
    }
}

/// Trains `model` in place with mini-batch Adam and early stopping on
/// validation MAP, calling `on_epoch` after every epoch.
pub fn train(
    mut model: Model,
    interactions: &Interactions,
    inputs: Option<&ReviewInputs>,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate(&model.config)?;
    if model.variant().uses_reviews() && inputs.is_none() {
        return Err(Error::Config("review inputs required for this variant".into()));
    }
    let mut positives: Vec<(u32, u32)> = interactions
        .train
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u as u32, i)))
        .collect();
    if positives.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let initial_valid_map = validation_map(&model, inputs, interactions)?.map;
    let mut adam = Adam::new(cfg.optimizer.learning_rate, &model.params);
    let mut grads = Gradients::new(&model.params);
    let mut stopper = EarlyStopping::new(cfg.optimizer.patience);
    let mut best_params = model.params.clone();
    let mut log = Vec::new();
    let start = Instant::now();

    for epoch in 1..=cfg.optimizer.max_epochs {
        positives.shuffle(rng);
        let mut loss_sum = 0.0;
        for (b, batch) in positives.chunks(cfg.optimizer.batch_size).enumerate() {
            let triplets = batch
                .iter()
                .map(|&(user, pos)| {
                    let neg = draw_negative(&model, interactions, user, pos, &cfg.sampler, rng)?;
                    Ok(Triplet { user, pos, neg })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut tape = Tape::new();
            let mut cache = EntityCache::default();
            let losses = triplets
                .iter()
                .map(|&t| triplet_loss(&mut tape, &mut cache, &model, &model.params, inputs, t, &cfg.loss))
                .collect::<Result<Vec<_>>>()?;
            let all = tape.concat(&losses);
            let batch_loss = tape.mean(all);
            let value = tape.scalar(batch_loss);
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss {value} at epoch {epoch}, batch {b}")));
            }
            loss_sum += value * batch.len() as f64;
            grads.zero();
            tape.backward_into(batch_loss, &mut grads)?;
            adam.step(&mut model.params, &grads)?;
        }
        model.params.check_finite()?;

        let valid = validation_map(&model, inputs, interactions)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / positives.len() as f64,
            valid,
            wall_time_secs: start.elapsed().as_secs_f64(),
            loss: cfg.loss,
            sampler: cfg.sampler,
        };
        on_epoch(&entry)?;
        log.push(entry);
        match stopper.observe(epoch, valid.map) {
            StopDecision::Improved => best_params = model.params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }

    let (best_epoch, best_valid_map) = stopper.best().expect("at least one epoch ran");
    model.params = best_params;
    Ok(TrainOutcome { model, log, best_epoch, best_valid_map, initial_valid_map })
}

/// Initializes a model from `seed` and trains it, using separate random
/// streams for initialization and training.
pub fn fit(
    config: &ModelConfig,
    embed_dim: usize,
    interactions: &Interactions,
    inputs: Option<&ReviewInputs>,
    cfg: &TrainConfig,
    seed: u64,
    on_epoch: impl FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut init = stream_rng(seed, INIT_STREAM);
    let model = Model::new(config.clone(), interactions.num_users(), interactions.num_items, embed_dim, &mut init)?;
    let mut rng = stream_rng(seed, TRAIN_STREAM);
    train(model, interactions, inputs, cfg, &mut rng, on_epoch)
}

/// Appends each entry as one JSON line.
pub fn write_log_line(out: &mut impl Write, entry: &EpochLog) -> Result<()> {
    let line = serde_json::to_string(entry)?;
    writeln!(out, "{line}").map_err(|e| Error::io(Path::new("<training log>"), e))
}
