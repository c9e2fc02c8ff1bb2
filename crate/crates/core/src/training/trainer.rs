use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{batch_loss_and_gradients, Batch};
use super::optim::{Adagrad, DEFAULT_EPSILON};
use super::Example;
use crate::error::{Error, Result};
use crate::model::Params;

pub const DEFAULT_BATCH_SIZE: usize = 1000;

const STREAM_SHUFFLE: u64 = 3 << 62;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub eps: f64,
    pub logit_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: DEFAULT_BATCH_SIZE,
            epochs: 5,
            lr: 0.5,
            eps: DEFAULT_EPSILON,
            logit_scale: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Config(format!("eps must be non-negative, got {}", self.eps)));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return Err(Error::Config(format!(
                "logit_scale must be positive, got {}",
                self.logit_scale
            )));
        }
        Ok(())
    }
}

/// Owns the parameters and optimizer state between epochs.
#[derive(Clone, Debug)]
pub struct Trainer {
    params: Params,
    optimizer: Adagrad,
    config: TrainConfig,
    epoch: usize,
}

impl Trainer {
    pub fn new(params: Params, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adagrad::new(config.lr, config.eps, &params);
        Ok(Trainer {
            params,
            optimizer,
            config,
            epoch: 0,
        })
    }

    /// Resumes from saved state; `epoch` is the number of completed epochs.
    pub fn from_parts(params: Params, optimizer: Adagrad, config: TrainConfig, epoch: usize) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            params,
            optimizer,
            config,
            epoch,
        })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn optimizer(&self) -> &Adagrad {
        &self.optimizer
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_completed(&self) -> usize {
        self.epoch
    }

    pub fn into_parts(self) -> (Params, Adagrad, usize) {
        (self.params, self.optimizer, self.epoch)
    }

    /// Order of examples for the next epoch. The permutation depends only on
    /// the seed and the epoch number, so a resumed run shuffles identically.
    fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(STREAM_SHUFFLE | self.epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// One pass over `examples`; returns the mean weighted per-example loss.
    pub fn run_epoch(&mut self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let order = self.epoch_order(examples.len());
        let mut total = 0.0;
        for (i, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch = Batch::new(chunk.iter().map(|&k| &examples[k]).collect())?;
            let (report, grads) = batch_loss_and_gradients(&self.params, &batch, self.config.logit_scale)?;
            self.optimizer.step(&mut self.params, &grads)?;
            total += report.mean_weighted_loss * batch.len() as f64;
            debug!("epoch {} batch {i}: loss {:.6}", self.epoch, report.mean_weighted_loss);
        }
        self.epoch += 1;
        Ok(total / examples.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: Params,
    pub optimizer: Adagrad,
    /// Mean weighted loss of each epoch.
    pub loss_curve: Vec<f64>,
    /// Examples dropped because their query had no tokens.
    pub dropped: usize,
}

/// Trains `params` on `examples` for `config.epochs` epochs.
///
/// Examples with an empty token list are dropped (and counted); it is an error
/// if nothing is left.
pub fn train(params: Params, examples: &[Example], config: &TrainConfig) -> Result<TrainOutcome> {
    let kept: Vec<Example> = examples.iter().filter(|e| !e.tokens.is_empty()).cloned().collect();
    let dropped = examples.len() - kept.len();
    if dropped > 0 {
        warn!("dropped {dropped} examples with empty queries");
    }
    if kept.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut trainer = Trainer::new(params, config.clone())?;
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let loss = trainer.run_epoch(&kept)?;
        info!("epoch {}: mean loss {loss:.6}", trainer.epochs_completed());
        loss_curve.push(loss);
    }
    let (params, optimizer, _) = trainer.into_parts();
    Ok(TrainOutcome {
        params,
        optimizer,
        loss_curve,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ImageRef, ModelShape, TowerShape};
    use crate::textproc::TokenId;

    fn toy() -> (Params, Vec<Example>) {
        let shape = ModelShape {
            vocab_size: 6,
            num_buckets: 2,
            emb_dim: 4,
            tower: TowerShape::Lookup { num_images: 3 },
        };
        let examples = (0..30)
            .map(|i| Example {
                tokens: vec![TokenId(i % 6), TokenId((i + 1) % 6)],
                image: ImageRef::Id(i % 3),
                weight: 1.0,
            })
            .collect();
        (init_params(5, &shape).unwrap(), examples)
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (params, examples) = toy();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(params.clone(), &examples, &cfg).unwrap();
        assert_eq!(out.params, params);
        assert!(out.loss_curve.is_empty());
    }

    #[test]
    fn same_seed_is_bitwise_reproducible() {
        let (params, examples) = toy();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 7,
            seed: 11,
            ..TrainConfig::default()
        };
        let a = train(params.clone(), &examples, &cfg).unwrap();
        let b = train(params, &examples, &cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_curve, b.loss_curve);
    }

    #[test]
    fn drops_empty_queries_and_fails_when_nothing_left() {
        let (params, mut examples) = toy();
        examples[0].tokens.clear();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert_eq!(train(params.clone(), &examples, &cfg).unwrap().dropped, 1);
        for e in &mut examples {
            e.tokens.clear();
        }
        assert!(matches!(train(params, &examples, &cfg), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let (params, examples) = toy();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            seed: 3,
            ..TrainConfig::default()
        };
        let full = train(params.clone(), &examples, &cfg).unwrap();

        let mut first = Trainer::new(params, cfg.clone()).unwrap();
        first.run_epoch(&examples).unwrap();
        let (p, opt, epoch) = first.into_parts();
        let mut resumed = Trainer::from_parts(p, opt, cfg, epoch).unwrap();
        resumed.run_epoch(&examples).unwrap();
        assert_eq!(resumed.params(), &full.params);
    }

    #[test]
    fn rejects_bad_config() {
        let (params, _) = toy();
        for cfg in [
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { logit_scale: -1.0, ..TrainConfig::default() },
        ] {
            assert!(Trainer::new(params.clone(), cfg).is_err());
        }
    }
}
