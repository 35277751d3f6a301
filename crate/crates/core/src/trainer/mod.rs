//! Hashed bag-of-tokens linear classifier trained with minibatch SGD under
//! ERM or per-batch group DRO.

mod features;
mod model;
mod objective;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Example};
use crate::error::{Error, Result};
use crate::seed::stream_rng;
use crate::splits::Split;

pub use features::{featurize, FeatureConfig, SparseFeatures};
pub use model::{argmax, predict, ModelState, Prediction, Target, OTHER};
pub use objective::{
    batch_gradient, batch_loss, instance_batch_loss, instance_loss, prepare, BatchLoss, Gradient, Grouping, Instance,
    Objective,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub grouping: Grouping,
    /// Initial step size; epoch `e` (from 0) uses
    /// `learning_rate / (1 + lr_decay · e)`.
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Erm,
            grouping: Grouping::PerSymbol,
            learning_rate: 0.5,
            lr_decay: 1.0,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            l2: 1e-6,
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.lr_decay.is_nan() || self.lr_decay < 0.0 {
            return Err(Error::InvalidArgument("lr_decay must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::InvalidArgument("L2 penalty must be non-negative".into()));
        }
        self.features.validate()
    }
}

/// Exact-match accuracy of `model` on pre-featurized examples.
fn accuracy(model: &ModelState, examples: &[&Example], features: &[SparseFeatures]) -> f64 {
    let hits = examples
        .iter()
        .zip(features)
        .filter(|(ex, x)| model.predict_features(x).matches(ex))
        .count();
    hits as f64 / examples.len() as f64
}

/// Trains on the split's multiset and returns the parameters of the epoch
/// with the best dev accuracy (earliest on ties).
pub fn train(split: &Split, pool: &Corpus, dev: &Corpus, config: &TrainConfig) -> Result<ModelState> {
    train_examples(&split.examples(pool)?, dev, config)
}

pub fn train_examples(examples: &[&Example], dev: &Corpus, config: &TrainConfig) -> Result<ModelState> {
    config.validate()?;
    if examples.is_empty() || dev.is_empty() {
        return Err(Error::InvalidArgument("training and dev sets must be nonempty".into()));
    }
    let task = dev.task();
    let symbols: std::collections::BTreeSet<String> =
        examples.iter().flat_map(|e| e.symbols().iter().cloned()).collect();
    let mut model = ModelState::zeros(task, config.features, symbols)?;
    let instances = prepare(&model, examples, &config.grouping)?;
    let dev_examples: Vec<&Example> = dev.examples().iter().collect();
    let dev_features: Vec<SparseFeatures> = dev_examples.iter().map(|e| model.featurize(e.tokens())).collect();

    let mut rng = stream_rng(config.seed, "train/shuffle");
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut best: Option<(f64, ModelState)> = None;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = config.learning_rate / (1.0 + config.lr_decay * epoch as f64);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &instances[i]).collect();
            let (_, grad) = batch_gradient(&model, &batch, config.objective).map_err(|e| match e {
                Error::NonFiniteLoss => Error::Divergence { epoch, batch: b },
                other => other,
            })?;
            model.scale_weights(1.0 - lr * config.l2);
            for (&f, row) in &grad.rows {
                for (o, g) in row.iter().enumerate() {
                    model.add_weight(f as usize, o, -lr * g);
                }
            }
            for (o, g) in grad.bias.iter().enumerate() {
                model.add_bias(o, -lr * g);
            }
        }
        if !model.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: order.len().div_ceil(config.batch_size).saturating_sub(1),
            });
        }
        let acc = accuracy(&model, &dev_examples, &dev_features);
        log::debug!("epoch {epoch}: dev accuracy {acc:.4}");
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, model.clone()));
        }
    }
    Ok(best.expect("at least one epoch").1)
}
