//! Training loop: shuffled mini-batches, RMSProp with weight decay, the
//! joint supervised + pseudo-label objective, per-epoch validation and early
//! stopping on the validation overall AUC.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::labelgraph::{build_cooccurrence, threshold_correlation};
use crate::loss::{supervised_loss, total_loss, unlabeled_loss_with, LossConfig};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{GrassNet, ModelConfig};
use crate::optim::{RmsProp, RmsPropConfig};

/// Run configuration. Serializes to a flat JSON object: optimizer and loop
/// settings here, architecture dims and loss settings flattened in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_rmsprop_decay")]
    pub rmsprop_decay: f64,
    #[serde(default = "default_rmsprop_epsilon")]
    pub rmsprop_epsilon: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience: u32,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Label-correlation threshold.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Include the pseudo-label term on unlabeled samples.
    #[serde(default = "default_true")]
    pub pseudo_labels: bool,
    /// Optional early exit once the training-set overall AUC reaches this
    /// value (checked once per epoch; intended for experiments).
    #[serde(default)]
    pub target_train_oauc: Option<f64>,
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub loss: LossConfig,
}

fn default_learning_rate() -> f64 {
    1e-3
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_rmsprop_decay() -> f64 {
    0.9
}
fn default_rmsprop_epsilon() -> f64 {
    1e-8
}
fn default_batch_size() -> usize {
    256
}
fn default_patience() -> u32 {
    25
}
fn default_max_epochs() -> u32 {
    200
}
fn default_seed() -> u64 {
    42
}
fn default_tau() -> f64 {
    0.4
}
fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: default_learning_rate(),
            weight_decay: default_weight_decay(),
            rmsprop_decay: default_rmsprop_decay(),
            rmsprop_epsilon: default_rmsprop_epsilon(),
            batch_size: default_batch_size(),
            patience: default_patience(),
            max_epochs: default_max_epochs(),
            seed: default_seed(),
            tau: default_tau(),
            pseudo_labels: true,
            target_train_oauc: None,
            model: ModelConfig::default(),
            loss: LossConfig::bce(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.rmsprop_decay <= 0.0 || self.rmsprop_epsilon <= 0.0 {
            return Err(Error::Config("optimizer rates must be positive".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config("tau must lie in [0, 1]".into()));
        }
        self.loss.validate()
    }

    fn rmsprop(&self) -> RmsPropConfig {
        RmsPropConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            decay: self.rmsprop_decay,
            epsilon: self.rmsprop_epsilon,
        }
    }
}

/// Patience-based early stopping on a higher-is-better metric. An undefined
/// metric never counts as an improvement; the first defined metric always
/// does.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: u32,
    best: Option<f64>,
    epochs_since_best: u32,
}

impl EarlyStopping {
    pub fn new(patience: u32) -> EarlyStopping {
        assert!(patience >= 1);
        EarlyStopping {
            patience,
            best: None,
            epochs_since_best: 0,
        }
    }

    /// Record one epoch's metric; returns whether it improved on the best.
    pub fn observe(&mut self, metric: Option<f64>) -> bool {
        let improved = match (metric, self.best) {
            (Some(v), Some(b)) => v > b,
            (Some(_), None) => true,
            (None, _) => false,
        };
        if improved {
            self.best = metric;
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_since_best >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: u32,
    pub train_loss: f64,
    pub valid_oauc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_oauc: Option<f64>,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    pub best_epoch: u32,
    pub best_oauc: Option<f64>,
}

/// Overall (micro) validation AUC over a dataset's labeled samples.
pub fn validation_oauc(model: &GrassNet, dataset: &Dataset) -> Result<Option<f64>> {
    Ok(evaluate_model(model, dataset)?.overall.auc)
}

/// Evaluate a model on the labeled samples of a dataset.
pub fn evaluate_model(model: &GrassNet, dataset: &Dataset) -> Result<EvalReport> {
    let samples = dataset.labeled();
    let targets = Dataset::targets_for(&samples, dataset.schema.label_count());
    let scores = model.predict_proba(&samples)?;
    Ok(evaluate(&scores, &targets, &dataset.schema.label_names))
}

/// Per-sample probabilities for every sample in file order.
pub fn predict_model(model: &GrassNet, dataset: &Dataset) -> Result<Vec<(String, Vec<f64>)>> {
    let refs: Vec<&Sample> = dataset.samples.iter().collect();
    let scores = model.predict_proba(&refs)?;
    let c = dataset.schema.label_count();
    Ok(dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), scores[i * c..(i + 1) * c].to_vec()))
        .collect())
}

fn snapshot(model: &GrassNet, opt: &RmsProp, dataset: &Dataset, epoch: u32, metric: f64) -> Checkpoint {
    let params = model
        .named_params()
        .into_iter()
        .map(|(name, t)| (name, t.shape().to_vec(), t.values().to_vec()))
        .collect();
    Checkpoint {
        schema: dataset.schema.clone(),
        model_config: model.config,
        corr: model.corr.clone(),
        epoch,
        best_metric: metric,
        params,
        opt_state: opt.state(),
    }
}

/// Train a model. Early stopping monitors the validation overall AUC with
/// the configured patience; the returned checkpoint holds the best-epoch
/// parameters.
pub fn train(train_set: &Dataset, valid_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labeled = train_set.labeled();
    let unlabeled = train_set.unlabeled();
    if labeled.is_empty() {
        return Err(Error::Config("training set has no labeled samples".into()));
    }
    let valid_labeled = valid_set.labeled();
    let valid_observed: usize = valid_labeled
        .iter()
        .map(|s| s.mask.iter().filter(|&&m| m != 0.0).count())
        .sum();
    if valid_observed == 0 {
        return Err(Error::Config(
            "validation set has no observed labels".into(),
        ));
    }

    let c = train_set.schema.label_count();
    let co = build_cooccurrence(
        labeled.iter().map(|s| (s.labels.as_slice(), s.mask.as_slice())),
        c,
    );
    let corr = threshold_correlation(&co, cfg.tau);

    let mut model = GrassNet::new(&train_set.schema, cfg.model, corr, cfg.seed);
    let mut opt = RmsProp::new(cfg.rmsprop());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5175_FFA1));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xD20F_0001));

    let mut history = Vec::new();
    let mut best: Option<(u32, f64, Checkpoint)> = None;
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut unlabeled_cursor = 0usize;
    let mut unlabeled_order: Vec<usize> = (0..unlabeled.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..labeled.len()).collect();
        order.shuffle(&mut shuffle_rng);
        unlabeled_order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| labeled[i]).collect();
            let targets = Dataset::targets_for(&batch, c);
            let logits = model.forward_batch(&batch, true, &mut dropout_rng)?;
            let probs = logits.sigmoid();
            let supervised = supervised_loss(&probs, &targets, &cfg.loss)?;

            let loss = if cfg.pseudo_labels && !unlabeled.is_empty() {
                let mut pool = Vec::with_capacity(cfg.batch_size.min(unlabeled.len()));
                for _ in 0..cfg.batch_size.min(unlabeled.len()) {
                    pool.push(unlabeled[unlabeled_order[unlabeled_cursor]]);
                    unlabeled_cursor = (unlabeled_cursor + 1) % unlabeled.len();
                }
                let u_logits = model.forward_batch(&pool, true, &mut dropout_rng)?;
                let u_probs = u_logits.sigmoid();
                let u_loss = unlabeled_loss_with(
                    &u_probs,
                    cfg.loss.pseudo_threshold,
                    cfg.loss.symmetric_confidence,
                );
                total_loss(&supervised, &u_loss)
            } else {
                supervised
            };

            let loss_value = loss.item();
            if !loss_value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: loss_value,
                });
            }
            loss.backward()?;
            model.visit_params_mut(&mut |name, t| opt.step(name, t));
            epoch_loss += loss_value;
            batches += 1;
        }
        epoch_loss /= batches.max(1) as f64;

        let valid_oauc = validation_oauc(&model, valid_set)?;
        if stopper.observe(valid_oauc) {
            let v = valid_oauc.expect("improvement implies a defined metric");
            best = Some((epoch, v, snapshot(&model, &opt, train_set, epoch, v)));
        }

        let train_oauc = if cfg.target_train_oauc.is_some() {
            validation_oauc(&model, train_set)?
        } else {
            None
        };
        history.push(EpochStats {
            epoch,
            train_loss: epoch_loss,
            valid_oauc,
            train_oauc,
        });

        if let (Some(target), Some(reached)) = (cfg.target_train_oauc, train_oauc) {
            if reached >= target {
                break;
            }
        }
        if stopper.should_stop() {
            break;
        }
    }

    let (best_epoch, best_oauc, checkpoint) = match best {
        Some((e, v, ck)) => (e, Some(v), ck),
        None => {
            // The validation metric was never defined; keep the final state.
            let last_epoch = history.last().map(|h| h.epoch).unwrap_or(0);
            (
                last_epoch,
                None,
                snapshot(&model, &opt, train_set, last_epoch, f64::NAN),
            )
        }
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        best_epoch,
        best_oauc,
    })
}
