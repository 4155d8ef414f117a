//! 1-N training with the listwise cross-entropy loss and Adam.

mod adam;
mod checkpoint;
mod grid;
mod presets;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, LabelIndex, Split, TripleStore};
use crate::eval::{evaluate, Direction, EvalError, EvalOptions, Filters, HeadMode, TiePolicy};
use crate::model::{forward, AcrE, Mode, ModelConfig, ModelError, ModelParams, ParamVars};
use crate::tensor::{Tape, TensorError};

pub use adam::{adam_step, Adam, AdamParams};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use grid::{grid_search, GridResult, GridRow, GridSpace};
pub use presets::{preset, preset_names, DatasetShape, Preset};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("loss became non-finite ({loss}) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("reciprocal head mode needs reciprocal relations in the store")]
    NotReciprocal,
    #[error("grid search space is empty")]
    EmptyGrid,
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// `(h, r)` queries per optimization step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamParams,
    pub epochs: usize,
    pub label_smoothing: f64,
    /// Validation every this many epochs (and after the last one).
    pub eval_every: usize,
    /// Validations without improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub head_mode: HeadMode,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 1e-3,
            adam: AdamParams::default(),
            epochs: 300,
            label_smoothing: 0.1,
            eval_every: 10,
            patience: 10,
            seed: 1,
            head_mode: HeadMode::Reciprocal,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, model ones included.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errors = Vec::new();
        let mut positive = |name: &str, v: usize| {
            if v == 0 {
                errors.push(format!("{name} must be positive"));
            }
        };
        positive("batch_size", self.batch_size);
        positive("epochs", self.epochs);
        positive("eval_every", self.eval_every);
        positive("patience", self.patience);
        // zero is allowed: a frozen baseline
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            errors.push(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.adam.beta1), ("beta2", self.adam.beta2)] {
            if !(0.0..1.0).contains(&b) {
                errors.push(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.adam.eps.is_nan() || self.adam.eps <= 0.0 {
            errors.push(format!("adam eps must be positive, got {}", self.adam.eps));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            errors.push(format!("label_smoothing must lie in [0, 1), got {}", self.label_smoothing));
        }
        if let Err(model) = self.model.validate() {
            errors.extend(model);
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            tie_policy: TiePolicy::Mean,
            head_mode: self.head_mode,
            direction: Direction::Both,
            filtered: true,
            batch_size: 256,
        }
    }
}

/// One line of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean batch loss, weighted by batch size.
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best model by validation MRR (the final one without a valid split).
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn model(&self) -> AcrE {
        self.checkpoint.model()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss).collect()
    }
}

/// Multi-hot rows for `queries`, smoothed toward the uniform `1/N`.
pub fn build_labels(index: &LabelIndex, queries: &[(usize, usize)], n: usize, smoothing: f64) -> Vec<f64> {
    let off = smoothing / n as f64;
    let on = 1.0 - smoothing + off;
    let mut labels = vec![off; queries.len() * n];
    for (row, &(h, r)) in queries.iter().enumerate() {
        for &t in index.get(h, r) {
            labels[row * n + t] = on;
        }
    }
    labels
}

/// Loss of one batch plus, when `lr` is given, one Adam update.
///
/// Returns the batch loss measured before the update.
pub fn train_step(
    params: &mut ModelParams,
    adam: &mut Adam,
    cfg: &ModelConfig,
    queries: &[(usize, usize)],
    labels: &[f64],
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64, TrainError> {
    let (loss, grads, norm_updates) = {
        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, params);
        let pass = forward(&mut tape, &vars, params, cfg, queries, Mode::Train, rng)?;
        let loss_var = tape.bce_listwise(pass.probs, labels)?;
        let loss = tape.value(loss_var)[0];
        if !loss.is_finite() {
            return Ok(loss);
        }
        let updates = pass.norm_updates(&tape);
        tape.backward(loss_var)?;
        let order = vars.ordered();
        let mut grads = tape.into_gradients();
        let grads: Vec<Option<Vec<f64>>> = order.iter().map(|&v| grads.take(v)).collect();
        (loss, grads, updates)
    };
    let refs: Vec<Option<&[f64]>> = grads.iter().map(|g| g.as_deref()).collect();
    adam.update(params.tensors_mut(), &refs, lr);
    params.apply_norm_updates(&norm_updates);
    Ok(loss)
}

/// Mean loss of `queries` against `labels` in training mode, without
/// updating anything.
pub fn batch_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    queries: &[(usize, usize)],
    labels: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let pass = forward(&mut tape, &vars, params, cfg, queries, Mode::Train, rng)?;
    let loss = tape.bce_listwise(pass.probs, labels)?;
    Ok(tape.value(loss)[0])
}

fn check_store(store: &TripleStore, cfg: &TrainConfig) -> Result<(), TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if cfg.head_mode == HeadMode::Reciprocal && !store.is_reciprocal() {
        return Err(TrainError::NotReciprocal);
    }
    if store.split(Split::Train).is_empty() {
        return Err(TrainError::Config(vec!["training split is empty".into()]));
    }
    Ok(())
}

/// Trains from the seed in `cfg`; `on_epoch` sees every curve record.
pub fn train(
    store: &TripleStore,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    check_store(store, cfg)?;
    let n = store.num_entities();
    let model = AcrE::new(cfg.model.clone(), n, store.num_relations(), cfg.seed)?;
    let mut params = model.params;
    let mut adam = Adam::new(cfg.adam, params.named().iter().map(|(_, t)| t.len()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let index = LabelIndex::tails(store, &[Split::Train])?;
    let mut queries: Vec<(usize, usize)> = index.queries().collect();
    let has_valid = !store.split(Split::Valid).is_empty();
    let filters = if has_valid { Some(Filters::new(store)?) } else { None };
    info!("training {} on {} queries ({} entities), {} params", cfg.model.structure, queries.len(), n, params.count());

    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut stale = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        queries.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in queries.chunks(cfg.batch_size).enumerate() {
            let labels = build_labels(&index, batch, n, cfg.label_smoothing);
            let loss = train_step(&mut params, &mut adam, &cfg.model, batch, &labels, cfg.learning_rate, &mut rng)?;
            if !loss.is_finite() || !params.all_finite() {
                return Err(TrainError::Diverged { epoch, batch: b, loss });
            }
            total += loss * batch.len() as f64;
        }
        let loss = total / queries.len() as f64;

        let due = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let mut record = EpochRecord { epoch, loss, valid_mrr: None };
        if let (true, Some(filters)) = (due, &filters) {
            let current = AcrE::from_parts(cfg.model.clone(), params.clone());
            let mrr = evaluate(&current, store, filters, Split::Valid, cfg.eval_options())?.report.overall.mrr;
            record.valid_mrr = Some(mrr);
            let improved = best.as_ref().is_none_or(|b| mrr > b.best_valid_mrr);
            if improved {
                stale = 0;
                best = Some(Checkpoint::new(cfg, current.params, adam.clone(), epoch, mrr));
            } else {
                stale += 1;
            }
            info!("epoch {epoch}: loss {loss:.6} valid MRR {mrr:.4}");
        } else {
            debug!("epoch {epoch}: loss {loss:.6}");
        }
        on_epoch(&record);
        history.push(record);
        if stale >= cfg.patience {
            stopped_early = true;
            info!("stopping after {stale} validations without improvement");
            break;
        }
    }

    let last_epoch = history.last().map_or(0, |r| r.epoch);
    let checkpoint = match best {
        Some(b) => b,
        None => Checkpoint::new(cfg, params, adam, last_epoch, f64::NAN),
    };
    Ok(TrainOutcome { checkpoint, history, stopped_early })
}

/// Total trainable scalars.
pub fn count_params(params: &ModelParams) -> usize {
    params.count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn collects_all_errors() {
        let cfg = TrainConfig {
            batch_size: 0,
            learning_rate: -1.0,
            label_smoothing: 1.0,
            model: ModelConfig { filters: 0, ..ModelConfig::default() },
            ..TrainConfig::default()
        };
        assert_eq!(cfg.validate().unwrap_err().len(), 4);
    }

    #[test]
    fn smoothed_labels() {
        let store = TripleStore::from_splits(
            vec![crate::data::Triple::new(0, 0, 1), crate::data::Triple::new(0, 0, 2)],
            vec![],
            vec![],
            4,
            1,
        )
        .unwrap();
        let index = LabelIndex::tails(&store, &[Split::Train]).unwrap();
        assert_eq!(build_labels(&index, &[(0, 0)], 4, 0.0), vec![0.0, 1.0, 1.0, 0.0]);
        let s = build_labels(&index, &[(0, 0)], 4, 0.2);
        assert!((s[0] - 0.05).abs() < 1e-15 && (s[1] - 0.85).abs() < 1e-15);
    }
}
