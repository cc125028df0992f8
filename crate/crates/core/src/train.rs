//! Mini-batch training, model selection, checkpoints and evaluation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{self, FeatureSample};
use crate::decoders::{DecoderKind, Prediction, PredictionRecord};
use crate::error::{Error, Result};
use crate::fusion::{FusionStrategy, ModalityMap};
use crate::loss::LossKind;
use crate::metrics::{MetricsReport, COMBINED_MSE_WEIGHT};
use crate::model::{FusionModel, ModelSpec};
use crate::optim::{clip_global_norm, Adam, AdamConfig};
use crate::params::NamedTensor;

const SHUFFLE_STREAM: u64 = 0x7368_7566_666c_65;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub strategy: FusionStrategy,
    pub decoder: DecoderKind,
    pub loss: LossKind,
    pub dim: usize,
    pub classes: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub mse_weight: f64,
    pub modality: ModalityMap,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            strategy: FusionStrategy::Parallel,
            decoder: DecoderKind::Jdev,
            loss: LossKind::Uncertainty,
            dim: 128,
            classes: 6,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 32,
            max_epochs: 100,
            patience: 20,
            seed: 0,
            clip_norm: Some(5.0),
            mse_weight: COMBINED_MSE_WEIGHT,
            modality: ModalityMap::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.dim == 0 {
            return Err(Error::config("dim must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::config("classes must be at least 2"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("Adam betas must lie in [0, 1)"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::config("clip_norm must be positive"));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// ChaCha word position, as a decimal string (it is a u128).
    pub word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: ModelSpec,
    pub params: Vec<NamedTensor>,
    pub epoch: usize,
    pub best_score: f64,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn model(&self) -> Result<FusionModel> {
        let mut model = FusionModel::init(self.model.clone(), self.config.seed)?;
        model.store_mut().load_named(&self.params)?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub loss_emotion: f64,
    pub loss_valence: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub dis: f64,
    pub dim: f64,
    pub com: f64,
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    data::write_jsonl(path, history)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation combined score.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

fn require_labels(samples: &[FeatureSample], what: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::contract(format!("{what} set is empty")));
    }
    if let Some(s) = samples.iter().find(|s| s.emotion.is_none() || s.valence.is_none()) {
        return Err(Error::contract(format!("{what} sample {} is missing labels", s.id)));
    }
    Ok(())
}

/// Metrics of `model` on labelled `samples`.
pub fn evaluate(model: &FusionModel, samples: &[FeatureSample], mse_weight: f64) -> Result<MetricsReport> {
    require_labels(samples, "evaluation")?;
    let preds = model.predict(samples)?;
    score(&preds, samples, model.spec().classes, mse_weight)
}

/// Scores predictions against the labels of the samples they came from.
pub fn score(
    preds: &[Prediction],
    samples: &[FeatureSample],
    classes: usize,
    mse_weight: f64,
) -> Result<MetricsReport> {
    require_labels(samples, "evaluation")?;
    let truth: Vec<usize> = samples.iter().map(|s| s.emotion.unwrap()).collect();
    let vtrue: Vec<f64> = samples.iter().map(|s| s.valence.unwrap()).collect();
    let predicted: Vec<usize> = preds.iter().map(Prediction::class).collect();
    let vpred: Vec<f64> = preds.iter().map(|p| p.valence).collect();
    MetricsReport::new(&truth, &predicted, &vpred, &vtrue, classes, mse_weight)
}

pub fn to_records(samples: &[FeatureSample], preds: &[Prediction]) -> Vec<PredictionRecord> {
    samples
        .iter()
        .zip(preds)
        .map(|(s, p)| PredictionRecord {
            id: s.id.clone(),
            probs: p.probs.clone(),
            valence: p.valence,
        })
        .collect()
}

pub fn predict_records(model: &FusionModel, samples: &[FeatureSample]) -> Result<Vec<PredictionRecord>> {
    Ok(to_records(samples, &model.predict(samples)?))
}

struct StepLosses {
    total: f64,
    emotion: f64,
    valence: f64,
}

fn train_step(
    model: &mut FusionModel,
    optimizer: &mut Adam,
    samples: &[&FeatureSample],
    config: &TrainConfig,
    epoch: usize,
    batch_index: usize,
) -> Result<StepLosses> {
    let batch = model.batch(samples)?;
    let mut g = Graph::new();
    let p = model.store().bind(&mut g);
    let inputs: Vec<Var> = batch.inputs.iter().map(|t| g.constant(t.clone())).collect();
    let nodes = model.forward(&mut g, &p, &inputs)?;
    let losses = model.loss(&mut g, &p, &nodes.decoded, &batch, config.loss)?;
    let total = g.value(losses.total).data()[0];
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {total} at epoch {epoch}, batch {batch_index}"
        )));
    }
    g.backward(losses.total)?;
    let mut grads: Vec<Tensor> = p.vars().iter().map(|v| g.grad(*v).clone()).collect();
    if grads.iter().any(|t| !t.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient at epoch {epoch}, batch {batch_index}"
        )));
    }
    if let Some(max_norm) = config.clip_norm {
        clip_global_norm(&mut grads, max_norm);
    }
    optimizer.step(model.store_mut().tensors_mut(), &grads)?;
    Ok(StepLosses {
        total,
        emotion: g.value(losses.emotion).data()[0],
        valence: g.value(losses.valence).data()[0],
    })
}

/// Trains one system and returns the best-validation checkpoint.
pub fn train(config: &TrainConfig, train_set: &[FeatureSample], val_set: &[FeatureSample]) -> Result<TrainOutcome> {
    config.validate()?;
    require_labels(train_set, "training")?;
    require_labels(val_set, "validation")?;
    let manifest = data::validate(train_set.to_vec(), config.classes)?.manifest;
    data::validate(val_set.to_vec(), config.classes)?;
    let spec = ModelSpec::from_manifest(
        &manifest,
        config.strategy,
        config.decoder,
        config.dim,
        config.modality.clone(),
    );
    let mut model = FusionModel::init(spec.clone(), config.seed)?;
    let mut optimizer = Adam::new(config.adam(), model.store().tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);

    let initial = evaluate(&model, val_set, config.mse_weight)?;
    let mut best_params = model.store().to_named();
    let mut best_epoch = 0;
    let mut best_score = initial.com;
    let mut history = Vec::new();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut total, mut emotion, mut valence) = (0.0, 0.0, 0.0);
        let mut batches = 0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let samples: Vec<&FeatureSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let l = train_step(&mut model, &mut optimizer, &samples, config, epoch, bi)?;
            total += l.total;
            emotion += l.emotion;
            valence += l.valence;
            batches += 1;
        }
        let n = batches as f64;
        let report = evaluate(&model, val_set, config.mse_weight)?;
        let weights = model.uncertainty();
        history.push(EpochRecord {
            epoch,
            loss: total / n,
            loss_emotion: emotion / n,
            loss_valence: valence / n,
            delta1: weights.delta1(),
            delta2: weights.delta2(),
            dis: report.dis,
            dim: report.dim,
            com: report.com,
        });
        log::debug!(
            "epoch {epoch}: loss {:.4} val dis {:.4} dim {:.4} com {:.4}",
            total / n,
            report.dis,
            report.dim,
            report.com
        );
        if best_epoch == 0 || report.com > best_score {
            best_score = report.com;
            best_epoch = epoch;
            best_params = model.store().to_named();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            model: spec,
            params: best_params,
            epoch: best_epoch,
            best_score,
            rng: RngState {
                seed: config.seed,
                word_pos: rng.get_word_pos().to_string(),
            },
        },
        history,
    })
}
