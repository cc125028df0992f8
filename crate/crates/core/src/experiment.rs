//! Seeded end-to-end runs on synthetic data: decoder comparison and
//! decision-level fusion of the three strategy systems.

use std::collections::BTreeMap;

use crate::data::{self, generate_synthetic, FeatureSample, SynthSpec, SynthStream};
use crate::decoders::{DecoderKind, PredictionRecord};
use crate::ensemble::{score_records, search_weights, WeightSearch};
use crate::error::Result;
use crate::fusion::{FusionStrategy, ModalityMap};
use crate::loss::LossKind;
use crate::metrics::MetricsReport;
use crate::train::{predict_records, train, TrainConfig, TrainOutcome};

/// A noisy class-conditional task with two modalities.
#[derive(Debug, Clone)]
pub struct SynthTask {
    pub classes: usize,
    pub acoustic_dims: Vec<usize>,
    pub visual_dims: Vec<usize>,
    pub feature_sigma: f64,
    pub valence_sigma: f64,
    pub samples: usize,
    pub train_fraction: f64,
    pub dim: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub loss: LossKind,
}

impl Default for SynthTask {
    fn default() -> Self {
        SynthTask {
            classes: 6,
            acoustic_dims: vec![8, 8, 8],
            visual_dims: vec![6, 6],
            feature_sigma: 2.0,
            valence_sigma: 0.1,
            samples: 1200,
            train_fraction: 0.75,
            dim: 16,
            max_epochs: 60,
            patience: 20,
            loss: LossKind::Uncertainty,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskData {
    pub train: Vec<FeatureSample>,
    pub val: Vec<FeatureSample>,
}

#[derive(Debug, Clone)]
pub struct SystemRun {
    pub strategy: FusionStrategy,
    pub decoder: DecoderKind,
    pub outcome: TrainOutcome,
    /// Validation predictions of the selected checkpoint.
    pub predictions: Vec<PredictionRecord>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub members: Vec<SystemRun>,
    pub search: WeightSearch,
}

impl EnsembleRun {
    pub fn best_member_com(&self) -> f64 {
        self.members
            .iter()
            .map(|m| m.report.com)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

impl SynthTask {
    pub fn modality(&self) -> ModalityMap {
        ModalityMap {
            acoustic: (0..self.acoustic_dims.len()).map(|i| format!("acoustic{i}")).collect(),
            visual: (0..self.visual_dims.len()).map(|i| format!("visual{i}")).collect(),
        }
    }

    pub fn synth_spec(&self, seed: u64) -> SynthSpec {
        let m = self.modality();
        let streams = m
            .acoustic
            .iter()
            .zip(&self.acoustic_dims)
            .chain(m.visual.iter().zip(&self.visual_dims))
            .map(|(name, &dim)| SynthStream { name: name.clone(), dim })
            .collect();
        SynthSpec {
            classes: self.classes,
            priors: None,
            valence_means: None,
            valence_sigma: self.valence_sigma,
            feature_sigma: self.feature_sigma,
            streams,
            class_means: None,
            mean_scale: 1.0,
            samples: self.samples,
            seed,
        }
    }

    pub fn data(&self, seed: u64) -> Result<TaskData> {
        let samples = generate_synthetic(&self.synth_spec(seed))?;
        let split = data::split(&samples, self.train_fraction, seed)?;
        Ok(TaskData {
            train: split.train,
            val: split.val,
        })
    }

    pub fn config(&self, strategy: FusionStrategy, decoder: DecoderKind, seed: u64) -> TrainConfig {
        TrainConfig {
            strategy,
            decoder,
            loss: self.loss,
            dim: self.dim,
            classes: self.classes,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            modality: self.modality(),
            ..TrainConfig::default()
        }
    }

    pub fn run(&self, data: &TaskData, strategy: FusionStrategy, decoder: DecoderKind, seed: u64) -> Result<SystemRun> {
        let config = self.config(strategy, decoder, seed);
        let outcome = train(&config, &data.train, &data.val)?;
        let model = outcome.checkpoint.model()?;
        let predictions = predict_records(&model, &data.val)?;
        let report = score_records(&predictions, &data.val, config.mse_weight)?;
        Ok(SystemRun {
            strategy,
            decoder,
            outcome,
            predictions,
            report,
        })
    }

    /// Trains one system per decoder on the same data and seed.
    pub fn compare_decoders(&self, strategy: FusionStrategy, seed: u64) -> Result<BTreeMap<DecoderKind, SystemRun>> {
        let data = self.data(seed)?;
        let runs = std::thread::scope(|s| {
            let handles: Vec<_> = DecoderKind::ALL
                .iter()
                .map(|&d| {
                    let data = &data;
                    s.spawn(move || self.run(data, strategy, d, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect::<Vec<_>>()
        });
        let mut out = BTreeMap::new();
        for (d, r) in DecoderKind::ALL.iter().zip(runs) {
            out.insert(*d, r?);
        }
        Ok(out)
    }

    /// Trains the three strategy systems and searches fusion weights on the
    /// validation split.
    pub fn ensemble(&self, decoder: DecoderKind, seed: u64, step: f64) -> Result<EnsembleRun> {
        let data = self.data(seed)?;
        let runs = std::thread::scope(|s| {
            let handles: Vec<_> = FusionStrategy::ALL
                .iter()
                .map(|&st| {
                    let data = &data;
                    s.spawn(move || self.run(data, st, decoder, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect::<Vec<_>>()
        });
        let members = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let preds: Vec<Vec<PredictionRecord>> = members.iter().map(|m| m.predictions.clone()).collect();
        let search = search_weights(&preds, &data.val, step, crate::metrics::COMBINED_MSE_WEIGHT)?;
        Ok(EnsembleRun { members, search })
    }
}
