//! Gradient checks of the full training objective for every
//! strategy × decoder × loss combination.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{grad_check, GradCheckConfig, GradCheckReport, Graph, Tensor, Var};
use crate::data::{FeatureSample, StreamInfo};
use crate::decoders::DecoderKind;
use crate::error::Result;
use crate::fusion::{FusionStrategy, ModalityMap};
use crate::loss::LossKind;
use crate::model::{FusionModel, ModelSpec};

#[derive(Debug, Clone)]
pub struct GradCheckSuite {
    pub dim: usize,
    pub classes: usize,
    pub acoustic_dims: Vec<usize>,
    pub visual_dims: Vec<usize>,
    pub batch: usize,
    pub seed: u64,
    pub config: GradCheckConfig,
}

impl Default for GradCheckSuite {
    fn default() -> Self {
        GradCheckSuite {
            dim: 8,
            classes: 4,
            acoustic_dims: vec![5, 4, 6],
            visual_dims: vec![3, 4],
            batch: 3,
            seed: 17,
            config: GradCheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComboCheck {
    pub strategy: FusionStrategy,
    pub decoder: DecoderKind,
    pub loss: LossKind,
    pub report: GradCheckReport,
}

impl ComboCheck {
    pub fn label(&self) -> String {
        format!("{}/{}/{}", self.strategy, self.decoder, self.loss)
    }
}

impl GradCheckSuite {
    pub fn model_spec(&self, strategy: FusionStrategy, decoder: DecoderKind) -> ModelSpec {
        let mut streams = Vec::new();
        let mut modality = ModalityMap::default();
        for (i, &d) in self.acoustic_dims.iter().enumerate() {
            let name = format!("acoustic{i}");
            streams.push(StreamInfo { name: name.clone(), dim: d });
            modality.acoustic.push(name);
        }
        for (i, &d) in self.visual_dims.iter().enumerate() {
            let name = format!("visual{i}");
            streams.push(StreamInfo { name: name.clone(), dim: d });
            modality.visual.push(name);
        }
        streams.sort_by(|a, b| a.name.cmp(&b.name));
        ModelSpec {
            strategy,
            decoder,
            dim: self.dim,
            classes: self.classes,
            streams,
            modality,
        }
    }

    /// Random labelled samples with features in [-1, 1].
    pub fn samples(&self, spec: &ModelSpec) -> Vec<FeatureSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(1));
        let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        (0..self.batch)
            .map(|i| FeatureSample {
                id: format!("g{i}"),
                streams: spec
                    .streams
                    .iter()
                    .map(|s| (s.name.clone(), (0..s.dim).map(|_| unit.sample(&mut rng)).collect()))
                    .collect::<BTreeMap<_, _>>(),
                emotion: Some(i % self.classes),
                valence: Some(unit.sample(&mut rng)),
            })
            .collect()
    }

    /// Model at its seeded initialisation, with biases and uncertainty
    /// weights moved off zero so every adjoint is exercised.
    pub fn perturbed_model(&self, spec: ModelSpec) -> Result<FusionModel> {
        let mut model = FusionModel::init(spec, self.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(2));
        let jitter = Uniform::new_inclusive(-0.3, 0.3).expect("valid range");
        for t in model.store_mut().tensors_mut() {
            for x in t.data_mut() {
                *x += jitter.sample(&mut rng);
            }
        }
        Ok(model)
    }

    pub fn check(&self, strategy: FusionStrategy, decoder: DecoderKind, loss: LossKind) -> Result<ComboCheck> {
        let spec = self.model_spec(strategy, decoder);
        let samples = self.samples(&spec);
        let model = self.perturbed_model(spec)?;
        let refs: Vec<&FeatureSample> = samples.iter().collect();
        let batch = model.batch(&refs)?;
        let params: Vec<Tensor> = model.store().tensors().to_vec();
        let report = grad_check(
            |g: &mut Graph, vars: &[Var]| model.objective(g, vars, &batch, loss),
            &params,
            self.config,
        )?;
        Ok(ComboCheck {
            strategy,
            decoder,
            loss,
            report,
        })
    }

    /// All 3 × 2 × 2 combinations.
    pub fn run_all(&self) -> Result<Vec<ComboCheck>> {
        let mut out = Vec::new();
        for strategy in FusionStrategy::ALL {
            for decoder in DecoderKind::ALL {
                for loss in LossKind::ALL {
                    out.push(self.check(strategy, decoder, loss)?);
                }
            }
        }
        Ok(out)
    }
}
