//! A complete trainable system: fusion encoder, decoder and the two
//! uncertainty weights, all stored in one [`ParamStore`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{DatasetManifest, FeatureSample, StreamInfo};
use crate::decoders::{DecodedNodes, Decoder, DecoderKind, Prediction};
use crate::error::{Error, Result};
use crate::fusion::{AlphaRecord, FusedNodes, FusedState, FusionEncoder, FusionStrategy, ModalityMap};
use crate::loss::{ce_loss, equal_loss, mse_loss, uncertainty_loss, LossKind, UncertaintyWeights};
use crate::params::{Bound, ParamId, ParamStore};

/// Architecture of a [`FusionModel`]; together with a seed it determines
/// the initial parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub strategy: FusionStrategy,
    pub decoder: DecoderKind,
    pub dim: usize,
    pub classes: usize,
    pub streams: Vec<StreamInfo>,
    pub modality: ModalityMap,
}

impl ModelSpec {
    pub fn from_manifest(
        manifest: &DatasetManifest,
        strategy: FusionStrategy,
        decoder: DecoderKind,
        dim: usize,
        modality: ModalityMap,
    ) -> Self {
        ModelSpec {
            strategy,
            decoder,
            dim,
            classes: manifest.num_classes,
            streams: manifest.streams.clone(),
            modality,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionModel {
    spec: ModelSpec,
    store: ParamStore,
    encoder: FusionEncoder,
    decoder: Decoder,
    rho1: ParamId,
    rho2: ParamId,
}

/// Per-batch graph outputs.
#[derive(Debug, Clone)]
pub struct ModelNodes {
    pub fused: FusedNodes,
    pub decoded: DecodedNodes,
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: Var,
    pub emotion: Var,
    pub valence: Var,
}

/// Stream matrices and labels for a group of samples.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub targets: Vec<f64>,
}

const PREDICT_CHUNK: usize = 256;

impl FusionModel {
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        if spec.classes < 2 {
            return Err(Error::config("model needs at least 2 classes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let streams: Vec<(String, usize)> =
            spec.streams.iter().map(|s| (s.name.clone(), s.dim)).collect();
        let encoder = FusionEncoder::new(
            &mut store,
            spec.strategy,
            &streams,
            &spec.modality,
            spec.dim,
            &mut rng,
        )?;
        let decoder = Decoder::new(&mut store, spec.decoder, spec.dim, spec.classes, &mut rng);
        let rho1 = store.add_zeros("uncertainty.rho1", 1, 1);
        let rho2 = store.add_zeros("uncertainty.rho2", 1, 1);
        Ok(FusionModel {
            spec,
            store,
            encoder,
            decoder,
            rho1,
            rho2,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn encoder(&self) -> &FusionEncoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn uncertainty(&self) -> UncertaintyWeights {
        UncertaintyWeights {
            rho1: self.store.get(self.rho1).data()[0],
            rho2: self.store.get(self.rho2).data()[0],
        }
    }

    /// Stacks the samples' streams into `B × d` matrices, in spec order.
    pub fn batch(&self, samples: &[&FeatureSample]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(self.spec.streams.len());
        for info in &self.spec.streams {
            let mut data = Vec::with_capacity(samples.len() * info.dim);
            for s in samples {
                let v = s.streams.get(&info.name).ok_or_else(|| Error::Schema {
                    line: 0,
                    detail: format!("sample {} lacks stream {}", s.id, info.name),
                })?;
                if v.len() != info.dim {
                    return Err(Error::Schema {
                        line: 0,
                        detail: format!(
                            "sample {} stream {} has length {}, model expects {}",
                            s.id,
                            info.name,
                            v.len(),
                            info.dim
                        ),
                    });
                }
                data.extend_from_slice(v);
            }
            inputs.push(Tensor::new(samples.len(), info.dim, data)?);
        }
        Ok(Batch {
            inputs,
            labels: samples.iter().filter_map(|s| s.emotion).collect(),
            targets: samples.iter().filter_map(|s| s.valence).collect(),
        })
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, inputs: &[Var]) -> Result<ModelNodes> {
        let fused = self.encoder.forward(g, p, inputs)?;
        let decoded = self.decoder.forward(g, p, fused.fused)?;
        Ok(ModelNodes { fused, decoded })
    }

    pub fn loss(
        &self,
        g: &mut Graph,
        p: &Bound,
        decoded: &DecodedNodes,
        batch: &Batch,
        kind: LossKind,
    ) -> Result<LossNodes> {
        let rows = g.value(decoded.logits).rows();
        if batch.labels.len() != rows || batch.targets.len() != rows {
            return Err(Error::contract("training batch needs emotion and valence labels on every sample"));
        }
        let emotion = ce_loss(g, decoded.logits, &batch.labels)?;
        let valence = mse_loss(g, decoded.valence, &batch.targets)?;
        let total = match kind {
            LossKind::Uncertainty => {
                uncertainty_loss(g, emotion, valence, p.var(self.rho1), p.var(self.rho2))?
            }
            LossKind::FixedEqual => equal_loss(g, emotion, valence)?,
        };
        Ok(LossNodes {
            total,
            emotion,
            valence,
        })
    }

    /// Builds the full training objective on `batch` with `params` standing
    /// in for the stored tensors (used for gradient checks).
    pub fn objective(&self, g: &mut Graph, params: &[Var], batch: &Batch, kind: LossKind) -> Result<Var> {
        let p = self.store.bind_with(g, params)?;
        let inputs: Vec<Var> = batch.inputs.iter().map(|t| g.constant(t.clone())).collect();
        let nodes = self.forward(g, &p, &inputs)?;
        Ok(self.loss(g, &p, &nodes.decoded, batch, kind)?.total)
    }

    fn predict_chunk(&self, samples: &[FeatureSample]) -> Result<Vec<Prediction>> {
        let refs: Vec<&FeatureSample> = samples.iter().collect();
        let batch = self.batch(&refs)?;
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let inputs: Vec<Var> = batch.inputs.into_iter().map(|t| g.constant(t)).collect();
        let nodes = self.forward(&mut g, &p, &inputs)?;
        Ok(nodes.decoded.to_predictions(&g))
    }

    /// Inference over any number of samples; chunks run in parallel and
    /// results keep input order.
    pub fn predict(&self, samples: &[FeatureSample]) -> Result<Vec<Prediction>> {
        let chunks: Vec<Result<Vec<Prediction>>> = samples
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| self.predict_chunk(chunk))
            .collect();
        let mut out = Vec::with_capacity(samples.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Fused representation of one sample with every AFG's attention.
    pub fn fuse_sample(&self, sample: &FeatureSample) -> Result<FusedState> {
        let batch = self.batch(&[sample])?;
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let inputs: Vec<Var> = batch.inputs.into_iter().map(|t| g.constant(t)).collect();
        let nodes = self.encoder.forward(&mut g, &p, &inputs)?;
        Ok(FusedState {
            fused: g.value(nodes.fused).data().to_vec(),
            alphas: nodes
                .alphas
                .iter()
                .map(|(block, a)| AlphaRecord {
                    block: block.clone(),
                    weights: g.value(*a).data().to_vec(),
                })
                .collect(),
        })
    }
}
