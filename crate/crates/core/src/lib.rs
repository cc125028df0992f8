//! Hierarchical audio-visual feature fusion with joint emotion/valence
//! decoding, on pre-extracted feature streams.
//!
//! The pieces, bottom-up:
//!
//! * [`autodiff`]: a small reverse-mode tape over dense `f64` matrices.
//! * [`data`]: the feature-record format and a class-conditional synthetic
//!   generator.
//! * [`fusion`]: attention-guided feature gathering and the three fusion
//!   topologies.
//! * [`decoders`]: joint and baseline emotion/valence heads.
//! * [`loss`] and [`metrics`]: training objectives and evaluation scores.
//! * [`train`]: Adam training with best-validation model selection.
//! * [`ensemble`]: posterior-level fusion of several trained systems.

pub mod autodiff;
pub mod checks;
pub mod data;
pub mod decoders;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod train;

pub use autodiff::{Graph, Tensor, Var};
pub use data::{Dataset, DatasetManifest, FeatureSample, SynthSpec};
pub use decoders::{DecoderKind, Prediction, PredictionRecord};
pub use error::{Error, ErrorClass, Result};
pub use fusion::{FusedState, FusionStrategy, ModalityMap};
pub use loss::{LossKind, UncertaintyWeights};
pub use metrics::MetricsReport;
pub use model::{FusionModel, ModelSpec};
pub use train::{Checkpoint, TrainConfig};
