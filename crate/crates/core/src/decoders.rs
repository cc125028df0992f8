//! Emotion/valence decoding heads.
//!
//! The joint head feeds the emotion logits through `tanh(ẽ W_ev + b_ev)` to
//! obtain a second valence estimate and mixes it with the direct estimate
//! through `W_vv`. The baseline head is the same pair of linear heads
//! without that coupling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::data::{read_jsonl, write_jsonl};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderKind {
    Jdev,
    Baseline,
}

impl DecoderKind {
    pub const ALL: [DecoderKind; 2] = [DecoderKind::Jdev, DecoderKind::Baseline];
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Jdev => "jdev",
            DecoderKind::Baseline => "baseline",
        })
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jdev" => Ok(DecoderKind::Jdev),
            "baseline" => Ok(DecoderKind::Baseline),
            other => Err(Error::config(format!("unknown decoder {other:?}"))),
        }
    }
}

/// Parameter ids shared by both heads.
#[derive(Debug, Clone)]
pub struct EmotionValenceHeads {
    /// `D × C`, `1 × C`.
    pub w_e: ParamId,
    pub b_e: ParamId,
    /// `D × 1`, `1 × 1`.
    pub w_v: ParamId,
    pub b_v: ParamId,
}

#[derive(Debug, Clone)]
pub struct JdevParams {
    pub heads: EmotionValenceHeads,
    /// `C × 1`, `1 × 1`.
    pub w_ev: ParamId,
    pub b_ev: ParamId,
    /// `2 × 1`, `1 × 1`.
    pub w_vv: ParamId,
    pub b_vv: ParamId,
}

#[derive(Debug, Clone)]
pub enum Decoder {
    Jdev(JdevParams),
    Baseline(EmotionValenceHeads),
}

/// Graph nodes of a decoded batch.
#[derive(Debug, Clone, Copy)]
pub struct DecodedNodes {
    /// `B × C` emotion logits ẽ.
    pub logits: Var,
    /// `B × C` posteriors ê.
    pub probs: Var,
    /// `B × 1` final valence v̂.
    pub valence: Var,
    /// `B × 1` direct estimate ṽ.
    pub direct_valence: Var,
    /// `B × 1` emotion-branch estimate ṽ^e (joint head only).
    pub emotion_valence: Option<Var>,
}

/// Decoder output for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub logits: Vec<f64>,
    pub valence: f64,
    pub direct_valence: f64,
    pub emotion_valence: Option<f64>,
}

impl Prediction {
    pub fn class(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Index of the largest entry, ties resolved to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classify(pred: &Prediction) -> usize {
    pred.class()
}

impl Decoder {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        kind: DecoderKind,
        dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let heads = EmotionValenceHeads {
            w_e: store.add_xavier("decoder.w_e", dim, classes, rng),
            b_e: store.add_zeros("decoder.b_e", 1, classes),
            w_v: store.add_xavier("decoder.w_v", dim, 1, rng),
            b_v: store.add_zeros("decoder.b_v", 1, 1),
        };
        match kind {
            DecoderKind::Baseline => Decoder::Baseline(heads),
            DecoderKind::Jdev => Decoder::Jdev(JdevParams {
                heads,
                w_ev: store.add_xavier("decoder.w_ev", classes, 1, rng),
                b_ev: store.add_zeros("decoder.b_ev", 1, 1),
                w_vv: store.add_xavier("decoder.w_vv", 2, 1, rng),
                b_vv: store.add_zeros("decoder.b_vv", 1, 1),
            }),
        }
    }

    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::Jdev(_) => DecoderKind::Jdev,
            Decoder::Baseline(_) => DecoderKind::Baseline,
        }
    }

    pub fn heads(&self) -> &EmotionValenceHeads {
        match self {
            Decoder::Jdev(p) => &p.heads,
            Decoder::Baseline(h) => h,
        }
    }

    /// Decodes a `B × D` fused batch.
    pub fn forward(&self, g: &mut Graph, p: &Bound, fused: Var) -> Result<DecodedNodes> {
        let heads = self.heads();
        let he = g.matmul(fused, p.var(heads.w_e))?;
        let logits = g.add_row(he, p.var(heads.b_e))?;
        let probs = g.softmax_rows(logits);
        let hv = g.matmul(fused, p.var(heads.w_v))?;
        let direct_valence = g.add_row(hv, p.var(heads.b_v))?;
        match self {
            Decoder::Baseline(_) => Ok(DecodedNodes {
                logits,
                probs,
                valence: direct_valence,
                direct_valence,
                emotion_valence: None,
            }),
            Decoder::Jdev(j) => {
                let ev = g.matmul(logits, p.var(j.w_ev))?;
                let ev = g.add_row(ev, p.var(j.b_ev))?;
                let emotion_valence = g.tanh(ev);
                let both = g.concat_cols(&[direct_valence, emotion_valence])?;
                let v = g.matmul(both, p.var(j.w_vv))?;
                let valence = g.add_row(v, p.var(j.b_vv))?;
                Ok(DecodedNodes {
                    logits,
                    probs,
                    valence,
                    direct_valence,
                    emotion_valence: Some(emotion_valence),
                })
            }
        }
    }

    /// Decodes one fused vector outside of any training graph.
    pub fn predict(&self, store: &ParamStore, fused: &[f64]) -> Result<Prediction> {
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let h = g.constant(Tensor::row(fused.to_vec()));
        let nodes = self.forward(&mut g, &p, h)?;
        Ok(nodes.to_predictions(&g).remove(0))
    }
}

impl DecodedNodes {
    /// Splits the batch into per-sample predictions.
    pub fn to_predictions(&self, g: &Graph) -> Vec<Prediction> {
        let (probs, logits) = (g.value(self.probs), g.value(self.logits));
        let (valence, direct) = (g.value(self.valence), g.value(self.direct_valence));
        let emo = self.emotion_valence.map(|v| g.value(v));
        (0..probs.rows())
            .map(|r| Prediction {
                probs: probs.row_slice(r).to_vec(),
                logits: logits.row_slice(r).to_vec(),
                valence: valence.get(r, 0),
                direct_valence: direct.get(r, 0),
                emotion_valence: emo.map(|t| t.get(r, 0)),
            })
            .collect()
    }
}

/// Exported prediction line: `{"id", "probs", "valence"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub probs: Vec<f64>,
    pub valence: f64,
}

impl PredictionRecord {
    pub fn class(&self) -> usize {
        argmax(&self.probs)
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let records: Vec<PredictionRecord> = read_jsonl(path)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    let c = records[0].probs.len();
    for (i, r) in records.iter().enumerate() {
        if r.probs.len() != c {
            return Err(Error::Schema {
                line: i + 1,
                detail: format!("record {} has {} probabilities, expected {c}", r.id, r.probs.len()),
            });
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(kind: DecoderKind, dim: usize, classes: usize) -> (ParamStore, Decoder) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dec = Decoder::new(&mut store, kind, dim, classes, &mut rng);
        for t in store.tensors_mut() {
            t.data_mut().fill(0.0);
        }
        (store, dec)
    }

    #[test]
    fn zero_parameters_give_uniform_and_zero_valence() {
        for kind in DecoderKind::ALL {
            let (store, dec) = zeroed(kind, 4, 3);
            let p = dec.predict(&store, &[0.3, -1.0, 2.0, 0.5]).unwrap();
            for q in &p.probs {
                assert!((q - 1.0 / 3.0).abs() < 1e-15);
            }
            assert_eq!(p.valence, 0.0);
            if kind == DecoderKind::Jdev {
                assert_eq!(p.emotion_valence, Some(0.0));
            }
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let (store, dec) = zeroed(DecoderKind::Jdev, 4, 3);
        assert!(matches!(dec.predict(&store, &[1.0, 2.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn prediction_file_rejects_ragged_probs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"probs\":[0.5,0.5],\"valence\":0}\n{\"id\":\"b\",\"probs\":[1],\"valence\":0}\n",
        )
        .unwrap();
        assert!(matches!(read_predictions(&path), Err(Error::Schema { line: 2, .. })));
    }
}
