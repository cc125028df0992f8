//! Attention-guided feature gathering (AFG) and the three fusion topologies
//! built from it.
//!
//! An AFG block projects each of its `N` inputs to a common width `D` with a
//! per-input affine map, scores projection `n` against column `n` of the
//! attention matrix, softmax-normalises the `N` scores, and returns the
//! attention-weighted average of the projections.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStrategy {
    /// One AFG over every stream.
    Parallel,
    /// One AFG per acoustic stream (that stream plus all visual streams),
    /// then one AFG over the audio-visual results.
    PerAcousticAv,
    /// Acoustic-only AFG first, then one AFG over the unified acoustic
    /// representation and the visual streams.
    IntraThenInter,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [
        FusionStrategy::Parallel,
        FusionStrategy::PerAcousticAv,
        FusionStrategy::IntraThenInter,
    ];

    pub fn number(self) -> u8 {
        match self {
            FusionStrategy::Parallel => 1,
            FusionStrategy::PerAcousticAv => 2,
            FusionStrategy::IntraThenInter => 3,
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionStrategy::Parallel => "parallel",
            FusionStrategy::PerAcousticAv => "per-acoustic-av",
            FusionStrategy::IntraThenInter => "intra-then-inter",
        })
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "parallel" => Ok(FusionStrategy::Parallel),
            "2" | "per-acoustic-av" => Ok(FusionStrategy::PerAcousticAv),
            "3" | "intra-then-inter" => Ok(FusionStrategy::IntraThenInter),
            other => Err(Error::config(format!("unknown fusion strategy {other:?}"))),
        }
    }
}

/// Partition of stream names into the two modalities.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityMap {
    #[serde(default)]
    pub acoustic: Vec<String>,
    #[serde(default)]
    pub visual: Vec<String>,
}

impl ModalityMap {
    /// Checks that the map covers `streams` exactly once each.
    pub fn check_covers(&self, streams: &[&str]) -> Result<()> {
        let mut tagged = BTreeSet::new();
        for name in self.acoustic.iter().chain(&self.visual) {
            if !tagged.insert(name.as_str()) {
                return Err(Error::config(format!("stream {name} tagged more than once")));
            }
        }
        for s in streams {
            if !tagged.contains(s) {
                return Err(Error::config(format!("modality map does not tag stream {s}")));
            }
        }
        if tagged.len() != streams.len() {
            let extra: Vec<_> = tagged.iter().filter(|t| !streams.contains(t)).collect();
            return Err(Error::config(format!("modality map names unknown streams {extra:?}")));
        }
        Ok(())
    }
}

/// Per-input dimension-align affine map `x A + b`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Affine {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        Affine {
            weight: store.add_xavier(format!("{name}.weight"), fan_in, fan_out, rng),
            bias: store.add_zeros(format!("{name}.bias"), 1, fan_out),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let xw = g.matmul(x, p.var(self.weight))?;
        g.add_row(xw, p.var(self.bias))
    }
}

/// Parameters of one AFG block.
#[derive(Debug, Clone)]
pub struct Afg {
    pub label: String,
    pub dim: usize,
    pub input_dims: Vec<usize>,
    pub align: Vec<Affine>,
    /// `D × N`.
    pub w_alpha: ParamId,
    /// `1 × N`.
    pub b_alpha: ParamId,
}

/// Graph nodes produced by one AFG block: the `B × D` fused output and the
/// `B × N` attention weights.
#[derive(Debug, Clone, Copy)]
pub struct AfgNodes {
    pub output: Var,
    pub alpha: Var,
}

impl Afg {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        label: &str,
        input_dims: &[usize],
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dims.is_empty() {
            return Err(Error::contract(format!("AFG {label} needs at least one input")));
        }
        let align = input_dims
            .iter()
            .enumerate()
            .map(|(n, &d)| Affine::new(store, &format!("{label}.align{n}"), d, dim, rng))
            .collect();
        let n = input_dims.len();
        Ok(Afg {
            label: label.to_string(),
            dim,
            input_dims: input_dims.to_vec(),
            align,
            w_alpha: store.add_xavier(format!("{label}.w_alpha"), dim, n, rng),
            b_alpha: store.add_zeros(format!("{label}.b_alpha"), 1, n),
        })
    }

    pub fn num_inputs(&self) -> usize {
        self.align.len()
    }

    /// Batched forward over `inputs`, each `B × d_n`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, inputs: &[Var]) -> Result<AfgNodes> {
        if inputs.is_empty() {
            return Err(Error::contract(format!("AFG {} called with no inputs", self.label)));
        }
        if inputs.len() != self.align.len() {
            return Err(Error::Dimension {
                op: "afg inputs",
                left: (self.align.len(), self.dim),
                right: (inputs.len(), self.dim),
            });
        }
        let batch = g.value(inputs[0]).rows();
        let mut projected = Vec::with_capacity(inputs.len());
        let mut scores = Vec::with_capacity(inputs.len());
        for (n, (x, affine)) in inputs.iter().zip(&self.align).enumerate() {
            if g.value(*x).shape() != (batch, self.input_dims[n]) {
                return Err(Error::Dimension {
                    op: "afg input",
                    left: (batch, self.input_dims[n]),
                    right: g.value(*x).shape(),
                });
            }
            let p_n = affine.forward(g, p, *x)?;
            let w_n = g.slice_cols(p.var(self.w_alpha), n, n + 1)?;
            scores.push(g.matmul(p_n, w_n)?);
            projected.push(p_n);
        }
        let scores = g.concat_cols(&scores)?;
        let scores = g.add_row(scores, p.var(self.b_alpha))?;
        let alpha = g.softmax_rows(scores);

        // Σ_n α_n p_n; the column of α is spread across D with a ones row.
        let ones = g.constant(Tensor::ones(1, self.dim));
        let mut output: Option<Var> = None;
        for (n, p_n) in projected.into_iter().enumerate() {
            let a_n = g.slice_cols(alpha, n, n + 1)?;
            let spread = g.matmul(a_n, ones)?;
            let term = g.mul(spread, p_n)?;
            output = Some(match output {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
        Ok(AfgNodes {
            output: output.expect("at least one input"),
            alpha,
        })
    }
}

#[derive(Debug, Clone)]
enum Wiring {
    Parallel {
        afg: Afg,
    },
    PerAcousticAv {
        branches: Vec<Afg>,
        top: Afg,
    },
    IntraThenInter {
        intra: Afg,
        inter: Afg,
    },
}

/// A fusion topology bound to a concrete stream layout.
#[derive(Debug, Clone)]
pub struct FusionEncoder {
    strategy: FusionStrategy,
    dim: usize,
    /// Indices into the stream order passed at construction.
    acoustic: Vec<usize>,
    visual: Vec<usize>,
    num_streams: usize,
    wiring: Wiring,
}

/// Graph nodes for one fused batch, with every AFG's attention weights.
#[derive(Debug, Clone)]
pub struct FusedNodes {
    pub fused: Var,
    pub alphas: Vec<(String, Var)>,
}

/// Attention weights of one AFG for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRecord {
    pub block: String,
    pub weights: Vec<f64>,
}

/// Fused vector of one sample plus the attention weights that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedState {
    pub fused: Vec<f64>,
    pub alphas: Vec<AlphaRecord>,
}

impl FusionEncoder {
    /// `streams` gives `(name, dim)` in the order batches will be supplied.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        strategy: FusionStrategy,
        streams: &[(String, usize)],
        modality: &ModalityMap,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("fusion width D must be positive"));
        }
        let names: Vec<&str> = streams.iter().map(|(n, _)| n.as_str()).collect();
        modality.check_covers(&names)?;
        let index_of = |n: &String| names.iter().position(|s| *s == n).expect("covered");
        let acoustic: Vec<usize> = modality.acoustic.iter().map(index_of).collect();
        let visual: Vec<usize> = modality.visual.iter().map(index_of).collect();
        let dims: Vec<usize> = streams.iter().map(|(_, d)| *d).collect();

        if strategy != FusionStrategy::Parallel && (acoustic.is_empty() || visual.is_empty()) {
            return Err(Error::config(format!(
                "strategy {strategy} needs at least one acoustic and one visual stream"
            )));
        }
        if streams.is_empty() {
            return Err(Error::config("no feature streams"));
        }

        let visual_dims: Vec<usize> = visual.iter().map(|&i| dims[i]).collect();
        let wiring = match strategy {
            FusionStrategy::Parallel => Wiring::Parallel {
                afg: Afg::new(store, "fusion", &dims, dim, rng)?,
            },
            FusionStrategy::PerAcousticAv => {
                let mut branches = Vec::with_capacity(acoustic.len());
                for (j, &a) in acoustic.iter().enumerate() {
                    let mut input_dims = vec![dims[a]];
                    input_dims.extend_from_slice(&visual_dims);
                    branches.push(Afg::new(store, &format!("av{j}"), &input_dims, dim, rng)?);
                }
                let top = Afg::new(store, "top", &vec![dim; acoustic.len()], dim, rng)?;
                Wiring::PerAcousticAv { branches, top }
            }
            FusionStrategy::IntraThenInter => {
                let acoustic_dims: Vec<usize> = acoustic.iter().map(|&i| dims[i]).collect();
                let intra = Afg::new(store, "intra", &acoustic_dims, dim, rng)?;
                let mut inter_dims = vec![dim];
                inter_dims.extend_from_slice(&visual_dims);
                let inter = Afg::new(store, "inter", &inter_dims, dim, rng)?;
                Wiring::IntraThenInter { intra, inter }
            }
        };
        Ok(FusionEncoder {
            strategy,
            dim,
            acoustic,
            visual,
            num_streams: streams.len(),
            wiring,
        })
    }

    pub fn strategy(&self) -> FusionStrategy {
        self.strategy
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Every AFG block in evaluation order.
    pub fn blocks(&self) -> Vec<&Afg> {
        match &self.wiring {
            Wiring::Parallel { afg } => vec![afg],
            Wiring::PerAcousticAv { branches, top } => {
                branches.iter().chain(std::iter::once(top)).collect()
            }
            Wiring::IntraThenInter { intra, inter } => vec![intra, inter],
        }
    }

    /// Fuses a batch; `streams[i]` is the `B × d_i` matrix of stream `i`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, streams: &[Var]) -> Result<FusedNodes> {
        if streams.len() != self.num_streams {
            return Err(Error::contract(format!(
                "encoder expects {} streams, got {}",
                self.num_streams,
                streams.len()
            )));
        }
        let visual: Vec<Var> = self.visual.iter().map(|&i| streams[i]).collect();
        let mut alphas = Vec::new();
        let fused = match &self.wiring {
            Wiring::Parallel { afg } => {
                let out = afg.forward(g, p, streams)?;
                alphas.push((afg.label.clone(), out.alpha));
                out.output
            }
            Wiring::PerAcousticAv { branches, top } => {
                let mut av = Vec::with_capacity(branches.len());
                for (branch, &a) in branches.iter().zip(&self.acoustic) {
                    let mut inputs = vec![streams[a]];
                    inputs.extend_from_slice(&visual);
                    let out = branch.forward(g, p, &inputs)?;
                    alphas.push((branch.label.clone(), out.alpha));
                    av.push(out.output);
                }
                let out = top.forward(g, p, &av)?;
                alphas.push((top.label.clone(), out.alpha));
                out.output
            }
            Wiring::IntraThenInter { intra, inter } => {
                let acoustic: Vec<Var> = self.acoustic.iter().map(|&i| streams[i]).collect();
                let unified = intra.forward(g, p, &acoustic)?;
                alphas.push((intra.label.clone(), unified.alpha));
                let mut inputs = vec![unified.output];
                inputs.extend_from_slice(&visual);
                let out = inter.forward(g, p, &inputs)?;
                alphas.push((inter.label.clone(), out.alpha));
                out.output
            }
        };
        Ok(FusedNodes { fused, alphas })
    }
}
