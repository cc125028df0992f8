//! Training objectives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// How the emotion and valence losses are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Trainable uncertainty weighting.
    Uncertainty,
    /// Plain `L_e + L_v`.
    FixedEqual,
}

impl LossKind {
    pub const ALL: [LossKind; 2] = [LossKind::Uncertainty, LossKind::FixedEqual];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Uncertainty => "uncertainty",
            LossKind::FixedEqual => "fixed-equal",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncertainty" => Ok(LossKind::Uncertainty),
            "fixed-equal" => Ok(LossKind::FixedEqual),
            other => Err(Error::config(format!("unknown loss {other:?}"))),
        }
    }
}

/// Mean cross-entropy of `B × C` logits against class labels.
pub fn ce_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (b, c) = g.value(logits).shape();
    if labels.is_empty() || b == 0 {
        return Err(Error::contract("cross-entropy over an empty batch"));
    }
    if labels.len() != b {
        return Err(Error::Dimension {
            op: "ce_loss",
            left: (b, c),
            right: (labels.len(), 1),
        });
    }
    let mut onehot = Tensor::zeros(b, c);
    for (r, &label) in labels.iter().enumerate() {
        if label >= c {
            return Err(Error::contract(format!("label {label} outside {c} classes")));
        }
        onehot.set(r, label, 1.0);
    }
    let logp = g.log_softmax_rows(logits);
    let mask = g.constant(onehot);
    let picked = g.mul(logp, mask)?;
    let total = g.sum(picked);
    Ok(g.scale(total, -1.0 / b as f64))
}

/// Mean squared error of a `B × 1` prediction column.
pub fn mse_loss(g: &mut Graph, predictions: Var, targets: &[f64]) -> Result<Var> {
    let shape = g.value(predictions).shape();
    if targets.is_empty() || shape.0 == 0 {
        return Err(Error::contract("mse over an empty batch"));
    }
    if shape != (targets.len(), 1) {
        return Err(Error::Dimension {
            op: "mse_loss",
            left: shape,
            right: (targets.len(), 1),
        });
    }
    let t = g.constant(Tensor::column(targets.to_vec()));
    let diff = g.sub(predictions, t)?;
    let sq = g.mul(diff, diff)?;
    g.mean(sq)
}

/// Log-parametrised uncertainty weights, `δ_j = exp(ρ_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyWeights {
    pub rho1: f64,
    pub rho2: f64,
}

impl Default for UncertaintyWeights {
    fn default() -> Self {
        UncertaintyWeights { rho1: 0.0, rho2: 0.0 }
    }
}

impl UncertaintyWeights {
    pub fn from_deltas(delta1: f64, delta2: f64) -> Self {
        UncertaintyWeights {
            rho1: delta1.ln(),
            rho2: delta2.ln(),
        }
    }

    pub fn delta1(&self) -> f64 {
        self.rho1.exp()
    }

    pub fn delta2(&self) -> f64 {
        self.rho2.exp()
    }

    /// `L_e/δ₁² + L_v/(2δ₂²) + ln(1+δ₁) + ln(1+δ₂)`.
    pub fn value(&self, loss_e: f64, loss_v: f64) -> f64 {
        let (d1, d2) = (self.delta1(), self.delta2());
        loss_e / (d1 * d1) + loss_v / (2.0 * d2 * d2) + d1.ln_1p() + d2.ln_1p()
    }
}

/// Graph form of [`UncertaintyWeights::value`]; `rho1`/`rho2` are 1×1 nodes.
pub fn uncertainty_loss(g: &mut Graph, loss_e: Var, loss_v: Var, rho1: Var, rho2: Var) -> Result<Var> {
    for (name, v) in [("L_e", loss_e), ("L_v", loss_v), ("rho1", rho1), ("rho2", rho2)] {
        if g.value(v).shape() != (1, 1) {
            return Err(Error::contract(format!("{name} must be a 1x1 node")));
        }
    }
    // 1/δ² = exp(-2ρ)
    let inv1 = {
        let r = g.scale(rho1, -2.0);
        g.exp(r)
    };
    let inv2 = {
        let r = g.scale(rho2, -2.0);
        g.exp(r)
    };
    let term_e = g.mul(inv1, loss_e)?;
    let term_v = g.mul(inv2, loss_v)?;
    let term_v = g.scale(term_v, 0.5);
    let reg1 = {
        let d = g.exp(rho1);
        let d = g.add_scalar(d, 1.0);
        g.log(d)?
    };
    let reg2 = {
        let d = g.exp(rho2);
        let d = g.add_scalar(d, 1.0);
        g.log(d)?
    };
    let a = g.add(term_e, term_v)?;
    let b = g.add(reg1, reg2)?;
    g.add(a, b)
}

/// Unweighted `L_e + L_v`.
pub fn equal_loss(g: &mut Graph, loss_e: Var, loss_v: Var) -> Result<Var> {
    g.add(loss_e, loss_v)
}
