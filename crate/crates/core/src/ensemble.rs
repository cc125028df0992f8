//! Decision-level fusion: convex combinations of several systems'
//! emotion posteriors and valence outputs.

use std::collections::{BTreeSet, HashMap};

use crate::data::FeatureSample;
use crate::decoders::{argmax, PredictionRecord};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

const SIMPLEX_TOL: f64 = 1e-9;

/// Members aligned to a common sample order (member 0's order).
#[derive(Debug, Clone)]
pub struct AlignedMembers {
    ids: Vec<String>,
    classes: usize,
    /// `members[j][i]` is member j's record for `ids[i]`.
    members: Vec<Vec<PredictionRecord>>,
}

impl AlignedMembers {
    pub fn new(members: &[Vec<PredictionRecord>]) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::contract("ensemble needs at least one member"))?;
        if first.is_empty() {
            return Err(Error::contract("ensemble member 0 has no predictions"));
        }
        let classes = first[0].probs.len();
        let ids: Vec<String> = first.iter().map(|r| r.id.clone()).collect();
        let id_set: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        if id_set.len() != ids.len() {
            return Err(Error::Alignment("member 0 repeats sample ids".into()));
        }

        let mut aligned = Vec::with_capacity(members.len());
        for (j, member) in members.iter().enumerate() {
            let by_id: HashMap<&str, &PredictionRecord> =
                member.iter().map(|r| (r.id.as_str(), r)).collect();
            let member_ids: BTreeSet<&str> = by_id.keys().copied().collect();
            if member_ids != id_set || by_id.len() != member.len() {
                let missing: Vec<_> = id_set.difference(&member_ids).take(5).collect();
                let extra: Vec<_> = member_ids.difference(&id_set).take(5).collect();
                return Err(Error::Alignment(format!(
                    "member {j} does not cover the same ids: missing {missing:?}, unexpected {extra:?}"
                )));
            }
            let mut rows = Vec::with_capacity(ids.len());
            for id in &ids {
                let r = by_id[id.as_str()];
                if r.probs.len() != classes {
                    return Err(Error::Alignment(format!(
                        "member {j} record {id} has {} classes, expected {classes}",
                        r.probs.len()
                    )));
                }
                rows.push(r.clone());
            }
            aligned.push(rows);
        }
        Ok(AlignedMembers {
            ids,
            classes,
            members: aligned,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn member(&self, j: usize) -> &[PredictionRecord] {
        &self.members[j]
    }

    pub fn fuse(&self, weights: &[f64]) -> Result<Vec<PredictionRecord>> {
        check_simplex(weights, self.members.len())?;
        Ok((0..self.ids.len())
            .map(|i| {
                let mut probs = vec![0.0; self.classes];
                let mut valence = 0.0;
                for (member, &k) in self.members.iter().zip(weights) {
                    let r = &member[i];
                    for (acc, p) in probs.iter_mut().zip(&r.probs) {
                        *acc += k * p;
                    }
                    valence += k * r.valence;
                }
                PredictionRecord {
                    id: self.ids[i].clone(),
                    probs,
                    valence,
                }
            })
            .collect())
    }
}

fn check_simplex(weights: &[f64], members: usize) -> Result<()> {
    if weights.len() != members {
        return Err(Error::contract(format!(
            "{} weights for {members} members",
            weights.len()
        )));
    }
    if weights.iter().any(|&k| !(k >= 0.0)) {
        return Err(Error::contract("ensemble weights must be non-negative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::contract(format!("ensemble weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Weighted average of member posteriors and valences, in member 0's
/// sample order. The fused class of a record is `argmax(probs)`.
pub fn fuse_predictions(members: &[Vec<PredictionRecord>], weights: &[f64]) -> Result<Vec<PredictionRecord>> {
    AlignedMembers::new(members)?.fuse(weights)
}

/// Scores records against labelled samples matched by id.
pub fn score_records(
    records: &[PredictionRecord],
    labels: &[FeatureSample],
    mse_weight: f64,
) -> Result<MetricsReport> {
    let first = records
        .first()
        .ok_or_else(|| Error::contract("no predictions to score"))?;
    let classes = first.probs.len();
    let by_id: HashMap<&str, &FeatureSample> = labels.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut truth = Vec::with_capacity(records.len());
    let mut vtrue = Vec::with_capacity(records.len());
    for r in records {
        let s = by_id
            .get(r.id.as_str())
            .ok_or_else(|| Error::Alignment(format!("no labels for prediction {}", r.id)))?;
        match (s.emotion, s.valence) {
            (Some(e), Some(v)) => {
                truth.push(e);
                vtrue.push(v);
            }
            _ => return Err(Error::contract(format!("sample {} is missing labels", s.id))),
        }
    }
    let predicted: Vec<usize> = records.iter().map(|r| argmax(&r.probs)).collect();
    let vpred: Vec<f64> = records.iter().map(|r| r.valence).collect();
    MetricsReport::new(&truth, &predicted, &vpred, &vtrue, classes, mse_weight)
}

/// Every weight vector on the simplex grid with spacing `step`, in
/// descending lexicographic order (so `(1, 0, ..)` comes first).
pub fn simplex_grid(members: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    if members == 0 {
        return Err(Error::contract("ensemble needs at least one member"));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::contract(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round();
    if ((1.0 / step) - n).abs() > 1e-9 {
        return Err(Error::contract(format!("grid step {step} does not divide 1")));
    }
    let n = n as usize;
    let mut out = Vec::new();
    let mut parts = vec![0usize; members];
    fn fill(pos: usize, left: usize, parts: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<f64>>) {
        if pos == parts.len() - 1 {
            parts[pos] = left;
            out.push(parts.iter().map(|&p| p as f64 / n as f64).collect());
            return;
        }
        for take in (0..=left).rev() {
            parts[pos] = take;
            fill(pos + 1, left - take, parts, n, out);
        }
    }
    fill(0, n, &mut parts, n, &mut out);
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct WeightSearch {
    pub weights: Vec<f64>,
    pub report: MetricsReport,
    pub candidates: usize,
}

/// Exhaustive grid search for the weights maximising the combined score on
/// `labels`. Ties keep the earliest candidate in [`simplex_grid`] order.
pub fn search_weights(
    members: &[Vec<PredictionRecord>],
    labels: &[FeatureSample],
    step: f64,
    mse_weight: f64,
) -> Result<WeightSearch> {
    let aligned = AlignedMembers::new(members)?;
    let grid = simplex_grid(aligned.len(), step)?;
    let mut best: Option<(Vec<f64>, MetricsReport)> = None;
    for weights in &grid {
        let fused = aligned.fuse(weights)?;
        let report = score_records(&fused, labels, mse_weight)?;
        if best.as_ref().map_or(true, |(_, b)| report.com > b.com) {
            best = Some((weights.clone(), report));
        }
    }
    let (weights, report) = best.expect("grid is never empty");
    Ok(WeightSearch {
        weights,
        report,
        candidates: grid.len(),
    })
}
