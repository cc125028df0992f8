//! Feature datasets: the line-oriented record format, validation, synthetic
//! generation from a class-conditional valence mixture, and splitting.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One video segment: named feature streams plus optional labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSample {
    pub id: String,
    pub streams: BTreeMap<String, Vec<f64>>,
    pub emotion: Option<usize>,
    pub valence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Streams in canonical (sorted) order.
    pub streams: Vec<StreamInfo>,
    pub num_classes: usize,
    pub samples: usize,
    pub has_emotion: bool,
    pub has_valence: bool,
}

impl DatasetManifest {
    pub fn stream_names(&self) -> Vec<&str> {
        self.streams.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn stream_dim(&self, name: &str) -> Option<usize> {
        self.streams.iter().find(|s| s.name == name).map(|s| s.dim)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<FeatureSample>,
}

fn stream_layout(sample: &FeatureSample) -> Vec<StreamInfo> {
    sample
        .streams
        .iter()
        .map(|(name, v)| StreamInfo {
            name: name.clone(),
            dim: v.len(),
        })
        .collect()
}

fn check_sample(
    sample: &FeatureSample,
    layout: &[StreamInfo],
    num_classes: usize,
    line: usize,
) -> Result<()> {
    if sample.streams.len() != layout.len() {
        return Err(Error::Schema {
            line,
            detail: format!(
                "sample {} has {} streams, expected {}",
                sample.id,
                sample.streams.len(),
                layout.len()
            ),
        });
    }
    for info in layout {
        let values = sample.streams.get(&info.name).ok_or_else(|| Error::Schema {
            line,
            detail: format!("sample {} is missing stream {}", sample.id, info.name),
        })?;
        if values.len() != info.dim {
            return Err(Error::Schema {
                line,
                detail: format!(
                    "stream {} has length {}, expected {}",
                    info.name,
                    values.len(),
                    info.dim
                ),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema {
                line,
                detail: format!("stream {} contains a non-finite value", info.name),
            });
        }
    }
    if let Some(e) = sample.emotion {
        if e >= num_classes {
            return Err(Error::Label {
                line,
                emotion: e,
                classes: num_classes,
            });
        }
    }
    Ok(())
}

/// Validates in-memory samples the same way [`load_dataset`] validates a file.
pub fn validate(samples: Vec<FeatureSample>, num_classes: usize) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::config("a dataset needs at least 2 classes"));
    }
    let first = samples
        .first()
        .ok_or_else(|| Error::contract("dataset has no samples"))?;
    let layout = stream_layout(first);
    if layout.is_empty() {
        return Err(Error::Schema {
            line: 1,
            detail: "record has no feature streams".into(),
        });
    }
    for (i, s) in samples.iter().enumerate() {
        check_sample(s, &layout, num_classes, i + 1)?;
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            streams: layout,
            num_classes,
            samples: samples.len(),
            has_emotion: samples.iter().all(|s| s.emotion.is_some()),
            has_valence: samples.iter().all(|s| s.valence.is_some()),
        },
        samples,
    })
}

/// Reads a newline-delimited record file. Blank lines are ignored; line
/// numbers in errors are 1-based physical lines.
pub fn load_dataset(path: &Path, num_classes: usize) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::config("a dataset needs at least 2 classes"));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    let mut layout: Option<Vec<StreamInfo>> = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: FeatureSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            detail: e.to_string(),
        })?;
        let layout = layout.get_or_insert_with(|| stream_layout(&sample));
        if layout.is_empty() {
            return Err(Error::Schema {
                line: line_no,
                detail: "record has no feature streams".into(),
            });
        }
        check_sample(&sample, layout, num_classes, line_no)?;
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset(path.to_path_buf()));
    }
    validate(samples, num_classes)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(records)
}

pub fn write_dataset(path: &Path, samples: &[FeatureSample]) -> Result<()> {
    write_jsonl(path, samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthStream {
    pub name: String,
    pub dim: usize,
}

/// Parameters of the class-conditional generator: `e ~ priors`,
/// `v = mu_e + N(0, sigma^2)`, each stream = class mean + `N(0, sigma_f^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    /// Defaults to uniform.
    #[serde(default)]
    pub priors: Option<Vec<f64>>,
    /// Defaults to equally spaced values in [-1, 1].
    #[serde(default)]
    pub valence_means: Option<Vec<f64>>,
    pub valence_sigma: f64,
    pub feature_sigma: f64,
    pub streams: Vec<SynthStream>,
    /// Explicit class means, `stream name -> one vector per class`. Streams
    /// not listed get means drawn from `N(0, mean_scale^2)`.
    #[serde(default)]
    pub class_means: Option<BTreeMap<String, Vec<Vec<f64>>>>,
    #[serde(default = "default_mean_scale")]
    pub mean_scale: f64,
    pub samples: usize,
    pub seed: u64,
}

fn default_mean_scale() -> f64 {
    1.0
}

/// Equally spaced points covering [-1, 1].
pub fn spaced_valence_means(classes: usize) -> Vec<f64> {
    if classes == 1 {
        return vec![0.0];
    }
    (0..classes)
        .map(|k| -1.0 + 2.0 * k as f64 / (classes - 1) as f64)
        .collect()
}

/// A [`SynthSpec`] with every default filled in and checked.
#[derive(Debug, Clone)]
pub struct ResolvedSynth {
    pub priors: Vec<f64>,
    pub valence_means: Vec<f64>,
    /// `class_means[stream][class]`, streams in sorted-name order.
    pub class_means: BTreeMap<String, Vec<Vec<f64>>>,
}

impl SynthSpec {
    pub fn resolve(&self) -> Result<ResolvedSynth> {
        let c = self.classes;
        if c < 2 {
            return Err(Error::config("synthetic spec needs at least 2 classes"));
        }
        let priors = match &self.priors {
            Some(p) => {
                if p.len() != c {
                    return Err(Error::config(format!("{} priors for {c} classes", p.len())));
                }
                if p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return Err(Error::config("priors must be non-negative and sum to 1"));
                }
                p.clone()
            }
            None => vec![1.0 / c as f64; c],
        };
        let valence_means = match &self.valence_means {
            Some(m) if m.len() != c => {
                return Err(Error::config(format!("{} valence means for {c} classes", m.len())))
            }
            Some(m) => m.clone(),
            None => spaced_valence_means(c),
        };
        if !(self.valence_sigma >= 0.0) || !(self.feature_sigma >= 0.0) || !(self.mean_scale >= 0.0)
        {
            return Err(Error::config("noise scales must be non-negative"));
        }
        if self.streams.is_empty() {
            return Err(Error::config("synthetic spec needs at least one stream"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.streams {
            if s.dim == 0 || !seen.insert(&s.name) {
                return Err(Error::config(format!(
                    "stream {} is duplicated or has zero dimension",
                    s.name
                )));
            }
        }

        let given = self.class_means.clone().unwrap_or_default();
        for name in given.keys() {
            if !seen.contains(name) {
                return Err(Error::config(format!("class means given for unknown stream {name}")));
            }
        }
        // Means come from their own stream so that sample draws do not shift
        // when explicit means are supplied for some streams.
        let mut mean_rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6d65_616e_7321);
        let mut class_means = BTreeMap::new();
        for s in &self.streams {
            let drawn: Vec<Vec<f64>> = (0..c)
                .map(|_| {
                    (0..s.dim)
                        .map(|_| self.mean_scale * mean_rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect();
            let means = match given.get(&s.name) {
                Some(m) => {
                    if m.len() != c || m.iter().any(|v| v.len() != s.dim) {
                        return Err(Error::config(format!(
                            "class means for {} must be {c} vectors of length {}",
                            s.name, s.dim
                        )));
                    }
                    m.clone()
                }
                None => drawn,
            };
            class_means.insert(s.name.clone(), means);
        }
        Ok(ResolvedSynth {
            priors,
            valence_means,
            class_means,
        })
    }
}

/// Draws `spec.samples` labelled samples; a pure function of `spec`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<FeatureSample>> {
    let resolved = spec.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut cumulative = Vec::with_capacity(spec.classes);
    let mut acc = 0.0;
    for p in &resolved.priors {
        acc += p;
        cumulative.push(acc);
    }
    let width = spec.samples.to_string().len();
    let mut samples = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let u: f64 = rng.random();
        let emotion = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| resolved.priors.iter().rposition(|&p| p > 0.0).unwrap_or(0));
        let z: f64 = rng.sample(StandardNormal);
        let valence = resolved.valence_means[emotion] + spec.valence_sigma * z;
        let mut streams = BTreeMap::new();
        for (name, means) in &resolved.class_means {
            let v: Vec<f64> = means[emotion]
                .iter()
                .map(|m| m + spec.feature_sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            streams.insert(name.clone(), v);
        }
        samples.push(FeatureSample {
            id: format!("s{i:0width$}"),
            streams,
            emotion: Some(emotion),
            valence: Some(valence),
        });
    }
    Ok(samples)
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<FeatureSample>,
    pub val: Vec<FeatureSample>,
    pub stratified: bool,
}

/// Deterministic train/validation split, stratified by emotion when every
/// sample is labelled and every class has at least two members.
pub fn split(samples: &[FeatureSample], train_fraction: f64, seed: u64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::contract(format!(
            "train fraction {train_fraction} is outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let labelled = samples.iter().all(|s| s.emotion.is_some());
    if labelled {
        for (i, s) in samples.iter().enumerate() {
            by_class.entry(s.emotion.unwrap()).or_default().push(i);
        }
    }
    let stratified = labelled && by_class.values().all(|members| members.len() >= 2);
    if labelled && !stratified {
        log::warn!("a class has fewer than 2 samples; falling back to an unstratified split");
    }

    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    let groups: Vec<Vec<usize>> = if stratified {
        by_class.into_values().collect()
    } else {
        vec![(0..samples.len()).collect()]
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let n_train = (train_fraction * group.len() as f64).round() as usize;
        let (t, v) = group.split_at(n_train.min(group.len()));
        train_idx.extend_from_slice(t);
        val_idx.extend_from_slice(v);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    Ok(Split {
        train: train_idx.iter().map(|&i| samples[i].clone()).collect(),
        val: val_idx.iter().map(|&i| samples[i].clone()).collect(),
        stratified,
    })
}
