//! Run configuration files and flag precedence.

use std::fs;
use std::path::{Path, PathBuf};

use fusionkit::data::SynthSpec;
use fusionkit::{Error, Result, TrainConfig};
use serde::Deserialize;

pub const SEED_ENV: &str = "FUSIONKIT_SEED";

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataPaths,
    pub ensemble: EnsembleSpec,
    pub gradcheck: GradCheckSpec,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    /// Held-out share when no validation file is given.
    pub val_fraction: f64,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            train: None,
            val: None,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSpec {
    pub step: f64,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec { step: 0.05 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSpec {
    pub dim: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        let d = fusionkit::checks::GradCheckSuite::default();
        GradCheckSpec {
            dim: d.dim,
            classes: d.classes,
            seed: d.seed,
        }
    }
}

/// Seed from the environment, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Parses TOML or JSON (by extension) into a generic tree.
fn parse_tree(path: &Path) -> Result<serde_json::Value> {
    let text = read(path)?;
    if is_json(path) {
        serde_json::from_str(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    } else {
        let value: toml::Value =
            toml::from_str(&text).map_err(|e| Error::config(format!("{}: {}", path.display(), e.message())))?;
        serde_json::to_value(value).map_err(Error::from)
    }
}

fn from_tree<T: for<'de> Deserialize<'de>>(path: &Path, tree: serde_json::Value) -> Result<T> {
    serde_json::from_value(tree).map_err(|e| Error::config(format!("{}: {e}", path.display())))
}

/// Loads a run config; a missing `train.seed` falls back to the environment.
pub fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let env = env_seed()?;
    let Some(path) = path else {
        let mut config = RunConfig::default();
        if let Some(seed) = env {
            config.train.seed = seed;
        }
        return Ok(config);
    };
    let mut tree = parse_tree(path)?;
    if let (Some(seed), Some(obj)) = (env, tree.as_object_mut()) {
        let train = obj
            .entry("train")
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
        if let Some(t) = train.as_object_mut() {
            t.entry("seed").or_insert(serde_json::Value::from(seed));
        }
    }
    let mut config: RunConfig = from_tree(path, tree)?;
    // Relative data paths are resolved against the config file's directory.
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut config.data.train, &mut config.data.val].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(config)
}

/// Loads a synthetic-data spec; a missing `seed` falls back to the environment.
pub fn load_synth_spec(path: &Path, seed_flag: Option<u64>) -> Result<SynthSpec> {
    let mut tree = parse_tree(path)?;
    let obj = tree
        .as_object_mut()
        .ok_or_else(|| Error::config(format!("{}: expected a table of settings", path.display())))?;
    if let Some(seed) = seed_flag {
        obj.insert("seed".into(), seed.into());
    } else if !obj.contains_key("seed") {
        let seed = env_seed()?.ok_or_else(|| {
            Error::config(format!("{}: no seed given (set `seed`, --seed or {SEED_ENV})", path.display()))
        })?;
        obj.insert("seed".into(), seed.into());
    }
    let spec: SynthSpec = from_tree(path, tree)?;
    spec.resolve()?;
    Ok(spec)
}

/// Fails early when an input file is missing.
pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, format!("{what} file not found")),
        ))
    }
}
