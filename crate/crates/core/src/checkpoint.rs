//! Checkpoint container shared by the GAN and the classifier.
//!
//! Layout of a checkpoint directory:
//!
//! ```text
//! meta.json                 kind, iteration, config snapshot, extra records
//! <store>/params/<name>.bin one blob per trainable tensor
//! <store>/buffers/<name>.bin
//! <optim>/m/<name>.bin      Adam first moments
//! <optim>/v/<name>.bin      Adam second moments
//! ```
//!
//! Blobs carry a shape header and little-endian `f64` payload, so a
//! save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use switchgan_tensor::io::{load_named, save_named};
use switchgan_tensor::{Adam, ParamStore};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimMeta {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: String,
    pub iteration: u64,
    pub config: serde_json::Value,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub optimizers: BTreeMap<String, OptimMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub stores: BTreeMap<String, ParamStore>,
    pub optimizers: BTreeMap<String, Adam>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, iteration: u64, config: serde_json::Value) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                kind: kind.into(),
                iteration,
                config,
                extra: BTreeMap::new(),
                optimizers: BTreeMap::new(),
            },
            stores: BTreeMap::new(),
            optimizers: BTreeMap::new(),
        }
    }

    pub fn store(&self, name: &str) -> Result<&ParamStore> {
        self.stores
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter set `{name}`")))
    }

    pub fn optimizer(&self, name: &str) -> Result<&Adam> {
        self.optimizers
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing optimiser state `{name}`")))
    }

    pub fn extra<T: for<'de> Deserialize<'de>>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .extra
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing record `{key}`")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("record `{key}`: {e}")))
    }

    pub fn set_extra<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).expect("serialisable record");
        self.meta.extra.insert(key.to_string(), v);
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, store) in &self.stores {
            save_named(&dir.join(name).join("params"), store.params())?;
            save_named(&dir.join(name).join("buffers"), store.buffers())?;
        }
        let mut meta = self.meta.clone();
        for (name, opt) in &self.optimizers {
            save_named(&dir.join(name).join("m"), &opt.m)?;
            save_named(&dir.join(name).join("v"), &opt.v)?;
            meta.optimizers.insert(
                name.clone(),
                OptimMeta { lr: opt.lr, beta1: opt.beta1, beta2: opt.beta2, eps: opt.eps, step: opt.step },
            );
        }
        let path = dir.join("meta.json");
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads a checkpoint; `stores` names the parameter sets to expect.
    pub fn load(dir: &Path, stores: &[&str]) -> Result<Self> {
        let path = dir.join("meta.json");
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut meta: CheckpointMeta =
            serde_json::from_str(&text).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        let mut out = BTreeMap::new();
        for &name in stores {
            let base = dir.join(name);
            if !base.join("params").is_dir() {
                return Err(Error::Checkpoint(format!("{}: missing parameter set `{name}`", dir.display())));
            }
            let params = load_named(&base.join("params"))?;
            let buffers = load_named(&base.join("buffers"))?;
            out.insert(name.to_string(), ParamStore::from_parts(params, buffers));
        }
        let mut optimizers = BTreeMap::new();
        for (name, om) in std::mem::take(&mut meta.optimizers) {
            let base = dir.join(&name);
            let mut opt = Adam::new(om.lr, om.beta1, om.beta2);
            opt.eps = om.eps;
            opt.step = om.step;
            opt.m = load_named(&base.join("m"))?;
            opt.v = load_named(&base.join("v"))?;
            optimizers.insert(name, opt);
        }
        Ok(Checkpoint { meta, stores: out, optimizers })
    }
}

/// Checkpoint subdirectories `iter_XXXXXXX` under `root`, sorted by iteration.
pub fn list_iteration_dirs(root: &Path) -> Result<Vec<(u64, std::path::PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(num) = name.strip_prefix("iter_") {
            if let Ok(it) = num.parse::<u64>() {
                if path.join("meta.json").exists() {
                    out.push((it, path));
                }
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn iteration_dir_name(iteration: u64) -> String {
    format!("iter_{iteration:07}")
}
