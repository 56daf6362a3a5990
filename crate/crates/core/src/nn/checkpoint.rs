use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::nn::cnn::SmallCnn;
use crate::nn::layers::{Module, Param};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// On-disk parameter collection (`*.ckpt.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: Vec<ParamEntry>,
}

impl Checkpoint {
    pub fn from_params<'a>(params: impl IntoIterator<Item = &'a Param>) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params: params
                .into_iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.shape().to_vec(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_module(module: &impl Module) -> Self {
        Self::from_params(module.params())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        let mut seen = HashSet::new();
        for entry in &ckpt.params {
            if entry.shape.iter().product::<usize>() != entry.data.len() {
                return Err(Error::Checkpoint(format!(
                    "`{}`: shape {:?} does not match {} values",
                    entry.name,
                    entry.shape,
                    entry.data.len()
                )));
            }
            if !seen.insert(entry.name.as_str()) {
                return Err(Error::Checkpoint(format!(
                    "duplicate parameter `{}`",
                    entry.name
                )));
            }
        }
        Ok(ckpt)
    }

    pub fn shapes(&self) -> HashMap<String, Vec<usize>> {
        self.params
            .iter()
            .map(|e| (e.name.clone(), e.shape.clone()))
            .collect()
    }

    /// Overwrite every parameter of `module` from this checkpoint.
    ///
    /// The checkpoint must hold exactly the module's parameter names with
    /// matching shapes.
    pub fn load_into(&self, module: &mut impl Module) -> Result<()> {
        let entries: HashMap<&str, &ParamEntry> =
            self.params.iter().map(|e| (e.name.as_str(), e)).collect();
        let mut params = module.params_mut();
        for p in params.iter() {
            let entry = entries
                .get(p.name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if entry.shape != p.shape() {
                return Err(Error::Checkpoint(format!(
                    "`{}`: checkpoint shape {:?}, network shape {:?}",
                    p.name,
                    entry.shape,
                    p.shape()
                )));
            }
        }
        if entries.len() != params.len() {
            let known: HashSet<&str> = params.iter().map(|p| p.name.as_str()).collect();
            let extra: Vec<&str> = entries
                .keys()
                .filter(|n| !known.contains(*n))
                .copied()
                .collect();
            return Err(Error::Checkpoint(format!(
                "unexpected parameters {extra:?}"
            )));
        }
        for p in params.iter_mut() {
            p.set_data(entries[p.name.as_str()].data.clone())?;
        }
        Ok(())
    }

    /// A [`SmallCnn`] with the checkpoint's architecture and weights.
    pub fn to_small_cnn(&self) -> Result<SmallCnn> {
        let mut net = SmallCnn::from_param_shapes(&self.shapes())?;
        self.load_into(&mut net)?;
        Ok(net)
    }
}

pub fn save_checkpoint(module: &impl Module, path: &Path) -> Result<()> {
    write_atomic(path, &Checkpoint::from_module(module).to_json()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&read_to_string(path)?)
}
