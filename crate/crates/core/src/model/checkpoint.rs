//! Checkpoint container: a safetensors file with every parameter tensor and
//! normalization buffer stored as little-endian `f32`, plus string metadata:
//!
//! | key              | value                                   |
//! |------------------|-----------------------------------------|
//! | `format`         | `glyphsplit-checkpoint`                 |
//! | `format_version` | [`CHECKPOINT_FORMAT_VERSION`]           |
//! | `phase`          | `initial`, `pretrained` or `finetuned`  |
//! | `model_config`   | [`ModelConfig`] as JSON                 |
//! | `extra.<key>`    | free-form entries, e.g. the train config |

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "glyphsplit-checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Initial,
    Pretrained,
    Finetuned,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Initial => "initial",
            Phase::Pretrained => "pretrained",
            Phase::Finetuned => "finetuned",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "initial" => Ok(Phase::Initial),
            "pretrained" => Ok(Phase::Pretrained),
            "finetuned" => Ok(Phase::Finetuned),
            other => Err(Error::InvalidConfig(format!("unknown phase {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub phase: Phase,
    pub extra: BTreeMap<String, String>,
}

fn to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Rewrite the JSON header with sorted keys so equal checkpoints are
/// byte-identical; the metadata map is otherwise emitted in hash order.
/// The header keeps its length, so tensor offsets are unchanged.
fn canonical_header(mut bytes: Vec<u8>) -> Vec<u8> {
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte prefix")) as usize;
    let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + n]).expect("header is JSON");
    let sorted = serde_json::to_vec(&header).expect("header serializes");
    assert!(sorted.len() <= n, "canonical header grew");
    bytes[8..8 + sorted.len()].copy_from_slice(&sorted);
    bytes[8 + sorted.len()..8 + n].fill(b' ');
    bytes
}

impl Checkpoint {
    pub fn new(model: ModelParams, phase: Phase) -> Self {
        Self {
            model,
            phase,
            extra: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut owned: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (name, p) in self.model.params() {
            owned.push((name, p.shape.clone(), to_bytes(&p.value)));
        }
        for (name, b) in self.model.buffers() {
            owned.push((name, vec![b.len()], to_bytes(b)));
        }
        let views = owned
            .iter()
            .map(|(name, shape, bytes)| {
                TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| Error::ShapeMismatch(format!("{name}: {e:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), FORMAT_TAG.to_string());
        meta.insert("format_version".to_string(), CHECKPOINT_FORMAT_VERSION.to_string());
        meta.insert("phase".to_string(), self.phase.to_string());
        meta.insert(
            "model_config".to_string(),
            serde_json::to_string(&self.model.config).expect("config serializes"),
        );
        for (k, v) in &self.extra {
            meta.insert(format!("extra.{k}"), v.clone());
        }
        let bytes = safetensors::serialize(views, &Some(meta)).map_err(|e| Error::ShapeMismatch(format!("{e:?}")))?;
        Ok(canonical_header(bytes))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::corrupt(path, reason);
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| corrupt(format!("{e:?}")))?;
        let meta = header.metadata().clone().unwrap_or_default();
        if meta.get("format").map(String::as_str) != Some(FORMAT_TAG) {
            return Err(corrupt("not a glyphsplit checkpoint".into()));
        }
        let version = meta.get("format_version").cloned().unwrap_or_default();
        if version != CHECKPOINT_FORMAT_VERSION.to_string() {
            return Err(corrupt(format!(
                "checkpoint format version {version:?}, expected {CHECKPOINT_FORMAT_VERSION}"
            )));
        }
        let phase: Phase = meta
            .get("phase")
            .ok_or_else(|| corrupt("missing phase".into()))?
            .parse()
            .map_err(|e: Error| corrupt(e.to_string()))?;
        let config: ModelConfig = serde_json::from_str(meta.get("model_config").map_or("", String::as_str))
            .map_err(|e| corrupt(format!("model config: {e}")))?;
        let mut model = ModelParams::new(config, 0).map_err(|e| corrupt(e.to_string()))?;
        let tensors = SafeTensors::deserialize(bytes).map_err(|e| corrupt(format!("{e:?}")))?;

        let read = |name: &str, expected: usize| -> Result<Vec<f32>> {
            let view = tensors.tensor(name).map_err(|_| corrupt(format!("missing tensor {name}")))?;
            if view.dtype() != Dtype::F32 {
                return Err(corrupt(format!("tensor {name} is not f32")));
            }
            let data = view.data();
            if data.len() != expected * 4 {
                return Err(corrupt(format!("tensor {name} has the wrong size")));
            }
            Ok(data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect())
        };
        for (name, p) in model.params_mut() {
            p.value = read(&name, p.len())?;
        }
        for (name, b) in model.buffers_mut() {
            *b = read(&name, b.len())?;
        }
        let extra = meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("extra.").map(|k| (k.to_string(), v.clone())))
            .collect();
        Ok(Self { model, phase, extra })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
