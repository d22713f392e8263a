//! Checkpoint files: model parameters, optional optimizer state, and the
//! metadata needed to resume training or rebuild a feature database.

use crate::container::{ContainerBuilder, ContainerReader};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

const MAGIC: &[u8; 4] = b"JTCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    seed: u64,
    iterations: u64,
    adam: Option<AdamMeta>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AdamMeta {
    t: u64,
    config: AdamConfig,
}

#[derive(Debug)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub seed: u64,
    pub iterations: u64,
}

/// Hex digest over the canonical parameter serialization (names in sorted
/// order, then shape and little-endian values). Feature databases record it
/// so a database can be matched to the encoder that produced it.
pub fn checkpoint_fingerprint(params: &ModelParams) -> String {
    let mut h = Sha256::new();
    for (name, tensor) in params.iter() {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update((tensor.shape().len() as u64).to_le_bytes());
        for &d in tensor.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            h.update(v.to_le_bytes());
        }
    }
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    adam: Option<&AdamState>,
    seed: u64,
    iterations: u64,
) -> Result<()> {
    let meta = CheckpointMeta {
        model: *params.config(),
        seed,
        iterations,
        adam: adam.map(|a| AdamMeta { t: a.t, config: a.config }),
    };
    let mut b = ContainerBuilder::new();
    for (name, tensor) in params.iter() {
        b.add_f64(&format!("param.{name}"), tensor.shape(), tensor.data());
    }
    if let Some(a) = adam {
        for (name, tensor) in &a.m {
            b.add_f64(&format!("adam.m.{name}"), tensor.shape(), tensor.data());
        }
        for (name, tensor) in &a.v {
            b.add_f64(&format!("adam.v.{name}"), tensor.shape(), tensor.data());
        }
    }
    b.write(path, MAGIC, VERSION, serde_json::to_value(&meta)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let r = ContainerReader::open(path, MAGIC, VERSION)?;
    let meta: CheckpointMeta = serde_json::from_value(r.meta.clone())
        .map_err(|e| Error::format(path, format!("bad checkpoint metadata: {e}")))?;
    meta.model.validate()?;

    let mut tensors = BTreeMap::new();
    let mut adam_m = BTreeMap::new();
    let mut adam_v = BTreeMap::new();
    let names: Vec<String> = r.section_names().map(str::to_string).collect();
    for section in names {
        let (shape, data) = r.f64(&section)?;
        let tensor = Tensor::from_vec(&shape, data)?;
        if let Some(name) = section.strip_prefix("param.") {
            tensors.insert(name.to_string(), tensor);
        } else if let Some(name) = section.strip_prefix("adam.m.") {
            adam_m.insert(name.to_string(), tensor);
        } else if let Some(name) = section.strip_prefix("adam.v.") {
            adam_v.insert(name.to_string(), tensor);
        } else {
            return Err(Error::format(path, format!("unexpected section {section}")));
        }
    }
    if tensors.is_empty() {
        return Err(Error::format(path, "checkpoint has no parameters".to_string()));
    }

    let adam = match meta.adam {
        Some(am) => {
            am.config.validate()?;
            let mut state = AdamState::new(am.config)?;
            state.t = am.t;
            state.m = adam_m;
            state.v = adam_v;
            Some(state)
        }
        None => {
            if !adam_m.is_empty() || !adam_v.is_empty() {
                return Err(Error::format(
                    path,
                    "optimizer sections present but metadata has no optimizer".to_string(),
                ));
            }
            None
        }
    };

    Ok(Checkpoint {
        params: ModelParams::from_parts(meta.model, tensors),
        adam,
        seed: meta.seed,
        iterations: meta.iterations,
    })
}
