//! Network weight files: a tensor container plus a JSON sidecar that records
//! the architecture config and its hash.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{contract, Error, Result};
use crate::tensor::{read_container, write_container, Container, ParamStore};

/// Hex SHA-256 over the model kind and the compact JSON of `config`.
pub fn config_hash<C: Serialize>(kind: &str, config: &C) -> Result<String> {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(config)?);
    Ok(hex::encode(h.finalize()))
}

/// Sidecar path for a weight file: same stem, `.json` extension.
pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sidecar<C> {
    pub kind: String,
    pub config: C,
    pub config_hash: String,
}

pub fn save_model<C: Serialize>(
    path: &Path,
    kind: &str,
    config: &C,
    params: &ParamStore,
    extra: Map<String, Value>,
) -> Result<()> {
    let hash = config_hash(kind, config)?;
    let mut c = Container::from_params(params);
    c.metadata = extra;
    c.metadata.insert("kind".into(), kind.into());
    c.metadata.insert("config".into(), serde_json::to_value(config)?);
    c.metadata.insert("config_hash".into(), hash.clone().into());
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_container(path, &c)?;
    let side = Sidecar {
        kind: kind.to_string(),
        config,
        config_hash: hash,
    };
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&side)?)?;
    Ok(())
}

/// Reads the sidecar and container, checking that the kind matches and that
/// the sidecar config, its recorded hash and the container's hash all agree.
pub fn load_model<C: Serialize + DeserializeOwned>(path: &Path, kind: &str) -> Result<(C, Container)> {
    let side_path = sidecar_path(path);
    let side: Sidecar<C> = serde_json::from_slice(&std::fs::read(&side_path)?).map_err(|e| Error::Format {
        path: side_path.clone(),
        msg: e.to_string(),
    })?;
    if side.kind != kind {
        contract!("{side_path:?} holds a {:?} model, expected {kind:?}", side.kind);
    }
    let hash = config_hash(kind, &side.config)?;
    if hash != side.config_hash {
        contract!("config hash mismatch in {side_path:?}: recorded {}, computed {hash}", side.config_hash);
    }
    let container = read_container(path)?;
    match container.metadata.get("config_hash").and_then(Value::as_str) {
        Some(h) if h == hash => {}
        other => contract!("weights {path:?} were written for config hash {other:?}, sidecar says {hash}"),
    }
    Ok((side.config, container))
}
