//! The run manifest: everything needed to repeat a run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use tabglm::train::ModeDecision;

use crate::settings::Settings;

pub const MANIFEST_FORMAT: &str = "tabglm-run";
pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub settings: Settings,
    pub mode_decision: ModeDecision,
    pub config_hash: String,
}

/// Recursively sorts object keys so the serialized form does not depend on
/// field or insertion order.
fn canonical(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            Value::Object(
                entries
                    .into_iter()
                    .map(|(k, v)| (k.clone(), canonical(v)))
                    .collect(),
            )
        }
        Value::Array(items) => Value::Array(items.iter().map(canonical).collect()),
        other => other.clone(),
    }
}

/// SHA-256 over the canonical JSON of the settings, output directory
/// excluded so the same run hashes the same wherever it is written.
pub fn config_hash(settings: &Settings) -> Result<String> {
    let mut v = serde_json::to_value(settings)?;
    if let Value::Object(map) = &mut v {
        map.remove("out");
    }
    let bytes = serde_json::to_vec(&canonical(&v))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, settings: &Settings, mode_decision: ModeDecision) -> Result<Self> {
        Ok(Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            command: command.into(),
            config_hash: config_hash(settings)?,
            settings: settings.clone(),
            mode_decision,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&canonical(&serde_json::to_value(self)?))?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let m: RunManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            bail!(
                "{} is not a version {MANIFEST_VERSION} run manifest",
                path.display()
            );
        }
        if config_hash(&m.settings)? != m.config_hash {
            bail!(
                "{}: config hash does not match its settings",
                path.display()
            );
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::settings::{RunArgs, Settings};

    #[test]
    fn hash_ignores_key_order_and_out_dir() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.conf");
        let b = dir.path().join("b.conf");
        std::fs::write(&a, "lambda=0.3\nbatch=64\nlabel=y\nout=x\n").unwrap();
        std::fs::write(&b, "out=z\nlabel=y\nbatch=64\nlambda=0.3\n").unwrap();
        let resolve = |p: &Path| {
            Settings::resolve(&RunArgs {
                config: Some(p.to_path_buf()),
                ..RunArgs::default()
            })
            .unwrap()
        };
        let (sa, sb) = (resolve(&a), resolve(&b));
        assert_eq!(config_hash(&sa).unwrap(), config_hash(&sb).unwrap());
        let mut sc = sa.clone();
        sc.train.lambda = 0.4;
        assert_ne!(config_hash(&sa).unwrap(), config_hash(&sc).unwrap());
    }

    #[test]
    fn canonical_sorts_nested_keys() {
        let v: Value = serde_json::from_str(r#"{"b":{"z":1,"a":2},"a":[{"y":1,"x":2}]}"#).unwrap();
        assert_eq!(
            serde_json::to_string(&canonical(&v)).unwrap(),
            r#"{"a":[{"x":2,"y":1}],"b":{"a":2,"z":1}}"#
        );
    }
}
