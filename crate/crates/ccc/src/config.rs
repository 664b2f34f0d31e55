//! Run configuration: one JSON file with `bench`, `condense`, `model`,
//! `replay` and `run` sections, plus `--set a.b=value` overrides.

use std::path::{Path, PathBuf};

use ccc_core::bench::{BenchConfig, ExperimentConfig, ModelConfig};
use ccc_core::condense::CondenseConfig;
use ccc_core::replay::ReplayConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Seed for model initialization, data splits and history training.
    pub seed: u64,
    /// Arms run when `--arms` is not given.
    pub arms: Vec<String>,
    pub output_dir: PathBuf,
    /// Defaults to a prefix of the config hash.
    pub run_id: Option<String>,
    pub dump_embeddings: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            arms: vec!["ccc".into(), "finetune".into(), "full_replay".into()],
            output_dir: PathBuf::from("results"),
            run_id: None,
            dump_embeddings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub bench: BenchConfig,
    pub condense: CondenseConfig,
    pub model: ModelConfig,
    pub replay: ReplayConfig,
    pub run: RunSection,
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), applies overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| CliError::schema(p, e))?
            }
            None => Value::Object(Map::new()),
        };
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(tree).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("invalid config at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.bench.validate()?;
        self.condense.validate()?;
        self.model.validate()?;
        self.replay.validate()?;
        if self.run.run_id.as_deref().is_some_and(|id| id.is_empty() || id.contains(['/', '\\'])) {
            return Err(CliError::Config("invalid config field `run.run_id`: must be a plain name".into()));
        }
        Ok(())
    }

    pub fn experiment(&self, dump_embeddings: bool) -> ExperimentConfig {
        ExperimentConfig {
            condense: self.condense.clone(),
            model: self.model.clone(),
            replay: self.replay.clone(),
            seed: self.run.seed,
            dump_embeddings: dump_embeddings || self.run.dump_embeddings,
        }
    }

    /// Hex SHA-256 over the canonical config JSON followed by `extra`
    /// (typically the raw bytes of the input files).
    pub fn hash_with<'a>(&self, extra: impl IntoIterator<Item = &'a [u8]>) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("serializable config"));
        for chunk in extra {
            h.update((chunk.len() as u64).to_le_bytes());
            h.update(chunk);
        }
        hex::encode(h.finalize())
    }
}

/// Applies `a.b.c=value`. The value is parsed as JSON and falls back to a
/// plain string.
pub fn apply_override(tree: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key `{key}` is malformed")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    let mut node = tree;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{}` is not a section", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("override key has at least one part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = RunConfig::load(None, &["replay.k_hops=3".into(), "run.run_id=abc".into()]).unwrap();
        assert_eq!(cfg.replay.k_hops, 3);
        assert_eq!(cfg.run.run_id.as_deref(), Some("abc"));
    }

    #[test]
    fn unknown_keys_name_the_path() {
        let err = RunConfig::load(None, &["replay.hops=3".into()]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("replay"), "{err}");
        let err = RunConfig::load(None, &["bench.churn_rate=1.5".into()]).unwrap_err();
        assert!(err.to_string().contains("churn_rate"), "{err}");
    }

    #[test]
    fn malformed_overrides_rejected() {
        for bad in ["replay", "=3", "replay..k=1", "run.seed.x=1"] {
            assert!(RunConfig::load(None, &[bad.into()]).is_err(), "{bad}");
        }
    }

    #[test]
    fn hash_depends_on_config_and_inputs() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.run.seed = 1;
        assert_ne!(a.hash_with([]), b.hash_with([]));
        assert_ne!(a.hash_with([&b"x"[..]]), a.hash_with([&b"y"[..]]));
        assert_eq!(a.hash_with([&b"x"[..]]), a.hash_with([&b"x"[..]]));
    }
}
