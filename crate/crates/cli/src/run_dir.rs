//! Run directories and their manifests.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use apl_seg::trainer::TrainConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Creates `dir`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare(dir: &Path, force: bool) -> Result<()> {
    let occupied = dir.exists() && (dir.is_file() || fs::read_dir(dir)?.next().is_some());
    if occupied {
        if !force {
            bail!("{} already exists; pass --force to replace it", dir.display());
        }
        if dir.is_dir() {
            fs::remove_dir_all(dir).with_context(|| format!("removing {}", dir.display()))?;
        } else {
            fs::remove_file(dir)?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Refuses to overwrite a file unless `force`.
pub fn check_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} already exists; pass --force to replace it", path.display());
    }
    Ok(())
}

/// Git-style content hash: SHA-256 over `blob <len>\0<content>`.
pub fn content_hash(content: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()));
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub mode: String,
    pub seed: u64,
    pub out_dir: String,
    pub config_hash: String,
    pub data: serde_json::Value,
    pub config: &'a TrainConfig,
    pub version: &'static str,
}

/// Writes the exact config (TOML) and the manifest into `dir`.
pub fn write_manifest(dir: &Path, command: &str, cfg: &TrainConfig, data: serde_json::Value) -> Result<String> {
    let text = toml::to_string(cfg).context("serialising config")?;
    fs::write(dir.join(CONFIG_FILE), &text)?;
    let hash = content_hash(&text);
    let manifest = RunManifest {
        command,
        mode: cfg.mode.to_string(),
        seed: cfg.seed,
        out_dir: dir.display().to_string(),
        config_hash: hash.clone(),
        data,
        config: cfg,
        version: env!("CARGO_PKG_VERSION"),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        assert_eq!(content_hash("a = 1\n"), content_hash("a = 1\n"));
        assert_ne!(content_hash("a = 1\n"), content_hash("a = 2\n"));
        assert_eq!(content_hash("").len(), 64);
    }

    #[test]
    fn prepare_refuses_non_empty_dirs() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        prepare(&dir, false).unwrap();
        prepare(&dir, false).unwrap();
        fs::write(dir.join("x"), "1").unwrap();
        assert!(prepare(&dir, false).is_err());
        prepare(&dir, true).unwrap();
        assert!(!dir.join("x").exists());
    }

    #[test]
    fn config_toml_round_trips() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = TrainConfig::desk(32, 4);
        write_manifest(tmp.path(), "train", &cfg, serde_json::Value::Null).unwrap();
        let text = fs::read_to_string(tmp.path().join(CONFIG_FILE)).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&text).unwrap(), cfg);
    }
}
