//! Run manifests (`manifest.toml`), written next to every command's outputs.
//!
//! A manifest records the command, its resolved configuration, input paths
//! and their hashes, and the SHA-256 of each artifact. The `run_id` hashes
//! everything except timestamps and artifact digests; it is embedded in the
//! checkpoint metadata and the first line of every text report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn version() -> String {
    format!("lart {}", env!("CARGO_PKG_VERSION"))
}

fn unix_now() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: BTreeMap<String, Value>,
    /// Input role (`data`, `eval_data`, `checkpoint`) to path.
    pub inputs: BTreeMap<String, PathBuf>,
    /// Input role to content hash.
    pub input_hashes: BTreeMap<String, String>,
    pub started_unix: i64,
    pub finished_unix: i64,
    /// Artifact file name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, config: BTreeMap<String, Value>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: version(),
            seed,
            config,
            inputs: BTreeMap::new(),
            input_hashes: BTreeMap::new(),
            started_unix: unix_now(),
            finished_unix: 0,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path, hash: String) {
        self.inputs.insert(role.to_string(), path.to_path_buf());
        self.input_hashes.insert(role.to_string(), hash);
    }

    /// Hash of the run's identity: command, config, input hashes, seed, version.
    pub fn run_id(&self) -> String {
        let mut t = Table::new();
        t.insert("command".into(), self.command.clone().into());
        t.insert("version".into(), self.version.clone().into());
        t.insert("seed".into(), self.seed.to_string().into());
        t.insert("config".into(), Value::Table(self.config.clone().into_iter().collect()));
        t.insert(
            "input_hashes".into(),
            Value::Table(self.input_hashes.iter().map(|(k, v)| (k.clone(), v.clone().into())).collect()),
        );
        hex(&sha256(t.to_string().as_bytes()))[..16].to_string()
    }

    /// Write `bytes` to `dir/name` and record its digest.
    pub fn artifact(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.artifacts.insert(name.to_string(), hex(&sha256(bytes)));
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        let mut t = Table::new();
        t.insert("command".into(), self.command.clone().into());
        t.insert("version".into(), self.version.clone().into());
        t.insert("run_id".into(), self.run_id().into());
        t.insert("seed".into(), self.seed.to_string().into());
        t.insert("started_unix".into(), self.started_unix.into());
        t.insert("finished_unix".into(), self.finished_unix.into());
        let strings = |m: &BTreeMap<String, String>| Value::Table(m.iter().map(|(k, v)| (k.clone(), v.clone().into())).collect());
        let paths: BTreeMap<String, String> = self.inputs.iter().map(|(k, p)| (k.clone(), p.display().to_string())).collect();
        t.insert("inputs".into(), strings(&paths));
        t.insert("input_hashes".into(), strings(&self.input_hashes));
        t.insert("config".into(), Value::Table(self.config.clone().into_iter().collect()));
        t.insert("artifacts".into(), strings(&self.artifacts));
        t.to_string()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let t: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("manifest: {}", e.message().trim())))?;
        let bad = |k: &str| CliError::Config(format!("manifest: missing or malformed `{k}`"));
        let s = |k: &str| t.get(k).and_then(Value::as_str).map(str::to_string).ok_or_else(|| bad(k));
        let i = |k: &str| t.get(k).and_then(Value::as_integer).ok_or_else(|| bad(k));
        let table = |k: &str| t.get(k).and_then(Value::as_table).cloned().ok_or_else(|| bad(k));
        let strings = |k: &str| -> Result<BTreeMap<String, String>> {
            table(k)?
                .into_iter()
                .map(|(name, v)| v.as_str().map(|x| (name, x.to_string())).ok_or_else(|| bad(k)))
                .collect()
        };
        Ok(RunManifest {
            command: s("command")?,
            version: s("version")?,
            seed: s("seed")?.parse().map_err(|_| bad("seed"))?,
            config: table("config")?.into_iter().collect(),
            inputs: strings("inputs")?.into_iter().map(|(k, v)| (k, PathBuf::from(v))).collect(),
            input_hashes: strings("input_hashes")?,
            started_unix: i("started_unix")?,
            finished_unix: i("finished_unix")?,
            artifacts: strings("artifacts")?,
        })
    }

    /// Stamp the finish time and write `manifest.toml` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.finished_unix = unix_now();
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_stable_run_id() {
        let mut cfg = BTreeMap::new();
        cfg.insert("base_lr".to_string(), Value::Float(1e-3));
        let mut m = RunManifest::start("pretrain", 7, cfg);
        m.input("data", Path::new("/tmp/d"), "abc".into());
        m.artifacts.insert("report.txt".into(), "00".into());
        let back = RunManifest::parse(&m.to_toml()).unwrap();
        assert_eq!(back, m);
        let mut later = m.clone();
        later.started_unix += 100;
        later.artifacts.clear();
        assert_eq!(later.run_id(), m.run_id());
        later.seed = 8;
        assert_ne!(later.run_id(), m.run_id());
    }
}
