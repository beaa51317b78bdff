//! Flat `key = value` configuration files with command-line overrides.
//!
//! Files use TOML syntax restricted to top-level scalars and arrays. A run
//! manifest is accepted too, in which case its `[config]` table is used.
//! Every read records the effective value (given or default), which is what
//! manifests store as the resolved configuration.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::path::Path;

use toml::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, Value>,
    resolved: RefCell<BTreeMap<String, Value>>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        if text.starts_with(crate::dataset::DATASET_MAGIC) {
            return Ok(Self::from_dataset_manifest(text));
        }
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().trim().to_string()))?;
        if table.contains_key("command") {
            if let Some(Value::Table(cfg)) = table.remove("config") {
                table = cfg;
            }
        }
        let mut values = BTreeMap::new();
        for (k, v) in table {
            if v.is_table() {
                return Err(CliError::Config(format!("`{k}`: sections are not supported, keys must be flat")));
            }
            values.insert(k, v);
        }
        Ok(Settings {
            values,
            resolved: RefCell::default(),
        })
    }

    /// Generator settings and seed recorded in a dataset manifest.
    fn from_dataset_manifest(text: &str) -> Self {
        let mut values = BTreeMap::new();
        for line in text.lines() {
            let f: Vec<&str> = line.split(' ').collect();
            let (k, v) = match f.as_slice() {
                ["config", k, v] => (*k, *v),
                ["seed", v] => ("seed", *v),
                _ => continue,
            };
            values.insert(k.to_string(), scalar(v));
        }
        Settings {
            values,
            resolved: RefCell::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Apply `key=value` overrides; values are read as TOML, falling back to strings.
    pub fn override_with(&mut self, sets: &[String]) -> Result<()> {
        for s in sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{s}` is not key=value")))?;
            self.values.insert(k.trim().to_string(), scalar(v));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.values.insert(key.to_string(), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    fn get<T>(&self, key: &str, default: T, read: impl FnOnce(&Value) -> Option<T>, want: &str, show: impl FnOnce(&T) -> Value) -> Result<T> {
        let out = match self.values.get(key) {
            None => default,
            Some(v) => read(v).ok_or_else(|| CliError::Config(format!("`{key}` must be {want}, got {v}")))?,
        };
        self.resolved.borrow_mut().insert(key.to_string(), show(&out));
        Ok(out)
    }

    pub fn f64(&self, key: &str, default: f64) -> Result<f64> {
        self.get(
            key,
            default,
            |v| match v {
                Value::Float(f) => Some(*f),
                Value::Integer(i) => Some(*i as f64),
                _ => None,
            },
            "a number",
            |x| Value::Float(*x),
        )
    }

    pub fn usize(&self, key: &str, default: usize) -> Result<usize> {
        self.get(
            key,
            default,
            |v| v.as_integer().and_then(|i| usize::try_from(i).ok()),
            "a non-negative integer",
            |x| Value::Integer(*x as i64),
        )
    }

    pub fn u32(&self, key: &str, default: u32) -> Result<u32> {
        self.get(
            key,
            default,
            |v| v.as_integer().and_then(|i| u32::try_from(i).ok()),
            "a non-negative 32-bit integer",
            |x| Value::Integer(i64::from(*x)),
        )
    }

    /// Seeds may exceed `i64`, so they are also accepted (and recorded) as strings.
    pub fn u64(&self, key: &str, default: u64) -> Result<u64> {
        self.get(
            key,
            default,
            |v| match v {
                Value::Integer(i) => u64::try_from(*i).ok(),
                Value::String(s) => s.parse().ok(),
                _ => None,
            },
            "a non-negative integer",
            |x| match i64::try_from(*x) {
                Ok(i) => Value::Integer(i),
                Err(_) => Value::String(x.to_string()),
            },
        )
    }

    pub fn bool(&self, key: &str, default: bool) -> Result<bool> {
        self.get(key, default, Value::as_bool, "true or false", |x| Value::Boolean(*x))
    }

    pub fn string(&self, key: &str, default: &str) -> Result<String> {
        self.get(
            key,
            default.to_string(),
            |v| v.as_str().map(str::to_string),
            "a string",
            |x| Value::String(x.clone()),
        )
    }

    /// Optional number where the string `"none"` disables the setting.
    pub fn opt_f64(&self, key: &str, default: Option<f64>) -> Result<Option<f64>> {
        self.get(
            key,
            default,
            |v| match v {
                Value::String(s) if s == "none" => Some(None),
                Value::Float(f) => Some(Some(*f)),
                Value::Integer(i) => Some(Some(*i as f64)),
                _ => None,
            },
            "a number or \"none\"",
            |x| x.map_or_else(|| Value::String("none".into()), Value::Float),
        )
    }

    pub fn u64_list(&self, key: &str, default: &[u64]) -> Result<Vec<u64>> {
        self.get(
            key,
            default.to_vec(),
            |v| match v {
                Value::Array(a) => a.iter().map(|x| x.as_integer().and_then(|i| u64::try_from(i).ok())).collect(),
                Value::Integer(i) => u64::try_from(*i).ok().map(|x| vec![x]),
                Value::String(s) => s.split(',').map(|p| p.trim().parse().ok()).collect(),
                _ => None,
            },
            "a list of non-negative integers",
            |x| Value::Array(x.iter().map(|&s| Value::Integer(s as i64)).collect()),
        )
    }

    pub fn string_list(&self, key: &str, default: &[String]) -> Result<Vec<String>> {
        self.get(
            key,
            default.to_vec(),
            |v| match v {
                Value::Array(a) => a.iter().map(|x| x.as_str().map(str::to_string)).collect(),
                Value::String(s) => Some(s.split(',').map(|p| p.trim().to_string()).collect()),
                _ => None,
            },
            "a list of strings",
            |x| Value::Array(x.iter().cloned().map(Value::String).collect()),
        )
    }

    /// Reject keys that no command understands. Keys that belong to other
    /// commands are tolerated so one file can drive a whole pipeline.
    pub fn finish(&self) -> Result<()> {
        match self.values.keys().find(|k| !crate::keys::ALL.contains(&k.as_str())) {
            Some(k) => Err(CliError::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }

    /// The same values with nothing recorded yet, so one run's resolved
    /// config does not pick up keys read by another.
    pub fn fresh(&self) -> Settings {
        Settings {
            values: self.values.clone(),
            resolved: RefCell::default(),
        }
    }

    /// Effective value of every key read so far.
    pub fn resolved(&self) -> BTreeMap<String, Value> {
        self.resolved.borrow().clone()
    }
}

/// A value written as TOML, or a bare string when it does not parse.
fn scalar(v: &str) -> Value {
    format!("x = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("x"))
        .unwrap_or_else(|| Value::String(v.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_and_unknown_keys_are_named() {
        let mut s = Settings::parse("base_lr = 0.01\nwarmup_epochs = 2\nbogus = 1\n").unwrap();
        s.override_with(&["base_lr=0.5".to_string(), "profile=tiny".to_string()]).unwrap();
        assert_eq!(s.f64("base_lr", 0.0).unwrap(), 0.5);
        assert_eq!(s.usize("warmup_epochs", 5).unwrap(), 2);
        assert_eq!(s.string("profile", "standard").unwrap(), "tiny");
        assert!(matches!(s.finish(), Err(CliError::UnknownKey(k)) if k == "bogus"));
    }

    #[test]
    fn resolved_includes_defaults() {
        let s = Settings::parse("").unwrap();
        s.opt_f64("grad_clip", Some(1.0)).unwrap();
        s.opt_f64("layer_wise_decay", None).unwrap();
        let r = s.resolved();
        assert_eq!(r["grad_clip"], Value::Float(1.0));
        assert_eq!(r["layer_wise_decay"], Value::String("none".into()));
    }

    #[test]
    fn rejects_sections_and_wrong_types() {
        assert!(Settings::parse("[train]\nx = 1\n").is_err());
        let s = Settings::parse("batch_size = \"big\"\n").unwrap();
        assert!(s.usize("batch_size", 64).is_err());
    }

    #[test]
    fn manifest_config_table_is_used() {
        let s = Settings::parse("command = \"gen\"\n[config]\nnum_clips = 3\n").unwrap();
        assert_eq!(s.usize("num_clips", 100).unwrap(), 3);
        assert!(!s.contains("command"));
    }
}
