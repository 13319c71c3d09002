//! Flat key=value configuration with defaults < file < CLI precedence.
//!
//! Every run writes its fully resolved configuration into the output
//! directory before doing any work, so results can always be traced back to
//! the exact settings that produced them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use knaskit_core::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct Resolved {
    values: BTreeMap<String, String>,
}

impl Resolved {
    pub fn from_defaults(defaults: &[(&str, String)]) -> Self {
        let values = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        Resolved { values }
    }

    /// Applies a key=value config file (blank lines and '#' comments
    /// allowed). Unknown keys are rejected so typos fail loudly.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                msg: format!("line {} is not key=value: {raw:?}", lineno + 1),
            })?;
            self.set_known(key.trim(), value.trim().to_string())
                .map_err(|_| Error::Format {
                    path: path.to_path_buf(),
                    msg: format!("unknown key {:?} on line {}", key.trim(), lineno + 1),
                })?;
        }
        Ok(())
    }

    /// Applies repeatable `--set key=value` overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::contract(format!("--set expects key=value, got {item:?}"))
            })?;
            self.set_known(key.trim(), value.trim().to_string())?;
        }
        Ok(())
    }

    fn set_known(&mut self, key: &str, value: String) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(Error::contract(format!(
                "unknown configuration key {key:?}"
            )));
        }
        self.values.insert(key.to_string(), value);
        Ok(())
    }

    /// CLI flags land last and may introduce keys the defaults omit.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn set_if_some<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::contract(format!("missing configuration key {key:?}")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::contract(format!("{key} must be an integer, got {:?}", self.values[key])))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::contract(format!("{key} must be an integer, got {:?}", self.values[key])))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get(key)?
            .parse()
            .map_err(|_| Error::contract(format!("{key} must be a number, got {:?}", self.values[key])))
    }

    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Writes `config.resolved.txt` (sorted key=value lines) under `dir`.
    pub fn persist(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut text = String::new();
        for (k, v) in &self.values {
            text.push_str(&format!("{k}={v}\n"));
        }
        let path = dir.join("config.resolved.txt");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// Parses a CxHxW or plain-D shape string.
pub fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split('x').collect();
    let dims: Result<Vec<usize>> = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::contract(format!("bad shape component {p:?} in {s:?}")))
        })
        .collect();
    let dims = dims?;
    if dims.is_empty() || dims.iter().any(|&d| d == 0) {
        return Err(Error::contract(format!("shape {s:?} has empty extents")));
    }
    Ok(dims)
}
