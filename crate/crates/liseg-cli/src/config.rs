//! Layered run configuration.
//!
//! Values merge in order — built-in defaults, then a flat `key=value` config
//! file, then `LISEG_<KEY>` environment variables, then explicit flags —
//! with later layers winning. Every command writes the merged result as
//! `config.resolved` beside its outputs, so re-running with that file (and
//! the same seed) reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;

use crate::CliError;

pub const RESOLVED_FILE: &str = "config.resolved";

#[derive(Debug, Clone)]
pub struct RunConfig {
    command: &'static str,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new(command: &'static str, defaults: &[(&str, String)]) -> Self {
        RunConfig {
            command,
            values: defaults
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        }
    }

    fn known(&self, key: &str) -> Result<(), CliError> {
        if self.values.contains_key(key) {
            Ok(())
        } else {
            let keys: Vec<_> = self.values.keys().map(String::as_str).collect();
            Err(CliError::Usage(format!(
                "unknown {} option {key:?} (expected one of: {})",
                self.command,
                keys.join(", ")
            )))
        }
    }

    /// Apply a `key=value` file. Blank lines and `#` comments are skipped;
    /// keys must be known to this command.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!("cannot read config {}: {e}", path.display()))
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "{}:{}: expected key=value, got {raw:?}",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            self.known(key)?;
            self.values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(())
    }

    /// Apply `LISEG_<KEY>` environment overrides for every known key.
    pub fn apply_env(&mut self) {
        let overrides: Vec<(String, String)> = self
            .values
            .keys()
            .filter_map(|key| {
                std::env::var(format!("LISEG_{}", key.to_uppercase()))
                    .ok()
                    .map(|v| (key.clone(), v))
            })
            .collect();
        self.values.extend(overrides);
    }

    /// Apply one flag override, if the flag was given.
    pub fn set<T: Display>(&mut self, key: &str, flag: Option<T>) {
        if let Some(v) = flag {
            debug_assert!(self.values.contains_key(key), "unregistered key {key}");
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    /// Force a value (used to pin derived defaults into the resolved config).
    pub fn put<T: Display>(&mut self, key: &str, value: T) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn str(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T, CliError> {
        self.str(key).parse().map_err(|_| {
            CliError::Usage(format!(
                "{key}={:?} is not {what}",
                self.str(key)
            ))
        })
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.parsed(key, "an unsigned integer")
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.parsed(key, "an unsigned integer")
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        self.parsed(key, "a number")
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.str(key) {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            other => Err(CliError::Usage(format!(
                "{key}={other:?} is not a boolean (true/false)"
            ))),
        }
    }

    pub fn resolved_text(&self) -> String {
        let mut out = format!("# liseg {} — resolved configuration\n", self.command);
        for (k, v) in &self.values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    /// Write `config.resolved` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(RESOLVED_FILE);
        std::fs::write(&path, self.resolved_text())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}
