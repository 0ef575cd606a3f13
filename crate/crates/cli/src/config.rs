//! Flat `key = value` run configuration.
//!
//! Keys use the long flag names (`seed`, `noise-sd`, `lambda`, ...). Blank
//! lines and lines starting with `#` are ignored. A value given on the command
//! line wins over the file, which wins over the built-in default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};

pub const KNOWN_KEYS: &[&str] = &[
    "conditions",
    "cv-folds",
    "envelope",
    "epsilon",
    "form",
    "interaction",
    "jobs",
    "lambda",
    "mask",
    "max-iter",
    "model",
    "noise-sd",
    "out-dir",
    "params",
    "renames",
    "reps",
    "responses",
    "scheme",
    "seed",
    "targets",
    "threshold",
    "tol",
    "train-fraction",
];

const PATH_KEYS: &[&str] = &[
    "conditions",
    "epsilon",
    "interaction",
    "mask",
    "params",
    "renames",
    "responses",
    "targets",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

/// Raised for malformed configuration files so `main` can map it to the
/// parse-error exit code.
#[derive(Debug, thiserror::Error)]
#[error("{path}:{line}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub line: usize,
    pub message: String,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let err = |line: usize, message: String| ConfigError {
            path: path.display().to_string(),
            line,
            message,
        };
        let mut values = BTreeMap::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(k + 1, format!("expected `key = value`, found `{line}`")).into());
            };
            let (key, mut value) = (key.trim().to_string(), value.trim().to_string());
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(err(k + 1, format!("unknown key `{key}`")).into());
            }
            if PATH_KEYS.contains(&key.as_str()) {
                let resolved = base.join(&value);
                if !resolved.exists() {
                    return Err(err(
                        k + 1,
                        format!("path `{}` does not exist", resolved.display()),
                    )
                    .into());
                }
                value = resolved.display().to_string();
            }
            if values.insert(key.clone(), value).is_some() {
                return Err(err(k + 1, format!("duplicate key `{key}`")).into());
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        Self::parse(&text, path)
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| {
                ConfigError {
                    path: "config".into(),
                    line: 0,
                    message: format!("bad value `{v}` for `{key}`: {e}"),
                }
                .into()
            }),
        }
    }
}

/// Resolves settings and records where each came from for the startup log.
#[derive(Debug, Default)]
pub struct Resolver {
    file: RunConfig,
    log: Vec<String>,
}

impl Resolver {
    pub fn new(file: Option<RunConfig>) -> Self {
        Self {
            file: file.unwrap_or_default(),
            log: Vec::new(),
        }
    }

    pub fn value<T>(&mut self, key: &str, cli: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + std::fmt::Debug,
        T::Err: std::fmt::Display,
    {
        let (v, source) = match (cli, self.file.get::<T>(key)?) {
            (Some(v), _) => (v, "flag"),
            (None, Some(v)) => (v, "config"),
            (None, None) => (default, "default"),
        };
        self.log.push(format!("{key} = {v:?} ({source})"));
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, cli: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + std::fmt::Debug,
        T::Err: std::fmt::Display,
    {
        let (v, source) = match (cli, self.file.get::<T>(key)?) {
            (Some(v), _) => (Some(v), "flag"),
            (None, Some(v)) => (Some(v), "config"),
            (None, None) => (None, "unset"),
        };
        self.log.push(format!("{key} = {v:?} ({source})"));
        Ok(v)
    }

    pub fn path(&mut self, key: &str, cli: Option<PathBuf>) -> Result<PathBuf> {
        match self.optional(key, cli)? {
            Some(p) => Ok(p),
            None => bail!("missing required setting `{key}` (flag --{key} or config key)"),
        }
    }

    pub fn log_settings(&self, command: &str) {
        log::info!("{command}: resolved settings");
        for line in &self.log {
            log::info!("  {line}");
        }
    }
}
