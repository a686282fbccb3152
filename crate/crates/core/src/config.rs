//! Layered `key = value` configuration.
//!
//! Format: one `key = value` pair per line, `#` starts a comment, keys are
//! dotted lowercase paths (`profile.read.blink_rate`). Later layers override
//! earlier ones; `--set key=value` overrides are the last layer.
//!
//! The canonical text used for hashing is every effective pair, sorted by
//! key, written as `key = value\n` with the value trimmed and runs of
//! whitespace collapsed to one space.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::rng::sha256_hex;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{origin}: {message}")]
    Syntax { origin: Origin, message: String },
    #[error("{origin}: key `{key}`: {message}")]
    Value {
        origin: Origin,
        key: String,
        message: String,
    },
    #[error("missing activity profile `{0}`")]
    MissingProfile(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Where an entry came from, for diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin {
    pub source: String,
    pub line: usize,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.source)
        } else {
            write!(f, "{}:{}", self.source, self.line)
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    origin: Origin,
}

#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, Entry>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && !key.starts_with('.')
        && !key.ends_with('.')
        && !key.contains("..")
        && key
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '.' || c == '-')
}

fn normalize_value(v: &str) -> String {
    v.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses one layer. Duplicate keys within a layer are rejected.
    pub fn parse(text: &str, source: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let origin = Origin {
                source: source.to_string(),
                line: idx + 1,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    origin,
                    message: format!("expected `key = value`, found `{line}`"),
                });
            };
            let key = k.trim();
            if !valid_key(key) {
                return Err(ConfigError::Syntax {
                    origin,
                    message: format!("invalid key `{key}`"),
                });
            }
            let value = normalize_value(v);
            if value.is_empty() {
                return Err(ConfigError::Syntax {
                    origin,
                    message: format!("empty value for `{key}`"),
                });
            }
            if let Some(prev) = entries.get(key) {
                let prev: &Entry = prev;
                return Err(ConfigError::Syntax {
                    origin,
                    message: format!("duplicate key `{key}` (first set at line {})", prev.origin.line),
                });
            }
            entries.insert(key.to_string(), Entry { value, origin });
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies `other` on top of `self`.
    pub fn layer(&mut self, other: Config) {
        self.entries.extend(other.entries);
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let origin = Origin {
            source: format!("--set {assignment}"),
            line: 0,
        };
        let Some((k, v)) = assignment.split_once('=') else {
            return Err(ConfigError::Syntax {
                origin,
                message: "expected key=value".into(),
            });
        };
        let key = k.trim();
        let value = normalize_value(v);
        if !valid_key(key) || value.is_empty() {
            return Err(ConfigError::Syntax {
                origin,
                message: "expected key=value".into(),
            });
        }
        self.entries.insert(key.to_string(), Entry { value, origin });
        Ok(())
    }

    pub fn insert(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: normalize_value(&value.to_string()),
                origin: Origin {
                    source: "<code>".into(),
                    line: 0,
                },
            },
        );
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn origin(&self, key: &str) -> Option<&Origin> {
        self.entries.get(key).map(|e| &e.origin)
    }

    /// Keys under `prefix.` with the prefix stripped.
    pub fn section(&self, prefix: &str) -> Config {
        let p = format!("{prefix}.");
        Config {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, e)| k.strip_prefix(&p).map(|s| (s.to_string(), e.clone())))
                .collect(),
        }
    }

    fn value_error(&self, key: &str, message: String) -> ConfigError {
        ConfigError::Value {
            origin: self.entries[key].origin.clone(),
            key: key.to_string(),
            message,
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .parse::<T>()
                .map(Some)
                .map_err(|err| self.value_error(key, format!("cannot parse `{}`: {err}", e.value))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?
            .ok_or_else(|| ConfigError::MissingKey(key.to_string()))
    }

    /// Comma-separated list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let Some(e) = self.entries.get(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<T>()
                    .map_err(|err| self.value_error(key, format!("cannot parse `{s}`: {err}")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Rejects keys outside `allowed`. A trailing `*` in an allowed pattern
    /// matches any suffix.
    pub fn check_known(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        for (k, e) in &self.entries {
            let ok = allowed.iter().any(|pat| match pat.strip_suffix('*') {
                Some(prefix) => k.starts_with(prefix),
                None => k == pat,
            });
            if !ok {
                return Err(ConfigError::Syntax {
                    origin: e.origin.clone(),
                    message: format!("unknown key `{k}`"),
                });
            }
        }
        Ok(())
    }

    pub fn canonical_text(&self) -> String {
        let mut s = String::new();
        for (k, e) in &self.entries {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&e.value);
            s.push('\n');
        }
        s
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical_text().as_bytes())
    }
}
