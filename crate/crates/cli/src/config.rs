//! TOML run configuration files (flat `key = value` tables). Keys are the long flag names of
//! the subcommand; a flag given on the command line wins over the file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};

#[derive(Debug, Default)]
pub struct ConfigFile {
    path: Option<PathBuf>,
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text, Some(path.to_path_buf()))
    }

    pub fn parse(text: &str, path: Option<PathBuf>) -> anyhow::Result<Self> {
        let table: toml::Table = text.parse().context("config is not valid TOML")?;
        let mut values = BTreeMap::new();
        for (k, v) in table {
            let value = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(_) | toml::Value::Float(_) | toml::Value::Boolean(_) => v.to_string(),
                other => bail!("config key `{k}`: expected a string, number or boolean, got {}", other.type_str()),
            };
            // `per_patch` and `per-patch` name the same key
            let key = k.replace('_', "-");
            if values.insert(key.clone(), value).is_some() {
                bail!("config key `{key}` given twice");
            }
        }
        Ok(ConfigFile { path, values })
    }

    fn origin(&self) -> String {
        self.path.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "config".into())
    }

    /// Rejects keys the subcommand does not know.
    pub fn check_keys(&self, allowed: &[&str]) -> anyhow::Result<()> {
        for k in self.values.keys() {
            if !allowed.contains(&k.as_str()) {
                bail!("{}: unknown key `{k}` (expected one of: {})", self.origin(), allowed.join(", "));
            }
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| anyhow!("{}: bad value `{v}` for `{key}`", self.origin())),
        }
    }

    pub fn flag(&self, key: &str) -> anyhow::Result<bool> {
        Ok(self.get::<bool>(key)?.unwrap_or(false))
    }
}

/// Command-line value, else config value, else default.
pub fn pick<T: FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str, default: T) -> anyhow::Result<T> {
    Ok(match flag {
        Some(v) => v,
        None => cfg.get(key)?.unwrap_or(default),
    })
}

/// Like [`pick`] without a default.
pub fn pick_opt<T: FromStr>(flag: Option<T>, cfg: &ConfigFile, key: &str) -> anyhow::Result<Option<T>> {
    Ok(match flag {
        Some(v) => Some(v),
        None => cfg.get(key)?,
    })
}
