//! Run configuration: one TOML file with a section per command.

use std::fs;
use std::path::{Path, PathBuf};

use macproto::abstraction::AbstractionConfig;
use macproto::baseline_q::QConfig;
use macproto::eval::SweepSpec;
use macproto::marl::MarlConfig;
use macproto::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "MACPROTO_OUT";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed; every component derives its own stream from it.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub log_level: Option<String>,
    /// φ checkpoint consumed by `train-policy --mode abstract`.
    pub phi: Option<PathBuf>,
    pub abstraction: Option<AbstractionConfig>,
    pub search: Option<SearchSection>,
    pub policy: Option<MarlConfig>,
    pub q: Option<QConfig>,
    pub sweep: Option<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    #[serde(default = "default_z_values")]
    pub z_values: Vec<usize>,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            z_values: default_z_values(),
        }
    }
}

fn default_z_values() -> Vec<usize> {
    (1..=10).collect()
}

/// A parsed configuration together with where it came from.
#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub config: RunConfig,
    /// Raw table, kept to tell an absent key from a defaulted one.
    pub table: toml::Table,
    pub path: Option<PathBuf>,
}

impl Loaded {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut loaded = Self::parse(&text, path.parent())?;
        loaded.path = Some(path.to_path_buf());
        Ok(loaded)
    }

    /// Parses `text`; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("invalid TOML: {e}")))?;
        let mut config: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        let base = base.unwrap_or_else(|| Path::new(""));
        if let Some(p) = config.phi.as_mut() {
            *p = resolve_existing(base, p, "phi")?;
        }
        if let Some(sweep) = config.sweep.as_mut() {
            for s in &mut sweep.solutions {
                if let Some(p) = s.checkpoint.as_mut() {
                    *p = resolve_existing(base, p, s.kind.name())?;
                }
            }
        }
        Ok(Loaded {
            config,
            table,
            path: None,
        })
    }

    pub fn has_file(&self) -> bool {
        self.path.is_some()
    }

    /// Fails unless the file (when one was given) has section `name`.
    pub fn require_section(&self, name: &str) -> Result<()> {
        if self.has_file() && !self.table.contains_key(name) {
            return Err(Error::config(format!(
                "{} has no [{name}] section",
                self.path.as_ref().unwrap().display()
            )));
        }
        Ok(())
    }

    /// Fails unless `[section]` spells out `key`.
    pub fn require_key(&self, section: &str, key: &str) -> Result<()> {
        self.require_section(section)?;
        if !self.has_file() {
            return Ok(());
        }
        let present = self
            .table
            .get(section)
            .and_then(|v| v.as_table())
            .is_some_and(|t| t.contains_key(key));
        if present {
            Ok(())
        } else {
            Err(Error::config(format!("[{section}] must list `{key}` explicitly")))
        }
    }

    /// Flag first, then the file, then the section's own seed, then zero.
    pub fn root_seed(&self, flag: Option<u64>, section_seed: Option<u64>) -> u64 {
        flag.or(self.config.seed).or(section_seed).unwrap_or(0)
    }

    /// Flag, then the file, then `$MACPROTO_OUT/<command>`, then `runs/<command>`.
    pub fn out_dir(&self, flag: Option<&Path>, command: &str) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = &self.config.out {
            return match &self.path {
                Some(cfg) if p.is_relative() => cfg.parent().unwrap_or(Path::new("")).join(p),
                _ => p.clone(),
            };
        }
        match std::env::var_os(OUT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(command),
            _ => PathBuf::from("runs").join(command),
        }
    }
}

fn resolve_existing(base: &Path, p: &Path, what: &str) -> Result<PathBuf> {
    let full = if p.is_relative() { base.join(p) } else { p.to_path_buf() };
    if !full.is_file() {
        return Err(Error::config(format!("{what} file {} does not exist", full.display())));
    }
    Ok(full)
}

/// Canonical text of the effective settings; its hash goes into every output.
pub fn canonical<T: Serialize>(section: &str, value: &T, seed: u64) -> Result<String> {
    #[derive(Serialize)]
    struct Effective<'a, T> {
        seed: u64,
        section: &'a str,
        settings: &'a T,
    }
    toml::to_string(&Effective {
        seed,
        section,
        settings: value,
    })
    .map_err(|e| Error::config(format!("cannot serialise effective config: {e}")))
}
