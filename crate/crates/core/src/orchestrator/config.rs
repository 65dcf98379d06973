use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::DEFAULT_BUDGET;
use crate::provider::{DeterministicProvider, InferenceProvider, ProviderTables, RemoteProvider};
use crate::rules::SCHEMA_VERSION;
use crate::verdict::AuditMode;

pub const DEFAULT_TOKEN_ENV: &str = "SKILLAUDIT_PROVIDER_TOKEN";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    UnsupportedSchema(i64),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    Deterministic,
    Remote,
    /// Rule-based extraction only; no suggestions at all.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderBinding {
    #[serde(default)]
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_token_env")]
    pub token_env: String,
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_retries() -> u32 {
    2
}

fn default_token_env() -> String {
    DEFAULT_TOKEN_ENV.to_string()
}

impl Default for ProviderBinding {
    fn default() -> Self {
        ProviderBinding {
            kind: ProviderKind::Deterministic,
            endpoint: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            token_env: default_token_env(),
        }
    }
}

impl ProviderBinding {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.kind == ProviderKind::Remote {
            let ok = self
                .endpoint
                .as_deref()
                .is_some_and(|e| e.starts_with("http://") || e.starts_with("https://"));
            if !ok {
                return Err(ConfigError::Invalid(
                    "remote provider needs an http(s) endpoint".into(),
                ));
            }
        }
        Ok(())
    }

    /// Identity folded into the rules digest: results depend on it.
    pub fn identity(&self) -> String {
        match self.kind {
            ProviderKind::Deterministic => "deterministic".into(),
            ProviderKind::None => "none".into(),
            ProviderKind::Remote => format!("remote:{}", self.endpoint.as_deref().unwrap_or_default()),
        }
    }

    pub fn build(&self, tables: &ProviderTables) -> Option<Box<dyn InferenceProvider>> {
        match self.kind {
            ProviderKind::None => None,
            ProviderKind::Deterministic => Some(Box::new(DeterministicProvider::new(tables.clone()))),
            ProviderKind::Remote => {
                let token = std::env::var(&self.token_env).ok().filter(|t| !t.is_empty());
                Some(Box::new(RemoteProvider::new(
                    self.endpoint.clone().unwrap_or_default(),
                    Duration::from_millis(self.timeout_ms),
                    self.max_retries,
                    token,
                )))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub mode: AuditMode,
    /// Directory overriding the embedded rule bundle, file by file.
    pub rules_dir: Option<PathBuf>,
    /// JSONL registry file; in-memory when absent.
    pub registry: Option<PathBuf>,
    pub budget: usize,
    pub workers: usize,
    /// Gate ids to run, in roster order; the whole roster when absent.
    pub gates: Option<Vec<String>>,
    pub provider: ProviderBinding,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            mode: AuditMode::Standard,
            rules_dir: None,
            registry: None,
            budget: DEFAULT_BUDGET,
            workers: default_workers(),
            gates: None,
            provider: ProviderBinding::default(),
        }
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(16)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schema_version: i64,
    #[serde(default)]
    mode: Option<AuditMode>,
    #[serde(default)]
    rules_dir: Option<PathBuf>,
    #[serde(default)]
    registry: Option<PathBuf>,
    #[serde(default)]
    budget: Option<usize>,
    #[serde(default)]
    workers: Option<usize>,
    #[serde(default)]
    gates: Option<Vec<String>>,
    #[serde(default)]
    provider: Option<ProviderBinding>,
}

impl AuditConfig {
    /// Parse config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<AuditConfig, ConfigError> {
        let raw: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::UnsupportedSchema(raw.schema_version));
        }
        let resolve = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
        let d = AuditConfig::default();
        let config = AuditConfig {
            mode: raw.mode.unwrap_or(d.mode),
            rules_dir: raw.rules_dir.map(resolve),
            registry: raw.registry.map(resolve),
            budget: raw.budget.unwrap_or(d.budget),
            workers: raw.workers.unwrap_or(d.workers),
            gates: raw.gates,
            provider: raw.provider.unwrap_or_default(),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<AuditConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        AuditConfig::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if let Some(dir) = &self.rules_dir {
            if !dir.is_dir() {
                return Err(ConfigError::Invalid(format!("rules_dir {} is not a directory", dir.display())));
            }
        }
        if self.gates.as_ref().is_some_and(Vec::is_empty) {
            return Err(ConfigError::Invalid("gates list is empty".into()));
        }
        self.provider.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let c = AuditConfig::parse("schema_version = 1\n", Path::new("/x")).unwrap();
        assert_eq!(c.mode, AuditMode::Standard);
        assert_eq!(c.budget, DEFAULT_BUDGET);
        assert_eq!(c.provider.kind, ProviderKind::Deterministic);
    }

    #[test]
    fn full_config() {
        let text = "schema_version = 1\nmode = \"quick\"\nregistry = \"reg.jsonl\"\nbudget = 10\nworkers = 3\ngates = [\"compliance\"]\n[provider]\nkind = \"remote\"\nendpoint = \"http://127.0.0.1:9/infer\"\ntimeout_ms = 50\n";
        let c = AuditConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(c.mode, AuditMode::Quick);
        assert_eq!(c.registry.as_deref(), Some(Path::new("/base/reg.jsonl")));
        assert_eq!(c.provider.max_retries, 2);
        assert_eq!(c.provider.token_env, DEFAULT_TOKEN_ENV);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(
            AuditConfig::parse("schema_version = 2\n", Path::new(".")),
            Err(ConfigError::UnsupportedSchema(2))
        ));
        assert!(AuditConfig::parse("schema_version = 1\nbogus = 1\n", Path::new(".")).is_err());
        assert!(AuditConfig::parse("schema_version = 1\n[provider]\nkind = \"remote\"\n", Path::new(".")).is_err());
        assert!(AuditConfig::parse("schema_version = 1\nworkers = 0\n", Path::new(".")).is_err());
    }

    #[test]
    fn deterministic_ignores_endpoint() {
        let text = "schema_version = 1\n[provider]\nkind = \"deterministic\"\nendpoint = \"not a url\"\n";
        let c = AuditConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(c.provider.identity(), "deterministic");
    }
}
