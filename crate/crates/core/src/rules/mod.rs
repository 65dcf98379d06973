//! Declarative rule bundles.
//!
//! Audit logic ships as versioned TOML data: gate roster and pattern rules,
//! advisory snapshot, capability lexicon, normalization and severity tables,
//! code analyzers, risk tag rules, risk-link policies and provider tables.
//! Every file declares `schema_version`; unknown versions are rejected, and
//! all patterns are compiled at load time.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alignment::{
    AnalyzerRegistry, CapabilityLexicon, DeviationSeverityTable, NormalizationTable,
};
use crate::flow::{parse_policies, RiskLinkPolicy, TagRuleSet};
use crate::gatekeeper::{AdvisoryDatabase, GateConfig};
use crate::provider::ProviderTables;

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}: {message}")]
    Parse { file: String, message: String },
    #[error("{file}: unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    UnsupportedSchema { file: String, found: String },
    #[error("{file}: pattern `{id}` does not compile: {message}")]
    PatternCompile {
        file: String,
        id: String,
        message: String,
    },
    #[error("{file}: {message}")]
    Invalid { file: String, message: String },
}

impl RuleError {
    pub fn parse(file: &str, message: impl fmt::Display) -> RuleError {
        RuleError::Parse {
            file: file.to_string(),
            message: message.to_string(),
        }
    }

    pub fn invalid(file: &str, message: impl fmt::Display) -> RuleError {
        RuleError::Invalid {
            file: file.to_string(),
            message: message.to_string(),
        }
    }
}

/// Compile a rule pattern, attributing failures to the rule.
pub fn compile(file: &str, id: &str, pattern: &str) -> Result<Regex, RuleError> {
    regex::RegexBuilder::new(pattern)
        .multi_line(true)
        .size_limit(1 << 22)
        .build()
        .map_err(|e| RuleError::PatternCompile {
            file: file.to_string(),
            id: id.to_string(),
            message: e.to_string(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuleFile {
    Gates,
    Advisories,
    Lexicon,
    Normalization,
    Severity,
    Analyzers,
    TagRules,
    Policies,
    Provider,
}

impl RuleFile {
    pub const ALL: [RuleFile; 9] = [
        RuleFile::Gates,
        RuleFile::Advisories,
        RuleFile::Lexicon,
        RuleFile::Normalization,
        RuleFile::Severity,
        RuleFile::Analyzers,
        RuleFile::TagRules,
        RuleFile::Policies,
        RuleFile::Provider,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            RuleFile::Gates => "gates.toml",
            RuleFile::Advisories => "advisories.toml",
            RuleFile::Lexicon => "lexicon.toml",
            RuleFile::Normalization => "normalization.toml",
            RuleFile::Severity => "severity.toml",
            RuleFile::Analyzers => "analyzers.toml",
            RuleFile::TagRules => "tag_rules.toml",
            RuleFile::Policies => "policies.toml",
            RuleFile::Provider => "provider.toml",
        }
    }

    pub fn embedded(self) -> &'static str {
        match self {
            RuleFile::Gates => include_str!("../../rules/gates.toml"),
            RuleFile::Advisories => include_str!("../../rules/advisories.toml"),
            RuleFile::Lexicon => include_str!("../../rules/lexicon.toml"),
            RuleFile::Normalization => include_str!("../../rules/normalization.toml"),
            RuleFile::Severity => include_str!("../../rules/severity.toml"),
            RuleFile::Analyzers => include_str!("../../rules/analyzers.toml"),
            RuleFile::TagRules => include_str!("../../rules/tag_rules.toml"),
            RuleFile::Policies => include_str!("../../rules/policies.toml"),
            RuleFile::Provider => include_str!("../../rules/provider.toml"),
        }
    }
}

/// Reject files whose `schema_version` is missing or unknown.
pub fn check_schema(file: &str, text: &str) -> Result<(), RuleError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| RuleError::parse(file, e))?;
    match table.get("schema_version") {
        Some(toml::Value::Integer(SCHEMA_VERSION)) => Ok(()),
        Some(other) => Err(RuleError::UnsupportedSchema {
            file: file.to_string(),
            found: other.to_string(),
        }),
        None => Err(RuleError::UnsupportedSchema {
            file: file.to_string(),
            found: "<missing>".to_string(),
        }),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Every loaded table, plus the digests recorded into reports.
#[derive(Debug, Clone)]
pub struct RuleRepository {
    pub gates: GateConfig,
    pub advisories: AdvisoryDatabase,
    pub lexicon: CapabilityLexicon,
    pub normalization: NormalizationTable,
    pub severity: DeviationSeverityTable,
    pub analyzers: AnalyzerRegistry,
    pub tag_rules: TagRuleSet,
    pub policies: Vec<RiskLinkPolicy>,
    pub provider_tables: ProviderTables,
    file_digests: BTreeMap<RuleFile, String>,
    sources: BTreeMap<RuleFile, String>,
}

impl RuleRepository {
    /// The bundle compiled into the binary.
    pub fn defaults() -> RuleRepository {
        RuleRepository::from_sources(BTreeMap::new())
            .expect("embedded rule bundle is valid (checked by the test suite)")
    }

    /// Load a rules directory. Files absent from the directory fall back to
    /// the embedded defaults, so a directory may override any subset.
    pub fn load_dir(dir: &Path) -> Result<RuleRepository, RuleError> {
        if !dir.is_dir() {
            return Err(RuleError::Io {
                path: dir.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
            });
        }
        let mut overrides = BTreeMap::new();
        for file in RuleFile::ALL {
            let path = dir.join(file.file_name());
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|source| RuleError::Io {
                    path: path.clone(),
                    source,
                })?;
                overrides.insert(file, text);
            }
        }
        RuleRepository::from_sources(overrides)
    }

    /// Build from explicit file texts; missing entries use the embedded
    /// defaults.
    pub fn from_sources(
        mut overrides: BTreeMap<RuleFile, String>,
    ) -> Result<RuleRepository, RuleError> {
        let mut sources = BTreeMap::new();
        for file in RuleFile::ALL {
            let text = overrides
                .remove(&file)
                .unwrap_or_else(|| file.embedded().to_string());
            check_schema(file.file_name(), &text)?;
            sources.insert(file, text);
        }
        let text = |f: RuleFile| sources[&f].as_str();

        let normalization = NormalizationTable::parse(text(RuleFile::Normalization))
            .map_err(|e| RuleError::invalid(RuleFile::Normalization.file_name(), e))?;
        let gates = GateConfig::parse(text(RuleFile::Gates), RuleFile::Gates.file_name())?;
        let advisories =
            AdvisoryDatabase::parse(text(RuleFile::Advisories), RuleFile::Advisories.file_name())?;
        let lexicon = CapabilityLexicon::parse(
            text(RuleFile::Lexicon),
            RuleFile::Lexicon.file_name(),
            &normalization,
        )?;
        let severity =
            DeviationSeverityTable::parse(text(RuleFile::Severity), RuleFile::Severity.file_name())?;
        let analyzers = AnalyzerRegistry::parse(
            text(RuleFile::Analyzers),
            RuleFile::Analyzers.file_name(),
            &normalization,
        )?;
        let tag_rules = TagRuleSet::parse(
            text(RuleFile::TagRules),
            RuleFile::TagRules.file_name(),
            &normalization,
        )?;
        let policies = parse_policies(text(RuleFile::Policies), RuleFile::Policies.file_name())?;
        let provider_tables =
            ProviderTables::parse(text(RuleFile::Provider), RuleFile::Provider.file_name())?;

        let file_digests = sources
            .iter()
            .map(|(f, t)| (*f, sha256_hex(t.as_bytes())))
            .collect();
        Ok(RuleRepository {
            gates,
            advisories,
            lexicon,
            normalization,
            severity,
            analyzers,
            tag_rules,
            policies,
            provider_tables,
            file_digests,
            sources,
        })
    }

    pub fn file_digest(&self, file: RuleFile) -> &str {
        &self.file_digests[&file]
    }

    pub fn source(&self, file: RuleFile) -> &str {
        &self.sources[&file]
    }

    /// Digest over every rule file except the policy file.
    pub fn rules_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (file, digest) in &self.file_digests {
            if *file == RuleFile::Policies {
                continue;
            }
            hasher.update(file.file_name().as_bytes());
            hasher.update([0]);
            hasher.update(digest.as_bytes());
            hasher.update([b'\n']);
        }
        hex::encode(hasher.finalize())
    }

    pub fn policy_digest(&self) -> String {
        self.file_digests[&RuleFile::Policies].clone()
    }
}

/// Outcome of validating one rule file.
#[derive(Debug)]
pub struct FileValidation {
    pub file: RuleFile,
    /// False when the file is absent and the embedded default applies.
    pub present: bool,
    pub result: Result<(), RuleError>,
}

/// Validate each file of a rules directory independently (the embedded
/// defaults stand in for the others), so every broken file is reported.
pub fn validate_dir(dir: Option<&Path>) -> Vec<FileValidation> {
    RuleFile::ALL
        .iter()
        .map(|&file| {
            let (present, loaded) = match dir.map(|d| d.join(file.file_name())) {
                Some(path) if path.exists() => (
                    true,
                    fs::read_to_string(&path).map_err(|source| RuleError::Io { path, source }),
                ),
                _ => (false, Ok(file.embedded().to_string())),
            };
            let result = loaded.and_then(|text| {
                RuleRepository::from_sources(BTreeMap::from([(file, text)])).map(|_| ())
            });
            FileValidation {
                file,
                present,
                result,
            }
        })
        .collect()
}

/// Write the embedded bundle into `dir` (created if needed).
pub fn export_defaults(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    RuleFile::ALL
        .iter()
        .map(|f| {
            let path = dir.join(f.file_name());
            fs::write(&path, f.embedded())?;
            Ok(path)
        })
        .collect()
}
