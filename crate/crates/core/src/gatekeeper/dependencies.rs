//! Dependency declarations checked against a local advisory snapshot.
//!
//! Recognized: `requirements*.txt` (PyPI) and `package.json` (npm). A
//! ranged specifier is evaluated at its lower bound, the oldest version it
//! admits. Other dependency manifests are reported as INFO and not checked.

use std::cmp::Ordering;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use crate::evidence::Evidence;
use crate::finding::{Finding, FindingDimension, Severity};
use crate::rules::RuleError;
use crate::skill::SkillPackage;

/// Dotted numeric version; missing trailing components compare as zero.
#[derive(Debug, Clone)]
pub struct Version(Vec<u64>);

impl Version {
    /// Parse the leading dotted-numeric part (`1.2.3rc1` reads as `1.2.3`).
    pub fn parse(text: &str) -> Option<Version> {
        let text = text.trim().trim_start_matches(['v', 'V']);
        let mut parts = Vec::new();
        for seg in text.split('.') {
            let digits: String = seg.chars().take_while(|c| c.is_ascii_digit()).collect();
            if digits.is_empty() {
                break;
            }
            parts.push(digits.parse().ok()?);
            if digits.len() != seg.len() {
                break;
            }
        }
        (!parts.is_empty()).then_some(Version(parts))
    }
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        let n = self.0.len().max(other.0.len());
        (0..n)
            .map(|i| {
                let a = self.0.get(i).copied().unwrap_or(0);
                let b = other.0.get(i).copied().unwrap_or(0);
                a.cmp(&b)
            })
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

impl PartialEq for Version {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Version {}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u64::to_string).collect();
        f.write_str(&parts.join("."))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Lt,
    Le,
    Eq,
    Ge,
    Gt,
}

/// Conjunction of comparisons, e.g. `>=2.3.0, <2.31.0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionRange {
    text: String,
    clauses: Vec<(Comparator, Version)>,
}

impl VersionRange {
    pub fn parse(text: &str) -> Result<VersionRange, String> {
        let mut clauses = Vec::new();
        for clause in text.split(',') {
            let c = clause.trim();
            let (op, rest) = if let Some(r) = c.strip_prefix("<=") {
                (Comparator::Le, r)
            } else if let Some(r) = c.strip_prefix(">=") {
                (Comparator::Ge, r)
            } else if let Some(r) = c.strip_prefix("==") {
                (Comparator::Eq, r)
            } else if let Some(r) = c.strip_prefix('<') {
                (Comparator::Lt, r)
            } else if let Some(r) = c.strip_prefix('>') {
                (Comparator::Gt, r)
            } else if let Some(r) = c.strip_prefix('=') {
                (Comparator::Eq, r)
            } else {
                return Err(format!("clause `{c}` lacks a comparator"));
            };
            let v = Version::parse(rest)
                .filter(|_| rest.trim().chars().all(|ch| ch.is_ascii_digit() || ch == '.'))
                .ok_or_else(|| format!("clause `{c}` has no dotted numeric version"))?;
            clauses.push((op, v));
        }
        Ok(VersionRange {
            text: text.trim().to_string(),
            clauses,
        })
    }

    pub fn contains(&self, v: &Version) -> bool {
        self.clauses.iter().all(|(op, bound)| match op {
            Comparator::Lt => v < bound,
            Comparator::Le => v <= bound,
            Comparator::Eq => v == bound,
            Comparator::Ge => v >= bound,
            Comparator::Gt => v > bound,
        })
    }
}

impl fmt::Display for VersionRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AdvisorySeverity {
    Low,
    Moderate,
    High,
    Critical,
}

impl AdvisorySeverity {
    fn parse(label: &str) -> Option<AdvisorySeverity> {
        Some(match label.to_ascii_lowercase().as_str() {
            "low" => AdvisorySeverity::Low,
            "moderate" | "medium" => AdvisorySeverity::Moderate,
            "high" => AdvisorySeverity::High,
            "critical" => AdvisorySeverity::Critical,
            _ => return None,
        })
    }

    pub fn finding_severity(self) -> Severity {
        match self {
            AdvisorySeverity::Critical | AdvisorySeverity::High => Severity::Critical,
            AdvisorySeverity::Moderate => Severity::Warning,
            AdvisorySeverity::Low => Severity::Info,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ecosystem {
    Pypi,
    Npm,
}

impl Ecosystem {
    fn parse(label: &str) -> Option<Ecosystem> {
        match label.to_ascii_lowercase().as_str() {
            "pypi" | "pip" | "python" => Some(Ecosystem::Pypi),
            "npm" | "node" => Some(Ecosystem::Npm),
            _ => None,
        }
    }

    fn normalize_name(self, name: &str) -> String {
        let lower = name.trim().to_ascii_lowercase();
        match self {
            Ecosystem::Pypi => {
                let mut out = String::with_capacity(lower.len());
                for c in lower.chars() {
                    let c = if matches!(c, '_' | '.') { '-' } else { c };
                    if !(c == '-' && out.ends_with('-')) {
                        out.push(c);
                    }
                }
                out
            }
            Ecosystem::Npm => lower,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Advisory {
    pub id: String,
    pub ecosystem: Ecosystem,
    pub package: String,
    pub range: VersionRange,
    pub severity: AdvisorySeverity,
    pub summary: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvisoryFile {
    #[allow(dead_code)]
    schema_version: u32,
    #[serde(default)]
    advisory: Vec<RawAdvisory>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdvisory {
    id: String,
    ecosystem: String,
    package: String,
    range: String,
    severity: String,
    summary: String,
}

#[derive(Debug, Clone, Default)]
pub struct AdvisoryDatabase {
    pub entries: Vec<Advisory>,
}

impl AdvisoryDatabase {
    pub fn parse(text: &str, file: &str) -> Result<AdvisoryDatabase, RuleError> {
        let raw: AdvisoryFile = toml::from_str(text).map_err(|e| RuleError::parse(file, e))?;
        let mut entries = Vec::new();
        for a in raw.advisory {
            let ecosystem = Ecosystem::parse(&a.ecosystem).ok_or_else(|| {
                RuleError::invalid(file, format!("{}: unknown ecosystem {}", a.id, a.ecosystem))
            })?;
            let range = VersionRange::parse(&a.range)
                .map_err(|e| RuleError::invalid(file, format!("{}: {e}", a.id)))?;
            let severity = AdvisorySeverity::parse(&a.severity).ok_or_else(|| {
                RuleError::invalid(file, format!("{}: unknown severity {}", a.id, a.severity))
            })?;
            entries.push(Advisory {
                package: ecosystem.normalize_name(&a.package),
                id: a.id,
                ecosystem,
                range,
                severity,
                summary: a.summary,
            });
        }
        Ok(AdvisoryDatabase { entries })
    }

    pub fn matching<'a>(
        &'a self,
        ecosystem: Ecosystem,
        package: &'a str,
        version: &'a Version,
    ) -> impl Iterator<Item = &'a Advisory> + 'a {
        let name = ecosystem.normalize_name(package);
        self.entries.iter().filter(move |a| {
            a.ecosystem == ecosystem && a.package == name && a.range.contains(version)
        })
    }

    fn knows(&self, ecosystem: Ecosystem, package: &str) -> bool {
        let name = ecosystem.normalize_name(package);
        self.entries.iter().any(|a| a.ecosystem == ecosystem && a.package == name)
    }
}

/// One dependency declaration found in the bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct Dependency {
    pub ecosystem: Ecosystem,
    pub name: String,
    /// Exact or lower-bound version; `None` when unpinned.
    pub version: Option<Version>,
    pub evidence: Evidence,
}

fn requirement_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^\s*([A-Za-z0-9][A-Za-z0-9._-]*)\s*(?:\[[^\]]*\])?\s*(?:(===|==|~=|>=|<=|!=|>|<)\s*([0-9][0-9A-Za-z.*+!-]*))?",
        )
        .unwrap()
    })
}

fn parse_requirements(path: &str, text: &str) -> Vec<Dependency> {
    let mut out = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let start = offset;
        offset += raw.len();
        let line = raw.split('#').next().unwrap_or_default().split(';').next().unwrap_or_default();
        if line.trim().is_empty() || line.trim_start().starts_with('-') {
            continue;
        }
        let Some(c) = requirement_line().captures(line) else {
            continue;
        };
        let name = c.get(1).unwrap();
        let version = match (c.get(2).map(|m| m.as_str()), c.get(3)) {
            (Some("==" | "===" | "~=" | ">="), Some(v)) => Version::parse(&v.as_str().replace('*', "0")),
            _ => None,
        };
        let body = raw.trim_end_matches(['\n', '\r']);
        let lead = body.len() - body.trim_start().len();
        let snippet_end = start + body.trim_end().len();
        out.push(Dependency {
            ecosystem: Ecosystem::Pypi,
            name: name.as_str().to_string(),
            version,
            evidence: Evidence::for_match(path, text, start + lead, snippet_end),
        });
    }
    out
}

fn parse_package_json(path: &str, text: &str) -> Result<Vec<Dependency>, String> {
    let json: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for section in ["dependencies", "devDependencies", "optionalDependencies", "peerDependencies"] {
        let Some(map) = json.get(section).and_then(|v| v.as_object()) else {
            continue;
        };
        for (name, spec) in map {
            let spec = spec.as_str().unwrap_or_default();
            let stripped = spec.trim().trim_start_matches(['^', '~', '=', '>', ' ']);
            let version = if stripped.starts_with(|c: char| c.is_ascii_digit() || c == 'v') {
                Version::parse(stripped)
            } else {
                None
            };
            let pattern = format!(r#""{}"\s*:\s*"[^"]*""#, regex::escape(name));
            let evidence = Regex::new(&pattern)
                .ok()
                .and_then(|re| re.find(text))
                .map(|m| Evidence::for_match(path, text, m.start(), m.end()))
                .or_else(|| Evidence::find(path, text, name))
                .unwrap_or_else(|| Evidence::for_span(path, text, 0, 0));
            out.push(Dependency {
                ecosystem: Ecosystem::Npm,
                name: name.clone(),
                version,
                evidence,
            });
        }
    }
    Ok(out)
}

const UNCHECKED_MANIFESTS: &[&str] = &[
    "Pipfile",
    "Pipfile.lock",
    "poetry.lock",
    "pyproject.toml",
    "package-lock.json",
    "yarn.lock",
    "pnpm-lock.yaml",
    "Gemfile",
    "Gemfile.lock",
    "go.mod",
    "go.sum",
    "Cargo.toml",
    "Cargo.lock",
    "composer.json",
    "environment.yml",
];

fn is_requirements_file(name: &str) -> bool {
    name.starts_with("requirements") && name.ends_with(".txt")
}

/// Dependency declarations in recognized files, plus INFO findings for
/// dependency manifests that are not checked.
pub fn extract_dependencies(package: &SkillPackage) -> (Vec<Dependency>, Vec<Finding>) {
    let mut deps = Vec::new();
    let mut notes = Vec::new();
    for (path, bytes) in package.files() {
        let name = path.rsplit('/').next().unwrap_or(path);
        let text = || std::str::from_utf8(bytes).ok();
        if is_requirements_file(name) {
            if let Some(t) = text() {
                deps.extend(parse_requirements(path, t));
            }
        } else if name == "package.json" {
            match text().ok_or_else(|| "not UTF-8".to_string()).and_then(|t| parse_package_json(path, t)) {
                Ok(d) => deps.extend(d),
                Err(e) => notes.push(Finding::info(
                    "DEP-UNPARSEABLE",
                    FindingDimension::HazardousDependency,
                    format!("{path} could not be parsed ({e}); dependencies not checked"),
                )),
            }
        } else if UNCHECKED_MANIFESTS.contains(&name) {
            notes.push(Finding::info(
                "DEP-UNRECOGNIZED",
                FindingDimension::HazardousDependency,
                format!("dependency file {path} is not a recognized format; not checked"),
            ));
        }
    }
    (deps, notes)
}

pub fn check_dependencies(package: &SkillPackage, db: &AdvisoryDatabase) -> Vec<Finding> {
    let (deps, mut findings) = extract_dependencies(package);
    for dep in &deps {
        match &dep.version {
            Some(v) => {
                for adv in db.matching(dep.ecosystem, &dep.name, v) {
                    findings.push(
                        Finding::new(
                            &adv.id,
                            adv.severity.finding_severity(),
                            FindingDimension::HazardousDependency,
                            format!(
                                "{} {v} is affected by {} ({}): {}",
                                dep.name, adv.id, adv.range, adv.summary
                            ),
                        )
                        .with_evidence(dep.evidence.clone())
                        .with_recommendation(Some(format!(
                            "Upgrade {} to a version outside {}",
                            dep.name, adv.range
                        ))),
                    );
                }
            }
            None if db.knows(dep.ecosystem, &dep.name) => findings.push(
                Finding::new(
                    "DEP-UNPINNED",
                    Severity::Info,
                    FindingDimension::HazardousDependency,
                    format!("{} is unpinned and has known advisories", dep.name),
                )
                .with_evidence(dep.evidence.clone()),
            ),
            None => {}
        }
    }
    findings
}
