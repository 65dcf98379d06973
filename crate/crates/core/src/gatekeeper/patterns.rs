use std::borrow::Cow;

use regex::Regex;
use serde::Deserialize;

use crate::evidence::Evidence;
use crate::finding::{Finding, FindingDimension, Severity};
use crate::rules::{compile, RuleError};
use crate::skill::{LanguageHint, SkillPackage};

/// Which files a pattern applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileTarget {
    Doc,
    Script,
    Any,
    Language(LanguageHint),
}

impl FileTarget {
    pub fn parse(label: &str) -> Option<FileTarget> {
        Some(match label {
            "doc" => FileTarget::Doc,
            "script" => FileTarget::Script,
            "any" => FileTarget::Any,
            "shell" => FileTarget::Language(LanguageHint::Shell),
            "python" => FileTarget::Language(LanguageHint::PythonLike),
            "javascript" => FileTarget::Language(LanguageHint::JavascriptLike),
            _ => return None,
        })
    }
}

/// Files selected by `target`, as (path, text), in package order: docs,
/// scripts, then UTF-8 assets (for `any` only).
pub fn target_files(package: &SkillPackage, target: FileTarget) -> Vec<(&str, Cow<'_, str>)> {
    let mut out: Vec<(&str, Cow<'_, str>)> = Vec::new();
    if matches!(target, FileTarget::Doc | FileTarget::Any) {
        out.extend(
            package
                .documentation
                .iter()
                .map(|d| (d.path.as_str(), Cow::Borrowed(d.text.as_str()))),
        );
    }
    for s in &package.scripts {
        let wanted = match target {
            FileTarget::Script | FileTarget::Any => true,
            FileTarget::Language(h) => s.language_hint == h,
            FileTarget::Doc => false,
        };
        if wanted {
            out.push((s.path.as_str(), s.text()));
        }
    }
    if target == FileTarget::Any {
        out.extend(package.assets.iter().filter_map(|a| {
            std::str::from_utf8(&a.bytes)
                .ok()
                .map(|t| (a.path.as_str(), Cow::Borrowed(t)))
        }));
    }
    out
}

/// Span of the line containing byte `at`.
pub(crate) fn line_around(text: &str, at: usize) -> &str {
    let start = text[..at].rfind('\n').map_or(0, |i| i + 1);
    let end = text[at..].find('\n').map_or(text.len(), |i| at + i);
    &text[start..end]
}

/// Matches of `regex` in `text` whose line does not match `unless`.
pub(crate) fn matches_unless<'t>(
    regex: &'t Regex,
    unless: Option<&'t Regex>,
    text: &'t str,
) -> impl Iterator<Item = regex::Match<'t>> + 't {
    regex.find_iter(text).filter(move |m| {
        !m.as_str().is_empty() && !unless.is_some_and(|u| u.is_match(line_around(text, m.start())))
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawPatternRule {
    pub set: String,
    pub id: String,
    pub severity: String,
    pub target: String,
    pub pattern: String,
    pub message: String,
    pub recommendation: Option<String>,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

#[derive(Debug, Clone)]
pub struct PatternRule {
    pub id: String,
    pub severity: Severity,
    pub target: FileTarget,
    pub regex: Regex,
    pub message: String,
    pub recommendation: Option<String>,
    pub enabled: bool,
}

impl PatternRule {
    pub(crate) fn from_raw(raw: RawPatternRule, file: &str) -> Result<PatternRule, RuleError> {
        let severity = Severity::parse(&raw.severity).ok_or_else(|| {
            RuleError::invalid(file, format!("{}: unknown severity {}", raw.id, raw.severity))
        })?;
        let target = FileTarget::parse(&raw.target).ok_or_else(|| {
            RuleError::invalid(file, format!("{}: unknown target {}", raw.id, raw.target))
        })?;
        Ok(PatternRule {
            regex: compile(file, &raw.id, &raw.pattern)?,
            id: raw.id,
            severity,
            target,
            message: raw.message,
            recommendation: raw.recommendation,
            enabled: raw.enabled,
        })
    }
}

/// A named group of pattern rules evaluated by one gate.
#[derive(Debug, Clone, Default)]
pub struct PatternRuleSet {
    pub name: String,
    pub rules: Vec<PatternRule>,
}

impl PatternRuleSet {
    pub fn set_enabled(&mut self, target: FileTarget, enabled: bool) {
        for r in self.rules.iter_mut().filter(|r| r.target == target) {
            r.enabled = enabled;
        }
    }
}

/// One finding per occurrence of each enabled rule, ordered by file path,
/// offset and rule id.
pub fn scan_patterns(
    package: &SkillPackage,
    rules: &PatternRuleSet,
    dimension: FindingDimension,
) -> Vec<Finding> {
    let mut found = Vec::new();
    for rule in rules.rules.iter().filter(|r| r.enabled) {
        for (path, text) in target_files(package, rule.target) {
            for m in rule.regex.find_iter(&text) {
                if m.as_str().is_empty() {
                    continue;
                }
                let ev = Evidence::for_match(path, &text, m.start(), m.end());
                found.push(
                    Finding::new(&rule.id, rule.severity, dimension, &rule.message)
                        .with_evidence(ev)
                        .with_recommendation(rule.recommendation.clone()),
                );
            }
        }
    }
    found.sort_by(|a, b| {
        let ka = a.evidence.as_ref().map(|e| (e.path.as_str(), e.offset));
        let kb = b.evidence.as_ref().map(|e| (e.path.as_str(), e.offset));
        ka.cmp(&kb).then_with(|| a.finding_id.cmp(&b.finding_id))
    });
    found
}

pub fn scan_malicious_patterns(package: &SkillPackage, rules: &PatternRuleSet) -> Vec<Finding> {
    scan_patterns(package, rules, FindingDimension::MaliciousCode)
}
