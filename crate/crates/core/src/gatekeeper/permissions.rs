use regex::Regex;
use serde::Deserialize;

use crate::alignment::fold_label;
use crate::evidence::Evidence;
use crate::finding::{Finding, FindingDimension, Severity};
use crate::rules::{compile, RuleError};
use crate::skill::{LanguageHint, SkillPackage};

use super::patterns::{matches_unless, target_files, FileTarget};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawPermission {
    label: String,
    #[serde(default)]
    aliases: Vec<String>,
    #[serde(default)]
    structure: Vec<String>,
    #[serde(default)]
    patterns: Vec<RawSurfacePattern>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSurfacePattern {
    target: String,
    pattern: String,
    unless: Option<String>,
}

/// Structural surfaces that stand in for a permission without any pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureSurface {
    ShellScripts,
}

impl StructureSurface {
    fn parse(label: &str) -> Option<StructureSurface> {
        match label {
            "shell_scripts" => Some(StructureSurface::ShellScripts),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurfacePattern {
    pub target: FileTarget,
    pub regex: Regex,
    pub unless: Option<Regex>,
}

#[derive(Debug, Clone)]
pub struct PermissionEntry {
    pub label: String,
    pub aliases: Vec<String>,
    pub structure: Vec<StructureSurface>,
    pub patterns: Vec<SurfacePattern>,
}

impl PermissionEntry {
    fn answers_to(&self, folded: &str) -> bool {
        fold_label(&self.label) == folded || self.aliases.iter().any(|a| fold_label(a) == folded)
    }

    /// First piece of evidence that the bundle exposes this surface.
    pub fn surface(&self, package: &SkillPackage) -> Option<Evidence> {
        for s in &self.structure {
            match s {
                StructureSurface::ShellScripts => {
                    let hit = package.scripts.iter().find_map(|sc| {
                        if sc.language_hint != LanguageHint::Shell {
                            return None;
                        }
                        let text = sc.text();
                        let (start, line) = text
                            .split_inclusive('\n')
                            .scan(0, |pos, l| {
                                let at = *pos;
                                *pos += l.len();
                                Some((at, l))
                            })
                            .find(|(_, l)| !l.trim().is_empty())?;
                        Some(Evidence::for_span(&sc.path, &text, start, start + line.trim_end().len()))
                    });
                    if hit.is_some() {
                        return hit;
                    }
                }
            }
        }
        for p in &self.patterns {
            for (path, text) in target_files(package, p.target) {
                if let Some(m) = matches_unless(&p.regex, p.unless.as_ref(), &text).next() {
                    return Some(Evidence::for_match(path, &text, m.start(), m.end()));
                }
            }
        }
        None
    }
}

/// Declared permission label → structural evidence mapping.
#[derive(Debug, Clone, Default)]
pub struct PermissionTable {
    pub entries: Vec<PermissionEntry>,
}

impl PermissionTable {
    pub(crate) fn from_raw(raw: Vec<RawPermission>, file: &str) -> Result<PermissionTable, RuleError> {
        let mut entries: Vec<PermissionEntry> = Vec::new();
        for r in raw {
            let mut structure = Vec::new();
            for s in &r.structure {
                structure.push(StructureSurface::parse(s).ok_or_else(|| {
                    RuleError::invalid(file, format!("permission {}: unknown structure {s}", r.label))
                })?);
            }
            let mut patterns = Vec::new();
            for (i, p) in r.patterns.iter().enumerate() {
                let id = format!("permission:{}#{i}", r.label);
                let target = FileTarget::parse(&p.target).ok_or_else(|| {
                    RuleError::invalid(file, format!("{id}: unknown target {}", p.target))
                })?;
                patterns.push(SurfacePattern {
                    target,
                    regex: compile(file, &id, &p.pattern)?,
                    unless: p.unless.as_deref().map(|u| compile(file, &id, u)).transpose()?,
                });
            }
            let entry = PermissionEntry {
                label: r.label,
                aliases: r.aliases,
                structure,
                patterns,
            };
            let names = std::iter::once(&entry.label).chain(&entry.aliases);
            for name in names {
                if entries.iter().any(|e| e.answers_to(&fold_label(name))) {
                    return Err(RuleError::invalid(file, format!("permission label {name} defined twice")));
                }
            }
            entries.push(entry);
        }
        Ok(PermissionTable { entries })
    }

    pub fn lookup(&self, label: &str) -> Option<&PermissionEntry> {
        let folded = fold_label(label);
        self.entries.iter().find(|e| e.answers_to(&folded))
    }
}

fn declaration_evidence(package: &SkillPackage, label: &str) -> Option<Evidence> {
    let manifest = package.manifest_file();
    let text = &manifest.text;
    let anchor = text.find("permissions").unwrap_or(0);
    text[anchor..]
        .find(label)
        .map(|pos| Evidence::exact(&manifest.path, text, anchor + pos, anchor + pos + label.len()))
        .or_else(|| Evidence::find(&manifest.path, text, label))
}

/// WARNING per declared permission without a surface, and per surface
/// without a covering declaration. Labels missing from the table are
/// ignored here; the alignment phase reports them.
pub fn check_permission_rationality(package: &SkillPackage, table: &PermissionTable) -> Vec<Finding> {
    let mut findings = Vec::new();
    let mut covered = vec![false; table.entries.len()];
    for label in &package.manifest.declared_permissions {
        let Some(idx) = table.entries.iter().position(|e| e.answers_to(&fold_label(label))) else {
            continue;
        };
        let entry = &table.entries[idx];
        if covered[idx] {
            continue;
        }
        covered[idx] = true;
        if entry.surface(package).is_none() {
            let mut f = Finding::new(
                "PRM-UNUSED-DECLARATION",
                Severity::Warning,
                FindingDimension::PermissionRationality,
                format!("permission `{label}` is declared but nothing in the bundle uses it"),
            )
            .with_recommendation(Some(format!("Drop `{label}` from the declared permissions")));
            if let Some(ev) = declaration_evidence(package, label) {
                f = f.with_evidence(ev);
            }
            findings.push(f);
        }
    }
    for (idx, entry) in table.entries.iter().enumerate() {
        if covered[idx] {
            continue;
        }
        if let Some(ev) = entry.surface(package) {
            findings.push(
                Finding::new(
                    "PRM-UNDECLARED-SURFACE",
                    Severity::Warning,
                    FindingDimension::PermissionRationality,
                    format!("bundle uses `{}` without declaring it", entry.label),
                )
                .with_evidence(ev)
                .with_recommendation(Some(format!(
                    "Declare the `{}` permission or remove the code that needs it",
                    entry.label
                ))),
            );
        }
    }
    findings
}
