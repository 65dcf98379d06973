use std::collections::HashMap;

use regex::Regex;
use serde::Deserialize;

use crate::evidence::Evidence;
use crate::finding::{Finding, FindingDimension};
use crate::rules::{compile, RuleError};
use crate::skill::SkillPackage;

use super::capability::{fold_label, Capability, CapabilitySet, NormalizationTable, Normalized, Origin};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    #[allow(dead_code)]
    schema_version: u32,
    #[serde(default)]
    entry: Vec<RawEntry>,
    #[serde(default)]
    permission: Vec<RawPermission>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    id: String,
    pattern: String,
    resource: String,
    access: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPermission {
    label: String,
    resource: String,
    access: String,
}

#[derive(Debug, Clone)]
struct LexiconEntry {
    id: String,
    regex: Regex,
    capability: Normalized,
}

/// Documentation phrases and manifest permission labels that declare
/// capabilities.
#[derive(Debug, Clone)]
pub struct CapabilityLexicon {
    entries: Vec<LexiconEntry>,
    permissions: HashMap<String, Normalized>,
}

impl CapabilityLexicon {
    pub fn parse(
        text: &str,
        file: &str,
        norm: &NormalizationTable,
    ) -> Result<CapabilityLexicon, RuleError> {
        let raw: LexiconFile = toml::from_str(text).map_err(|e| RuleError::parse(file, e))?;
        let mut entries = Vec::with_capacity(raw.entry.len());
        for e in raw.entry {
            if entries.iter().any(|x: &LexiconEntry| x.id == e.id) {
                return Err(RuleError::invalid(file, format!("duplicate entry id {}", e.id)));
            }
            let capability = norm
                .normalize(&e.resource, &e.access)
                .map_err(|err| RuleError::invalid(file, format!("{}: {err}", e.id)))?;
            entries.push(LexiconEntry {
                regex: compile(file, &e.id, &e.pattern)?,
                id: e.id,
                capability,
            });
        }
        let mut permissions = HashMap::new();
        for p in raw.permission {
            let capability = norm
                .normalize(&p.resource, &p.access)
                .map_err(|err| RuleError::invalid(file, format!("permission {}: {err}", p.label)))?;
            if permissions.insert(fold_label(&p.label), capability).is_some() {
                return Err(RuleError::invalid(
                    file,
                    format!("duplicate permission label {}", p.label),
                ));
            }
        }
        Ok(CapabilityLexicon {
            entries,
            permissions,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn permission_evidence(path: &str, text: &str, label: &str) -> Evidence {
    let anchor = text.find("permissions").unwrap_or(0);
    if let Some(pos) = text[anchor..].find(label) {
        let at = anchor + pos;
        return Evidence::exact(path, text, at, at + label.len());
    }
    Evidence::find(path, text, label).unwrap_or_else(|| Evidence::for_span(path, text, 0, 0))
}

/// Extract D(s) from every documentation file and the manifest permission
/// list. Duplicates keep the earliest citation (file, then offset).
pub fn extract_declared(
    package: &SkillPackage,
    lexicon: &CapabilityLexicon,
    norm: &NormalizationTable,
) -> (CapabilitySet, Vec<Finding>) {
    let mut set = CapabilitySet::new(&package.id, Origin::Declared);
    let mut findings = Vec::new();
    let mut candidates: Vec<(Capability, Option<Finding>)> = Vec::new();

    for doc in &package.documentation {
        for entry in &lexicon.entries {
            for m in entry.regex.find_iter(&doc.text) {
                if m.as_str().is_empty() {
                    continue;
                }
                let ev = Evidence::for_match(&doc.path, &doc.text, m.start(), m.end());
                let info = entry.capability.info_finding(&format!("lexicon entry {}", entry.id));
                candidates.push((
                    Capability::deterministic(entry.capability.key.clone(), ev, &entry.id),
                    info,
                ));
            }
        }
    }

    let manifest = package.manifest_file();
    for label in &package.manifest.declared_permissions {
        let folded = fold_label(label);
        let normalized = lexicon.permissions.get(&folded).cloned().or_else(|| {
            let (r, a) = label.split_once(':')?;
            norm.normalize(r, a).ok()
        });
        let Some(normalized) = normalized else {
            findings.push(Finding::info(
                "ALN-UNMAPPED-PERMISSION",
                FindingDimension::SemanticConsistency,
                format!("permission label `{label}` has no capability mapping"),
            ));
            continue;
        };
        let ev = permission_evidence(&manifest.path, &manifest.text, label);
        let info = normalized.info_finding(&format!("permission `{label}`"));
        candidates.push((
            Capability::deterministic(normalized.key, ev, &format!("permission:{folded}")),
            info,
        ));
    }

    candidates.sort_by(|(a, _), (b, _)| {
        (a.evidence.path.as_str(), a.evidence.offset, a.rule_id.as_str()).cmp(&(
            b.evidence.path.as_str(),
            b.evidence.offset,
            b.rule_id.as_str(),
        ))
    });
    for (cap, info) in candidates {
        if let Some(f) = info {
            if !findings.iter().any(|x: &Finding| x.message == f.message) {
                findings.push(f);
            }
        }
        set.insert(cap);
    }
    (set, findings)
}
