//! Front-matter manifest of SKILL.md.
//!
//! ```markdown
//! ---
//! name: github
//! description: Interact with GitHub using the gh CLI.
//! permissions: [network, shell]
//! license: MIT
//! ---
//!
//! # github
//! ...
//! ```
//!
//! `name`, `description` and `permissions` are recognized; every other key is
//! preserved in [`Manifest::extra`]. Without front-matter the name falls back
//! to the first top-level heading (then to the directory name) and the
//! description to the first paragraph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("manifest front-matter is malformed: {0}")]
    Malformed(String),
    #[error("no front-matter and no inferable skill name")]
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub declared_permissions: Vec<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn version(&self) -> Option<String> {
        match self.extra.get("version")? {
            serde_json::Value::String(s) => Some(s.clone()),
            serde_json::Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    }

    /// Render as a front-matter block (including delimiters).
    pub fn to_front_matter(&self) -> String {
        let mut map = serde_yaml::Mapping::new();
        map.insert("name".into(), self.name.clone().into());
        map.insert("description".into(), self.description.clone().into());
        if !self.declared_permissions.is_empty() {
            let perms = self
                .declared_permissions
                .iter()
                .map(|p| serde_yaml::Value::from(p.clone()))
                .collect::<Vec<_>>();
            map.insert("permissions".into(), serde_yaml::Value::Sequence(perms));
        }
        for (k, v) in &self.extra {
            let v = serde_yaml::to_value(v).unwrap_or(serde_yaml::Value::Null);
            map.insert(k.clone().into(), v);
        }
        let yaml = serde_yaml::to_string(&map).unwrap_or_default();
        format!("---\n{yaml}---\n")
    }
}

struct FrontMatter<'a> {
    yaml: &'a str,
    body: &'a str,
}

fn split_front_matter(text: &str) -> Result<Option<FrontMatter<'_>>, ManifestError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.split_inclusive('\n');
    let Some(first) = lines.next() else {
        return Ok(None);
    };
    if first.trim_end() != "---" {
        return Ok(None);
    }
    let yaml_start = first.len();
    let mut pos = yaml_start;
    for line in lines {
        let trimmed = line.trim_end();
        if trimmed == "---" || trimmed == "..." {
            return Ok(Some(FrontMatter {
                yaml: &text[yaml_start..pos],
                body: &text[pos + line.len()..],
            }));
        }
        pos += line.len();
    }
    Err(ManifestError::Malformed(
        "opening '---' without a closing delimiter".into(),
    ))
}

fn yaml_key(key: &serde_yaml::Value) -> String {
    match key {
        serde_yaml::Value::String(s) => s.clone(),
        other => serde_yaml::to_string(other)
            .unwrap_or_default()
            .trim()
            .to_string(),
    }
}

fn permission_list(value: &serde_yaml::Value) -> Result<Vec<String>, ManifestError> {
    match value {
        serde_yaml::Value::Null => Ok(Vec::new()),
        serde_yaml::Value::String(s) => Ok(s
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .map(str::to_string)
            .collect()),
        serde_yaml::Value::Sequence(items) => items
            .iter()
            .map(|item| match item {
                serde_yaml::Value::String(s) => Ok(s.trim().to_string()),
                other => Err(ManifestError::Malformed(format!(
                    "permission entries must be strings, got {other:?}"
                ))),
            })
            .collect(),
        other => Err(ManifestError::Malformed(format!(
            "permissions must be a list or string, got {other:?}"
        ))),
    }
}

fn first_heading(body: &str) -> Option<String> {
    body.lines()
        .map(str::trim)
        .find_map(|l| l.strip_prefix("# "))
        .map(|h| h.trim().to_string())
        .filter(|h| !h.is_empty())
}

/// First paragraph of prose: consecutive non-blank lines that are not
/// headings, fences, or list/table markup, joined by spaces.
fn first_paragraph(body: &str) -> String {
    let mut para: Vec<&str> = Vec::new();
    let mut in_fence = false;
    for line in body.lines() {
        let t = line.trim();
        if t.starts_with("```") {
            in_fence = !in_fence;
            if !para.is_empty() {
                break;
            }
            continue;
        }
        if in_fence {
            continue;
        }
        if t.is_empty() || t.starts_with('#') {
            if !para.is_empty() {
                break;
            }
            continue;
        }
        if para.is_empty() && (t.starts_with('|') || t.starts_with("<!--")) {
            continue;
        }
        para.push(t);
    }
    para.join(" ")
}

/// Parse SKILL.md. Fails with [`ManifestError::Missing`] when
/// there is neither front-matter nor a top-level heading to name the skill.
pub fn parse_manifest(text: &str) -> Result<Manifest, ManifestError> {
    parse_manifest_with_fallback(text, None)
}

/// Like [`parse_manifest`], using `fallback_name` (typically the bundle
/// directory name) when no name can be read from the file.
pub fn parse_manifest_with_fallback(
    text: &str,
    fallback_name: Option<&str>,
) -> Result<Manifest, ManifestError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let (mapping, body) = match split_front_matter(text)? {
        Some(fm) => {
            let value: serde_yaml::Value = serde_yaml::from_str(fm.yaml)
                .map_err(|e| ManifestError::Malformed(e.to_string()))?;
            let mapping = match value {
                serde_yaml::Value::Mapping(m) => m,
                serde_yaml::Value::Null => serde_yaml::Mapping::new(),
                other => {
                    return Err(ManifestError::Malformed(format!(
                        "front-matter must be a key-value mapping, got {other:?}"
                    )))
                }
            };
            (Some(mapping), fm.body)
        }
        None => (None, text),
    };

    let mut manifest = Manifest::default();
    let mut has_front_matter_name = false;
    if let Some(mapping) = mapping {
        for (k, v) in mapping {
            let key = yaml_key(&k);
            match key.as_str() {
                "name" if v.is_string() => {
                    manifest.name = v.as_str().unwrap_or_default().trim().to_string();
                    has_front_matter_name = !manifest.name.is_empty();
                }
                "description" if v.is_string() => {
                    manifest.description = v.as_str().unwrap_or_default().trim().to_string();
                }
                "permissions" => manifest.declared_permissions = permission_list(&v)?,
                _ => {
                    let json = serde_json::to_value(&v)
                        .map_err(|e| ManifestError::Malformed(e.to_string()))?;
                    manifest.extra.insert(key, json);
                }
            }
        }
    }

    if !has_front_matter_name {
        manifest.name = first_heading(body)
            .or_else(|| fallback_name.map(str::to_string))
            .filter(|n| !n.trim().is_empty())
            .ok_or(ManifestError::Missing)?;
    }
    if manifest.description.is_empty() {
        manifest.description = first_paragraph(body);
    }
    Ok(manifest)
}
