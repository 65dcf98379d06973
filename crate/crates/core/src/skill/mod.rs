//! Skill bundles: ingestion, file taxonomy, manifest parsing and content
//! fingerprints.

mod fingerprint;
mod ingest;
mod manifest;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::evidence::FileLookup;

pub use fingerprint::{compute_fingerprint, fingerprint_files, ContentFingerprint};
pub use ingest::{
    ingest_skill, package_from_files, IngestError, IngestSource, RawFile, DEFAULT_SIZE_CAP,
};
pub use manifest::{parse_manifest, parse_manifest_with_fallback, Manifest, ManifestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanguageHint {
    Shell,
    PythonLike,
    JavascriptLike,
    Other,
}

impl LanguageHint {
    pub fn as_str(self) -> &'static str {
        match self {
            LanguageHint::Shell => "shell",
            LanguageHint::PythonLike => "python",
            LanguageHint::JavascriptLike => "javascript",
            LanguageHint::Other => "other",
        }
    }
}

impl fmt::Display for LanguageHint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocFile {
    pub path: String,
    pub bytes: Vec<u8>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptFile {
    pub path: String,
    pub bytes: Vec<u8>,
    pub language_hint: LanguageHint,
}

impl ScriptFile {
    /// Lossy text view; analyzers work on text and binary scripts are rare.
    pub fn text(&self) -> std::borrow::Cow<'_, str> {
        String::from_utf8_lossy(&self.bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssetFile {
    pub path: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileClass {
    Doc,
    Script(LanguageHint),
    Asset,
}

const DOC_EXTENSIONS: &[&str] = &["md", "markdown", "txt"];

/// Classify a file by extension, falling back to shebang sniffing.
pub fn classify_file(path: &str, bytes: &[u8]) -> FileClass {
    let name = path.rsplit('/').next().unwrap_or(path);
    let ext = name
        .rsplit_once('.')
        .map(|(_, e)| e.to_ascii_lowercase())
        .unwrap_or_default();
    if DOC_EXTENSIONS.contains(&ext.as_str()) {
        return FileClass::Doc;
    }
    match ext.as_str() {
        "sh" | "bash" => return FileClass::Script(LanguageHint::Shell),
        "py" => return FileClass::Script(LanguageHint::PythonLike),
        "js" | "mjs" | "ts" => return FileClass::Script(LanguageHint::JavascriptLike),
        _ => {}
    }
    match sniff_shebang(bytes) {
        Some(lang) => FileClass::Script(lang),
        None => FileClass::Asset,
    }
}

fn sniff_shebang(bytes: &[u8]) -> Option<LanguageHint> {
    let first = bytes.split(|&b| b == b'\n').next()?;
    let line = std::str::from_utf8(first).ok()?.trim();
    let interp = line.strip_prefix("#!")?;
    let mut words = interp.split_whitespace();
    let mut prog = words.next()?.rsplit('/').next()?;
    if prog == "env" {
        prog = words.find(|w| !w.starts_with('-'))?;
    }
    let prog = prog.trim_end_matches(|c: char| c.is_ascii_digit() || c == '.');
    Some(match prog {
        "sh" | "bash" | "zsh" | "dash" | "ksh" => LanguageHint::Shell,
        "python" => LanguageHint::PythonLike,
        "node" | "deno" | "bun" | "ts-node" => LanguageHint::JavascriptLike,
        _ => LanguageHint::Other,
    })
}

/// A parsed skill bundle. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkillPackage {
    pub id: String,
    pub name: String,
    pub version: Option<String>,
    pub manifest: Manifest,
    /// Path of SKILL.md (always one of `documentation`).
    pub manifest_path: String,
    pub documentation: Vec<DocFile>,
    pub scripts: Vec<ScriptFile>,
    pub assets: Vec<AssetFile>,
    pub download_count: Option<u64>,
    pub fingerprint: ContentFingerprint,
}

impl SkillPackage {
    pub fn manifest_file(&self) -> &DocFile {
        self.documentation
            .iter()
            .find(|d| d.path == self.manifest_path)
            .expect("manifest file is part of the documentation")
    }

    pub fn file_count(&self) -> usize {
        self.documentation.len() + self.scripts.len() + self.assets.len()
    }

    /// All files as (path, bytes), in classification order.
    pub fn files(&self) -> impl Iterator<Item = (&str, &[u8])> {
        self.documentation
            .iter()
            .map(|d| (d.path.as_str(), d.bytes.as_slice()))
            .chain(self.scripts.iter().map(|s| (s.path.as_str(), s.bytes.as_slice())))
            .chain(self.assets.iter().map(|a| (a.path.as_str(), a.bytes.as_slice())))
    }

    pub fn with_download_count(mut self, count: Option<u64>) -> SkillPackage {
        self.download_count = count;
        self
    }

    pub fn with_id(mut self, id: impl Into<String>) -> SkillPackage {
        self.id = id.into();
        self
    }
}

impl FileLookup for SkillPackage {
    fn file_bytes(&self, path: &str) -> Option<&[u8]> {
        self.files().find(|(p, _)| *p == path).map(|(_, b)| b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StructureProfile {
    pub document_only: bool,
    pub has_executable_scripts: bool,
    pub has_network_surface_hint: bool,
}

impl StructureProfile {
    pub fn flag(&self, name: &str) -> Option<bool> {
        match name {
            "document_only" => Some(self.document_only),
            "has_executable_scripts" => Some(self.has_executable_scripts),
            "has_network_surface_hint" => Some(self.has_network_surface_hint),
            _ => None,
        }
    }
}

const NETWORK_PERMISSION_LABELS: &[&str] = &[
    "network",
    "net",
    "http",
    "https",
    "internet",
    "web",
    "network-access",
    "network:egress",
    "upload",
];

/// Derive structural flags from the file taxonomy and manifest permissions.
///
/// `has_network_surface_hint` is set when a network-class permission is
/// declared or any script contains an http(s) URL literal.
pub fn classify_structure(package: &SkillPackage) -> StructureProfile {
    let declares_network = package.manifest.declared_permissions.iter().any(|p| {
        NETWORK_PERMISSION_LABELS.contains(&p.trim().to_ascii_lowercase().as_str())
    });
    let url_in_script = package.scripts.iter().any(|s| {
        let text = s.text();
        text.contains("http://") || text.contains("https://")
    });
    StructureProfile {
        document_only: package.scripts.is_empty(),
        has_executable_scripts: !package.scripts.is_empty(),
        has_network_surface_hint: declares_network || url_in_script,
    }
}

/// Lower-case slug: runs of non-alphanumerics collapse to `-`.
pub fn slugify(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut dash = false;
    for c in name.trim().chars() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
            dash = false;
        } else if !dash && !out.is_empty() {
            out.push('-');
            dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        "skill".to_string()
    } else {
        out
    }
}
