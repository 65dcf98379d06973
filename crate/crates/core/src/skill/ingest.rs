//! Bundle ingestion from directories, tar archives (optionally gzip
//! compressed) and URLs resolving to such archives.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use log::{debug, warn};
use thiserror::Error;

use super::{
    classify_file, compute_fingerprint, parse_manifest_with_fallback, slugify, AssetFile,
    DocFile, FileClass, ManifestError, ScriptFile, SkillPackage,
};

/// Cap on the total uncompressed size of a bundle (and of URL downloads).
pub const DEFAULT_SIZE_CAP: u64 = 64 * 1024 * 1024;

const DOWNLOAD_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source not found: {0}")]
    SourceNotFound(String),
    #[error("unsupported archive format: {0}")]
    UnsupportedArchive(String),
    #[error("no SKILL.md found in {0}")]
    ManifestMissing(String),
    #[error("{0}")]
    ManifestMalformed(String),
    #[error("path escapes the package root: {0}")]
    PathTraversal(String),
    #[error("duplicate path in bundle: {0}")]
    DuplicatePath(String),
    #[error("documentation file is not valid UTF-8: {0}")]
    DecodeError(String),
    #[error("bundle exceeds the size cap of {0} bytes")]
    TooLarge(u64),
    #[error("download failed: {0}")]
    Download(String),
    #[error("i/o error reading {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Where a bundle comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IngestSource {
    Directory(PathBuf),
    Archive(PathBuf),
    Url(String),
}

impl IngestSource {
    /// Interpret a command-line style source string. URLs are recognized by
    /// scheme; existing directories become [`IngestSource::Directory`] and
    /// anything else is treated as an archive path.
    pub fn parse(source: &str) -> IngestSource {
        if source.starts_with("http://") || source.starts_with("https://") {
            return IngestSource::Url(source.to_string());
        }
        let path = PathBuf::from(source);
        if path.is_dir() {
            IngestSource::Directory(path)
        } else {
            IngestSource::Archive(path)
        }
    }

    pub fn exists(&self) -> bool {
        match self {
            IngestSource::Directory(p) | IngestSource::Archive(p) => p.exists(),
            IngestSource::Url(_) => true,
        }
    }
}

impl FromStr for IngestSource {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(IngestSource::parse(s))
    }
}

impl fmt::Display for IngestSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestSource::Directory(p) | IngestSource::Archive(p) => write!(f, "{}", p.display()),
            IngestSource::Url(u) => f.write_str(u),
        }
    }
}

/// A file read from a bundle before classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFile {
    pub path: String,
    pub bytes: Vec<u8>,
}

impl RawFile {
    pub fn new(path: impl Into<String>, bytes: impl Into<Vec<u8>>) -> RawFile {
        RawFile {
            path: path.into(),
            bytes: bytes.into(),
        }
    }
}

pub fn ingest_skill(source: &IngestSource) -> Result<SkillPackage, IngestError> {
    ingest_skill_with_cap(source, DEFAULT_SIZE_CAP)
}

pub fn ingest_skill_with_cap(
    source: &IngestSource,
    cap: u64,
) -> Result<SkillPackage, IngestError> {
    match source {
        IngestSource::Directory(dir) => {
            if !dir.is_dir() {
                return Err(IngestError::SourceNotFound(dir.display().to_string()));
            }
            let files = read_directory(dir, cap)?;
            package_from_files(files, dir_name(dir).as_deref())
        }
        IngestSource::Archive(path) => {
            if !path.is_file() {
                return Err(IngestError::SourceNotFound(path.display().to_string()));
            }
            let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
            let files = read_archive(file, cap)?;
            package_from_files(files, archive_stem(&path.to_string_lossy()).as_deref())
        }
        IngestSource::Url(url) => {
            let tmp = download(url, cap)?;
            let file = fs::File::open(tmp.path()).map_err(|e| io_err(tmp.path(), e))?;
            let files = read_archive(file, cap)?;
            package_from_files(files, archive_stem(url).as_deref())
        }
    }
}

fn io_err(path: &Path, source: io::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn dir_name(dir: &Path) -> Option<String> {
    let canonical = dir.canonicalize().ok();
    canonical
        .as_deref()
        .unwrap_or(dir)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
}

fn archive_stem(path: &str) -> Option<String> {
    let name = path
        .trim_end_matches('/')
        .rsplit(['/', '\\'])
        .next()?
        .split(['?', '#'])
        .next()?;
    let stem = [".tar.gz", ".tgz", ".tar"]
        .iter()
        .find_map(|ext| name.strip_suffix(ext))
        .unwrap_or(name);
    (!stem.is_empty()).then(|| stem.to_string())
}

fn read_directory(dir: &Path, cap: u64) -> Result<Vec<RawFile>, IngestError> {
    let mut files = Vec::new();
    let mut total = 0u64;
    let walker = walkdir::WalkDir::new(dir)
        .follow_links(false)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || e.file_name() != ".git");
    for entry in walker {
        let entry = entry.map_err(|e| IngestError::Io {
            path: dir.display().to_string(),
            source: e.into(),
        })?;
        let ft = entry.file_type();
        if ft.is_symlink() {
            warn!("skipping symlink {}", entry.path().display());
            continue;
        }
        if !ft.is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(dir)
            .expect("walkdir yields paths under its root");
        let rel = rel
            .to_str()
            .ok_or_else(|| IngestError::DecodeError(rel.display().to_string()))?;
        let path = normalize_entry_path(rel)?;
        let bytes = fs::read(entry.path()).map_err(|e| io_err(entry.path(), e))?;
        total += bytes.len() as u64;
        if total > cap {
            return Err(IngestError::TooLarge(cap));
        }
        files.push(RawFile { path, bytes });
    }
    Ok(files)
}

/// Validate and canonicalize an entry path: forward slashes, no empty or `.`
/// segments, never absolute, never `..`.
pub(crate) fn normalize_entry_path(raw: &str) -> Result<String, IngestError> {
    let unified = raw.replace('\\', "/");
    let bytes = unified.as_bytes();
    let drive_prefix = bytes.len() >= 2 && bytes[0].is_ascii_alphabetic() && bytes[1] == b':';
    if unified.starts_with('/') || drive_prefix {
        return Err(IngestError::PathTraversal(raw.to_string()));
    }
    let mut parts = Vec::new();
    for seg in unified.split('/') {
        match seg {
            "" | "." => {}
            ".." => return Err(IngestError::PathTraversal(raw.to_string())),
            s => parts.push(s),
        }
    }
    if parts.is_empty() {
        return Err(IngestError::PathTraversal(raw.to_string()));
    }
    Ok(parts.join("/"))
}

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

pub(crate) fn read_archive<R: Read>(reader: R, cap: u64) -> Result<Vec<RawFile>, IngestError> {
    let mut reader = io::BufReader::new(reader);
    let mut head = Vec::with_capacity(512);
    (&mut reader)
        .take(512)
        .read_to_end(&mut head)
        .map_err(|e| IngestError::Io {
            path: "<archive>".into(),
            source: e,
        })?;
    let rest = io::Cursor::new(head.clone()).chain(reader);
    if head.starts_with(&GZIP_MAGIC) {
        let gz = flate2::read::GzDecoder::new(rest);
        // bound the decompressed stream so a bomb cannot exhaust memory
        read_tar(gz.take(cap.saturating_add(1 << 20)), cap)
    } else if head.len() >= 262 && &head[257..262] == b"ustar" {
        read_tar(rest, cap)
    } else if head.starts_with(b"PK\x03\x04") {
        Err(IngestError::UnsupportedArchive("zip".into()))
    } else {
        Err(IngestError::UnsupportedArchive(
            "expected a tar or tar.gz archive".into(),
        ))
    }
}

fn read_tar<R: Read>(reader: R, cap: u64) -> Result<Vec<RawFile>, IngestError> {
    let archive_err = |e: io::Error| IngestError::UnsupportedArchive(e.to_string());
    let mut archive = tar::Archive::new(reader);
    let mut files = Vec::new();
    let mut total = 0u64;
    for entry in archive.entries().map_err(archive_err)? {
        let entry = entry.map_err(archive_err)?;
        let raw_path = String::from_utf8(entry.path_bytes().into_owned())
            .map_err(|e| IngestError::DecodeError(format!("archive entry name: {e}")))?;
        let kind = entry.header().entry_type();
        if kind.is_dir() || kind.is_pax_global_extensions() || kind.is_pax_local_extensions() {
            // directory entries still must not escape the root
            if kind.is_dir() && !raw_path.trim_matches('/').is_empty() && raw_path != "./" {
                normalize_entry_path(&raw_path)?;
            }
            continue;
        }
        let path = normalize_entry_path(&raw_path)?;
        if kind.is_symlink() || kind.is_hard_link() {
            warn!("skipping link entry {path}");
            continue;
        }
        if !kind.is_file() {
            debug!("skipping special entry {path}");
            continue;
        }
        let mut bytes = Vec::new();
        let remaining = cap.saturating_sub(total);
        entry
            .take(remaining.saturating_add(1))
            .read_to_end(&mut bytes)
            .map_err(archive_err)?;
        total += bytes.len() as u64;
        if total > cap {
            return Err(IngestError::TooLarge(cap));
        }
        files.push(RawFile { path, bytes });
    }
    Ok(files)
}

fn download(url: &str, cap: u64) -> Result<tempfile::NamedTempFile, IngestError> {
    let agent = ureq::AgentBuilder::new().timeout(DOWNLOAD_TIMEOUT).build();
    let response = agent.get(url).call().map_err(|e| match e {
        ureq::Error::Status(404, _) => IngestError::SourceNotFound(url.to_string()),
        other => IngestError::Download(other.to_string()),
    })?;
    let mut tmp = tempfile::NamedTempFile::new().map_err(|e| IngestError::Io {
        path: "<tempfile>".into(),
        source: e,
    })?;
    let copied = io::copy(&mut response.into_reader().take(cap + 1), &mut tmp).map_err(|e| {
        IngestError::Io {
            path: url.to_string(),
            source: e,
        }
    })?;
    if copied > cap {
        return Err(IngestError::TooLarge(cap));
    }
    Ok(tmp)
}

fn strip_common_root(mut files: Vec<RawFile>) -> (Vec<RawFile>, Option<String>) {
    let mut stripped = None;
    loop {
        let has_root_file = files.iter().any(|f| !f.path.contains('/'));
        if files.is_empty() || has_root_file {
            return (files, stripped);
        }
        let first = files[0].path.split('/').next().unwrap_or_default().to_string();
        if !files.iter().all(|f| f.path.split('/').next() == Some(first.as_str())) {
            return (files, stripped);
        }
        for f in &mut files {
            f.path = f.path[first.len() + 1..].to_string();
        }
        stripped = Some(first);
    }
}

fn is_manifest_path(path: &str) -> bool {
    !path.contains('/') && path.eq_ignore_ascii_case("skill.md")
}

/// Build a package from raw files. A single top-level directory shared by
/// every file (the usual archive layout) is stripped first.
pub fn package_from_files(
    files: Vec<RawFile>,
    fallback_name: Option<&str>,
) -> Result<SkillPackage, IngestError> {
    let (files, stripped) = strip_common_root(files);
    let fallback = stripped.as_deref().or(fallback_name);
    let mut seen = BTreeSet::new();
    for f in &files {
        normalize_entry_path(&f.path)?;
        if !seen.insert(f.path.clone()) {
            return Err(IngestError::DuplicatePath(f.path.clone()));
        }
    }
    let manifest_path = files
        .iter()
        .map(|f| f.path.as_str())
        .filter(|p| is_manifest_path(p))
        .min()
        .map(str::to_string)
        .ok_or_else(|| IngestError::ManifestMissing(fallback.unwrap_or("bundle").to_string()))?;

    let mut documentation = Vec::new();
    let mut scripts = Vec::new();
    let mut assets = Vec::new();
    for RawFile { path, bytes } in files {
        let class = if path == manifest_path {
            FileClass::Doc
        } else {
            classify_file(&path, &bytes)
        };
        match class {
            FileClass::Doc => {
                let text = String::from_utf8(bytes.clone())
                    .map_err(|_| IngestError::DecodeError(path.clone()))?;
                documentation.push(DocFile { path, bytes, text });
            }
            FileClass::Script(language_hint) => scripts.push(ScriptFile {
                path,
                bytes,
                language_hint,
            }),
            FileClass::Asset => assets.push(AssetFile { path, bytes }),
        }
    }
    documentation.sort_by(|a, b| a.path.cmp(&b.path));
    scripts.sort_by(|a, b| a.path.cmp(&b.path));
    assets.sort_by(|a, b| a.path.cmp(&b.path));

    let manifest_text = &documentation
        .iter()
        .find(|d| d.path == manifest_path)
        .expect("manifest classified as documentation")
        .text;
    let manifest = parse_manifest_with_fallback(manifest_text, fallback).map_err(|e| match e {
        ManifestError::Missing => IngestError::ManifestMissing(manifest_path.clone()),
        ManifestError::Malformed(_) => IngestError::ManifestMalformed(e.to_string()),
    })?;

    let mut package = SkillPackage {
        id: slugify(&manifest.name),
        name: manifest.name.clone(),
        version: manifest.version(),
        manifest,
        manifest_path,
        documentation,
        scripts,
        assets,
        download_count: None,
        fingerprint: super::ContentFingerprint::from_digest([0; 32]),
    };
    package.fingerprint = compute_fingerprint(&package);
    Ok(package)
}
