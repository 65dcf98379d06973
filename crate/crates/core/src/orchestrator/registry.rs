//! Fingerprint registry.
//!
//! One JSON object per line: `{"checksum": <sha256 of record>, "record":
//! {...}}`. Writes append a whole line; on load the latest line for a key
//! wins and any line that fails to parse or checksum is skipped with a
//! warning, so a torn trailing write reads as a miss.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::flow::{RiskFingerprint, RiskLinkFinding};
use crate::rules::sha256_hex;
use crate::verdict::{AuditReport, VerdictLevel};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry {path} unavailable: {source}")]
    Unavailable {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RegistryKey {
    pub fingerprint: String,
    pub rules_digest: String,
    pub policy_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryRecord {
    pub fingerprint: String,
    pub skill_id: String,
    pub verdict: VerdictLevel,
    /// Where the report lives: `inline` or an output file path.
    pub report_locator: String,
    pub rules_digest: String,
    pub policy_digest: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    #[serde(default)]
    pub download_count: Option<u64>,
    pub report: AuditReport,
    #[serde(default)]
    pub risk_fingerprint: Option<RiskFingerprint>,
    /// Text of every file cited by the risk fingerprint, for re-checking
    /// evidence when this skill joins a later corpus.
    #[serde(default)]
    pub evidence_files: BTreeMap<String, String>,
}

impl RegistryRecord {
    pub fn key(&self) -> RegistryKey {
        RegistryKey {
            fingerprint: self.fingerprint.clone(),
            rules_digest: self.rules_digest.clone(),
            policy_digest: self.policy_digest.clone(),
        }
    }

    pub fn risk_links(&self) -> &[RiskLinkFinding] {
        &self.report.risk_links
    }
}

#[derive(Serialize)]
struct LineOut<'a> {
    checksum: String,
    record: &'a RawValue,
}

#[derive(Deserialize)]
struct LineIn<'a> {
    checksum: String,
    #[serde(borrow)]
    record: &'a RawValue,
}

#[derive(Debug, Default)]
pub struct Registry {
    path: Option<PathBuf>,
    records: BTreeMap<RegistryKey, (u64, RegistryRecord)>,
    seq: u64,
    corrupt_lines: usize,
}

impl Registry {
    pub fn in_memory() -> Registry {
        Registry::default()
    }

    pub fn open(path: &Path) -> Result<Registry, RegistryError> {
        let unavailable = |source| RegistryError::Unavailable {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(unavailable)?;
        }
        let mut reg = Registry {
            path: Some(path.to_path_buf()),
            ..Registry::default()
        };
        let text = match fs::read(path) {
            Ok(bytes) => String::from_utf8_lossy(&bytes).into_owned(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
            Err(e) => return Err(unavailable(e)),
        };
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match decode_line(line) {
                Ok(rec) => reg.insert(rec),
                Err(why) => {
                    reg.corrupt_lines += 1;
                    log::warn!("registry {}: line {} skipped: {why}", path.display(), n + 1);
                }
            }
        }
        Ok(reg)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn corrupt_lines(&self) -> usize {
        self.corrupt_lines
    }

    fn insert(&mut self, rec: RegistryRecord) {
        self.seq += 1;
        self.records.insert(rec.key(), (self.seq, rec));
    }

    pub fn get(&self, key: &RegistryKey) -> Option<&RegistryRecord> {
        self.records.get(key).map(|(_, r)| r)
    }

    /// Upsert by key. The line is appended before the in-memory view
    /// changes, so a failed write leaves both unchanged.
    pub fn put(&mut self, record: RegistryRecord) -> Result<(), RegistryError> {
        if let Some(path) = &self.path {
            let line = encode_line(&record);
            let unavailable = |source| RegistryError::Unavailable {
                path: path.clone(),
                source,
            };
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(unavailable)?;
            file.write_all(line.as_bytes()).map_err(unavailable)?;
            file.flush().map_err(unavailable)?;
        }
        self.insert(record);
        Ok(())
    }

    /// Records in key order.
    pub fn records(&self) -> impl Iterator<Item = &RegistryRecord> {
        self.records.values().map(|(_, r)| r)
    }

    /// Records in write order (oldest first).
    pub fn records_by_age(&self) -> Vec<&RegistryRecord> {
        let mut v: Vec<_> = self.records.values().collect();
        v.sort_by_key(|(seq, _)| *seq);
        v.into_iter().map(|(_, r)| r).collect()
    }

    /// Records whose fingerprint starts with `prefix`.
    pub fn find(&self, prefix: &str) -> Vec<&RegistryRecord> {
        self.records().filter(|r| r.fingerprint.starts_with(prefix)).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn encode_line(record: &RegistryRecord) -> String {
    let json = serde_json::to_string(record).expect("registry record serializes");
    let raw = RawValue::from_string(json).expect("serializer emits valid JSON");
    let line = LineOut {
        checksum: sha256_hex(raw.get().as_bytes()),
        record: &raw,
    };
    let mut s = serde_json::to_string(&line).expect("line serializes");
    s.push('\n');
    s
}

fn decode_line(line: &str) -> Result<RegistryRecord, String> {
    let parsed: LineIn<'_> = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if sha256_hex(parsed.record.get().as_bytes()) != parsed.checksum {
        return Err("checksum mismatch".into());
    }
    serde_json::from_str(parsed.record.get()).map_err(|e| e.to_string())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::finding::DimensionStatus;
    use crate::gatekeeper::GateDecision;
    use crate::verdict::{
        AuditMode, Digests, GateSection, ReportMeta, Scorecard, SkillIdentity, Verdict,
        REPORT_SCHEMA_VERSION,
    };

    pub(crate) fn record(fp: &str, rules: &str, verdict: VerdictLevel) -> RegistryRecord {
        let report = AuditReport {
            schema_version: REPORT_SCHEMA_VERSION,
            skill: SkillIdentity {
                id: "s".into(),
                name: "s".into(),
                version: None,
                fingerprint: fp.into(),
            },
            mode: AuditMode::Quick,
            digests: Digests {
                rules: rules.into(),
                policies: "p".into(),
            },
            gate: GateSection {
                status: GateDecision::Pass,
                results: vec![],
            },
            alignment: None,
            risk_fingerprint: None,
            risk_links: vec![],
            scorecard: Scorecard::new(DimensionStatus::Clean, DimensionStatus::Clean, DimensionStatus::Clean),
            verdict: Verdict {
                level: verdict,
                rationale: vec![],
            },
            findings: vec![],
            recommendations: vec![],
            notes: vec![],
            meta: ReportMeta::default(),
        };
        RegistryRecord {
            fingerprint: fp.into(),
            skill_id: "s".into(),
            verdict,
            report_locator: "inline".into(),
            rules_digest: rules.into(),
            policy_digest: "p".into(),
            timestamp: 0,
            download_count: None,
            report,
            risk_fingerprint: None,
            evidence_files: BTreeMap::new(),
        }
    }

    #[test]
    fn put_get_and_digest_change() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reg.jsonl");
        let mut reg = Registry::open(&path).unwrap();
        let rec = record("aa", "r1", VerdictLevel::Approved);
        reg.put(rec.clone()).unwrap();
        assert_eq!(reg.get(&rec.key()), Some(&rec));
        let mut other = rec.key();
        other.rules_digest = "r2".into();
        assert!(reg.get(&other).is_none());

        let reopened = Registry::open(&path).unwrap();
        assert_eq!(reopened.get(&rec.key()), Some(&rec));
    }

    #[test]
    fn latest_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reg.jsonl");
        let mut reg = Registry::open(&path).unwrap();
        reg.put(record("aa", "r", VerdictLevel::Approved)).unwrap();
        reg.put(record("aa", "r", VerdictLevel::Rejected)).unwrap();
        assert_eq!(reg.len(), 1);
        let reopened = Registry::open(&path).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(reopened.records().next().unwrap().verdict, VerdictLevel::Rejected);
    }

    #[test]
    fn corrupt_line_is_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reg.jsonl");
        let mut reg = Registry::open(&path).unwrap();
        let rec = record("aa", "r", VerdictLevel::Approved);
        reg.put(rec.clone()).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"aa\"", "\"ab\"");
        fs::write(&path, format!("{text}{{\"checksum\": \"torn")).unwrap();
        let reopened = Registry::open(&path).unwrap();
        assert!(reopened.get(&rec.key()).is_none());
        assert_eq!(reopened.corrupt_lines(), 2);
    }
}
