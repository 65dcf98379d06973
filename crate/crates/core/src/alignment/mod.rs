//! Documentation/code alignment.
//!
//! D(s) is extracted from documentation with a regex lexicon and manifest
//! permission labels; C(s) from scripts with per-language detectors plus an
//! assignment-chain binding heuristic. Both sides are normalized onto
//! canonical `(resource, access)` keys and compared in a four-class matrix.

mod analyzer;
mod capability;
mod lexicon;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finding::{DimensionStatus, Finding, FindingDimension, Severity};
use crate::provider::Provenance;
use crate::rules::RuleError;

pub use analyzer::{extract_implemented, AnalyzerRegistry, Detector, DetectorLanguage};
pub use capability::{
    is_valid_pair, Access, CanonicalKey, Capability, CapabilitySet, NormalizationTable,
    Normalized, Origin, Resource,
};
pub use lexicon::{extract_declared, CapabilityLexicon};
pub(crate) use capability::fold_label;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlignmentError {
    #[error("unknown access label `{0}`")]
    UnknownAccess(String),
    #[error("empty resource label `{0}`")]
    UnknownResource(String),
    #[error("capability {0} violates the validity table")]
    InvalidPair(String),
    #[error("expected a {expected:?} capability set, got {found:?}")]
    OriginMismatch { expected: Origin, found: Origin },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlignmentClass {
    Match,
    OverDeclaration,
    UnderDeclaration,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub declared: CapabilitySet,
    pub implemented: CapabilitySet,
    pub klass: AlignmentClass,
    /// Implemented but undeclared: keys(C) \ keys(D).
    pub shadow: BTreeSet<CanonicalKey>,
    /// Declared but not implemented: keys(D) \ keys(C).
    pub overclaimed: BTreeSet<CanonicalKey>,
    pub status: DimensionStatus,
}

/// Class of a (D, C) pair of key sets.
pub fn classify_keys(d: &BTreeSet<CanonicalKey>, c: &BTreeSet<CanonicalKey>) -> AlignmentClass {
    let d_minus_c = d.difference(c).next().is_some();
    let c_minus_d = c.difference(d).next().is_some();
    match (d_minus_c, c_minus_d) {
        (false, false) => AlignmentClass::Match,
        (true, false) => AlignmentClass::OverDeclaration,
        (false, true) => AlignmentClass::UnderDeclaration,
        (true, true) => AlignmentClass::Mixed,
    }
}

/// Place D and C in the alignment matrix. The status is scored with the
/// shipped severity table; use [`score_alignment`] for a configured one.
pub fn classify_alignment(
    declared: CapabilitySet,
    implemented: CapabilitySet,
) -> Result<AlignmentReport, AlignmentError> {
    if declared.origin != Origin::Declared {
        return Err(AlignmentError::OriginMismatch {
            expected: Origin::Declared,
            found: declared.origin,
        });
    }
    if implemented.origin != Origin::Implemented {
        return Err(AlignmentError::OriginMismatch {
            expected: Origin::Implemented,
            found: implemented.origin,
        });
    }
    let d: BTreeSet<CanonicalKey> = declared.keys().cloned().collect();
    let c: BTreeSet<CanonicalKey> = implemented.keys().cloned().collect();
    let mut report = AlignmentReport {
        klass: classify_keys(&d, &c),
        shadow: c.difference(&d).cloned().collect(),
        overclaimed: d.difference(&c).cloned().collect(),
        declared,
        implemented,
        status: DimensionStatus::Clean,
    };
    report.status = score_alignment(&report, &DeviationSeverityTable::default());
    Ok(report)
}

// --- severity table ------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeverityFile {
    #[allow(dead_code)]
    schema_version: u32,
    high_risk_resources: Vec<String>,
    #[serde(rename = "match")]
    match_: String,
    over_declaration: String,
    under_declaration_high_risk: String,
    under_declaration_low_risk: String,
    mixed_high_risk: String,
    mixed_low_risk: String,
    shadow_finding: String,
    overclaim_finding: String,
}

/// Maps alignment classes onto dimension statuses and deviation findings
/// onto severities.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationSeverityTable {
    pub high_risk_resources: BTreeSet<Resource>,
    pub match_status: DimensionStatus,
    pub over_declaration: DimensionStatus,
    pub under_high_risk: DimensionStatus,
    pub under_low_risk: DimensionStatus,
    pub mixed_high_risk: DimensionStatus,
    pub mixed_low_risk: DimensionStatus,
    pub shadow_finding: Severity,
    pub overclaim_finding: Severity,
}

impl Default for DeviationSeverityTable {
    fn default() -> Self {
        DeviationSeverityTable {
            high_risk_resources: [
                Resource::Network,
                Resource::Shell,
                Resource::Credentials,
                Resource::PersistentState,
            ]
            .into_iter()
            .collect(),
            match_status: DimensionStatus::Clean,
            over_declaration: DimensionStatus::Suspected,
            under_high_risk: DimensionStatus::Confirmed,
            under_low_risk: DimensionStatus::Suspected,
            mixed_high_risk: DimensionStatus::Confirmed,
            mixed_low_risk: DimensionStatus::Suspected,
            shadow_finding: Severity::Warning,
            overclaim_finding: Severity::Info,
        }
    }
}

impl DeviationSeverityTable {
    pub fn parse(text: &str, file: &str) -> Result<DeviationSeverityTable, RuleError> {
        let raw: SeverityFile = toml::from_str(text).map_err(|e| RuleError::parse(file, e))?;
        let status = |field: &str, v: &str| {
            DimensionStatus::parse(v).ok_or_else(|| {
                RuleError::invalid(file, format!("{field}: `{v}` is not clean|suspected|confirmed"))
            })
        };
        let severity = |field: &str, v: &str| {
            Severity::parse(v).ok_or_else(|| {
                RuleError::invalid(file, format!("{field}: `{v}` is not INFO|WARNING|CRITICAL"))
            })
        };
        let mut high_risk_resources = BTreeSet::new();
        for label in &raw.high_risk_resources {
            let r = Resource::from_canonical(label).ok_or_else(|| {
                RuleError::invalid(file, format!("`{label}` is not a canonical resource"))
            })?;
            high_risk_resources.insert(r);
        }
        Ok(DeviationSeverityTable {
            high_risk_resources,
            match_status: status("match", &raw.match_)?,
            over_declaration: status("over_declaration", &raw.over_declaration)?,
            under_high_risk: status("under_declaration_high_risk", &raw.under_declaration_high_risk)?,
            under_low_risk: status("under_declaration_low_risk", &raw.under_declaration_low_risk)?,
            mixed_high_risk: status("mixed_high_risk", &raw.mixed_high_risk)?,
            mixed_low_risk: status("mixed_low_risk", &raw.mixed_low_risk)?,
            shadow_finding: severity("shadow_finding", &raw.shadow_finding)?,
            overclaim_finding: severity("overclaim_finding", &raw.overclaim_finding)?,
        })
    }
}

/// Semantic-consistency status of a classified report.
///
/// Only deterministic shadow capabilities count towards the high-risk
/// escalation, so provider-only capabilities never yield Confirmed.
pub fn score_alignment(report: &AlignmentReport, table: &DeviationSeverityTable) -> DimensionStatus {
    let high_risk = report.shadow.iter().any(|key| {
        table.high_risk_resources.contains(&key.resource)
            && report
                .implemented
                .get(key)
                .is_some_and(|c| c.provenance == Provenance::Deterministic)
    });
    let status = match report.klass {
        AlignmentClass::Match => table.match_status,
        AlignmentClass::OverDeclaration => table.over_declaration,
        AlignmentClass::UnderDeclaration if high_risk => table.under_high_risk,
        AlignmentClass::UnderDeclaration => table.under_low_risk,
        AlignmentClass::Mixed if high_risk => table.mixed_high_risk,
        AlignmentClass::Mixed => table.mixed_low_risk,
    };
    let all_inferred = !report.shadow.is_empty()
        && report.shadow.iter().all(|k| {
            report
                .implemented
                .get(k)
                .is_some_and(|c| c.provenance == Provenance::Inferred)
        });
    if all_inferred {
        status.min(DimensionStatus::Suspected)
    } else {
        status
    }
}

/// One finding per shadow and per overclaimed key.
pub fn deviation_findings(report: &AlignmentReport, table: &DeviationSeverityTable) -> Vec<Finding> {
    let mut out = Vec::new();
    for key in &report.shadow {
        let cap = &report.implemented.items[key];
        let inferred = cap.provenance == Provenance::Inferred;
        let mut message = format!("shadow capability {key}: implemented but not declared");
        if cap.external_binding {
            message.push_str(" (externally sourced data reaches this call)");
        }
        if inferred {
            message.push_str(" [inferred]");
        }
        let severity = if inferred {
            table.shadow_finding.min(Severity::Warning)
        } else {
            table.shadow_finding
        };
        out.push(
            Finding::new("ALN-SHADOW", severity, FindingDimension::SemanticConsistency, message)
                .with_evidence(cap.evidence.clone())
                .with_recommendation(Some(format!(
                    "Declare {key} in the skill documentation or remove the behaviour"
                ))),
        );
    }
    for key in &report.overclaimed {
        let cap = &report.declared.items[key];
        out.push(
            Finding::new(
                "ALN-OVERCLAIM",
                table.overclaim_finding,
                FindingDimension::SemanticConsistency,
                format!("declared capability {key} has no implementation counterpart"),
            )
            .with_evidence(cap.evidence.clone()),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::Evidence;

    fn key(s: &str) -> CanonicalKey {
        s.parse().unwrap()
    }

    fn set(origin: Origin, keys: &[&str]) -> CapabilitySet {
        let mut s = CapabilitySet::new("t", origin);
        for (i, k) in keys.iter().enumerate() {
            let ev = Evidence {
                path: "f".into(),
                offset: i,
                line_start: 1,
                line_end: 1,
                snippet: "x".into(),
            };
            s.insert(Capability::deterministic(key(k), ev, "T"));
        }
        s
    }

    #[test]
    fn matrix_examples() {
        let r = classify_alignment(
            set(Origin::Declared, &["filesystem:read"]),
            set(Origin::Implemented, &["filesystem:read"]),
        )
        .unwrap();
        assert_eq!(r.klass, AlignmentClass::Match);
        assert_eq!(r.status, DimensionStatus::Clean);

        let r = classify_alignment(
            set(Origin::Declared, &["filesystem:read"]),
            set(Origin::Implemented, &["filesystem:read", "network:egress"]),
        )
        .unwrap();
        assert_eq!(r.klass, AlignmentClass::UnderDeclaration);
        assert_eq!(r.shadow, BTreeSet::from([key("network:egress")]));
        assert_eq!(r.status, DimensionStatus::Confirmed);

        let r = classify_alignment(
            set(Origin::Declared, &["network:egress", "shell:execute"]),
            set(Origin::Implemented, &["network:egress", "filesystem:write"]),
        )
        .unwrap();
        assert_eq!(r.klass, AlignmentClass::Mixed);
        // shadow is filesystem:write only: not high risk
        assert_eq!(r.status, DimensionStatus::Suspected);
    }

    #[test]
    fn empties() {
        let r = classify_alignment(set(Origin::Declared, &[]), set(Origin::Implemented, &[])).unwrap();
        assert_eq!(r.klass, AlignmentClass::Match);
        let r = classify_alignment(set(Origin::Declared, &[]), set(Origin::Implemented, &["shell:execute"]))
            .unwrap();
        assert_eq!(r.klass, AlignmentClass::UnderDeclaration);
        let r = classify_alignment(set(Origin::Declared, &["shell:execute"]), set(Origin::Implemented, &[]))
            .unwrap();
        assert_eq!(r.klass, AlignmentClass::OverDeclaration);
        assert_eq!(r.status, DimensionStatus::Suspected);
    }

    #[test]
    fn low_risk_shadow_is_suspected() {
        let r = classify_alignment(
            set(Origin::Declared, &[]),
            set(Origin::Implemented, &["clipboard_or_ui:read"]),
        )
        .unwrap();
        assert_eq!(r.status, DimensionStatus::Suspected);
    }

    #[test]
    fn inferred_only_shadow_caps_at_suspected() {
        let mut c = CapabilitySet::new("t", Origin::Implemented);
        let ev = Evidence {
            path: "f".into(),
            offset: 0,
            line_start: 1,
            line_end: 1,
            snippet: "x".into(),
        };
        c.insert(Capability::inferred(key("network:egress"), ev, "provider", 0.4));
        let r = classify_alignment(set(Origin::Declared, &[]), c).unwrap();
        assert_eq!(r.klass, AlignmentClass::UnderDeclaration);
        assert_eq!(r.status, DimensionStatus::Suspected);
    }

    #[test]
    fn origin_mismatch() {
        let err = classify_alignment(set(Origin::Implemented, &[]), set(Origin::Implemented, &[]))
            .unwrap_err();
        assert!(matches!(err, AlignmentError::OriginMismatch { .. }));
    }

    #[test]
    fn shipped_severity_table_equals_default() {
        let t = DeviationSeverityTable::parse(
            include_str!("../../rules/severity.toml"),
            "severity.toml",
        )
        .unwrap();
        assert_eq!(t, DeviationSeverityTable::default());
    }
}
