//! Scorecard, one-vote-veto verdict and the audit report.

mod render;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::AlignmentReport;
use crate::finding::{DimensionStatus, Finding, FindingDimension, ScoreDimension, Severity};
use crate::flow::{LinkStatus, RiskFingerprint, RiskLinkFinding};
use crate::gatekeeper::{GateDecision, GateResult, PhaseOutcome};

pub use render::{render_report, ReportFormat};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuditMode {
    /// Gates and alignment only.
    Quick,
    #[default]
    Standard,
}

impl AuditMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AuditMode::Quick => "quick",
            AuditMode::Standard => "standard",
        }
    }
}

impl std::str::FromStr for AuditMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "quick" => Ok(AuditMode::Quick),
            "standard" => Ok(AuditMode::Standard),
            other => Err(format!("unknown mode `{other}` (quick | standard)")),
        }
    }
}

impl fmt::Display for AuditMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerdictError {
    #[error("standard mode requires the {0} phase result")]
    MissingPhase(&'static str),
    #[error("unsupported report format `{0}` (json | text)")]
    UnsupportedFormat(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scorecard {
    pub malicious_patterns: DimensionStatus,
    pub semantic_consistency: DimensionStatus,
    pub composition_safety: DimensionStatus,
    pub risk_score: u8,
    /// Dimensions reported as Clean only because their phase did not run.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub not_evaluated: BTreeSet<ScoreDimension>,
}

impl Scorecard {
    pub fn new(
        malicious_patterns: DimensionStatus,
        semantic_consistency: DimensionStatus,
        composition_safety: DimensionStatus,
    ) -> Scorecard {
        Scorecard {
            malicious_patterns,
            semantic_consistency,
            composition_safety,
            risk_score: malicious_patterns.score() + semantic_consistency.score() + composition_safety.score(),
            not_evaluated: BTreeSet::new(),
        }
    }

    pub fn status(&self, d: ScoreDimension) -> DimensionStatus {
        match d {
            ScoreDimension::MaliciousPatterns => self.malicious_patterns,
            ScoreDimension::SemanticConsistency => self.semantic_consistency,
            ScoreDimension::CompositionSafety => self.composition_safety,
        }
    }

    pub fn evaluated(&self, d: ScoreDimension) -> bool {
        !self.not_evaluated.contains(&d)
    }

    pub fn dimensions(&self) -> [(ScoreDimension, DimensionStatus); 3] {
        [
            (ScoreDimension::MaliciousPatterns, self.malicious_patterns),
            (ScoreDimension::SemanticConsistency, self.semantic_consistency),
            (ScoreDimension::CompositionSafety, self.composition_safety),
        ]
    }
}

pub fn gate_status(decision: GateDecision) -> DimensionStatus {
    match decision {
        GateDecision::Block => DimensionStatus::Confirmed,
        GateDecision::Warn => DimensionStatus::Suspected,
        GateDecision::Pass => DimensionStatus::Clean,
    }
}

/// Composition status of one skill: Confirmed if it takes part in any
/// Confirmed link, Suspected if only in Suspected ones.
pub fn composition_status(skill_id: &str, links: &[RiskLinkFinding]) -> DimensionStatus {
    links
        .iter()
        .filter(|l| l.involves(skill_id))
        .map(|l| match l.status {
            LinkStatus::Confirmed => DimensionStatus::Confirmed,
            LinkStatus::Suspected => DimensionStatus::Suspected,
        })
        .max()
        .unwrap_or_default()
}

/// Fuse phase outcomes. `None` marks a phase that did not run: allowed in
/// quick mode and after a gate BLOCK, an error otherwise.
pub fn compute_scorecard(
    mode: AuditMode,
    gate: &PhaseOutcome,
    alignment: Option<&AlignmentReport>,
    flow: Option<(&str, &[RiskLinkFinding])>,
) -> Result<Scorecard, VerdictError> {
    let stopped = gate.status == GateDecision::Block;
    if mode == AuditMode::Standard && !stopped {
        if alignment.is_none() {
            return Err(VerdictError::MissingPhase("alignment"));
        }
        if flow.is_none() {
            return Err(VerdictError::MissingPhase("composition"));
        }
    }
    let semantic = alignment.map(|a| a.status).unwrap_or_default();
    let composition = flow
        .map(|(id, links)| composition_status(id, links))
        .unwrap_or_default();
    let mut card = Scorecard::new(gate_status(gate.status), semantic, composition);
    if alignment.is_none() {
        card.not_evaluated.insert(ScoreDimension::SemanticConsistency);
    }
    if flow.is_none() {
        card.not_evaluated.insert(ScoreDimension::CompositionSafety);
    }
    Ok(card)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VerdictLevel {
    Approved,
    Conditional,
    Rejected,
}

impl VerdictLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLevel::Approved => "APPROVED",
            VerdictLevel::Conditional => "CONDITIONAL",
            VerdictLevel::Rejected => "REJECTED",
        }
    }
}

impl fmt::Display for VerdictLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub level: VerdictLevel,
    /// Finding ids and dimension statuses that decided the level.
    pub rationale: Vec<String>,
}

/// One-vote veto.
///
/// REJECTED when malicious patterns are Confirmed (gate BLOCK), or when an
/// evaluated dimension is Confirmed and a CRITICAL finding belongs to it.
/// CONDITIONAL when an evaluated dimension is at least Suspected or any
/// finding is WARNING or worse. APPROVED otherwise.
pub fn decide_verdict(card: &Scorecard, findings: &[Finding]) -> Verdict {
    let mut rationale = Vec::new();
    if card.malicious_patterns == DimensionStatus::Confirmed {
        rationale.push("gate outcome BLOCK".to_string());
    }
    for (dim, status) in card.dimensions() {
        if status != DimensionStatus::Confirmed || !card.evaluated(dim) {
            continue;
        }
        rationale.extend(
            findings
                .iter()
                .filter(|f| f.severity == Severity::Critical && f.dimension.scorecard_dimension() == Some(dim))
                .map(|f| f.finding_id.clone()),
        );
    }
    if !rationale.is_empty() {
        return Verdict {
            level: VerdictLevel::Rejected,
            rationale,
        };
    }
    for (dim, status) in card.dimensions() {
        if status >= DimensionStatus::Suspected && card.evaluated(dim) {
            rationale.push(format!("{} {status}", dimension_label(dim)));
        }
    }
    rationale.extend(
        findings
            .iter()
            .filter(|f| f.severity >= Severity::Warning)
            .map(|f| f.finding_id.clone()),
    );
    let level = if rationale.is_empty() {
        VerdictLevel::Approved
    } else {
        VerdictLevel::Conditional
    };
    Verdict { level, rationale }
}

pub fn dimension_label(d: ScoreDimension) -> &'static str {
    match d {
        ScoreDimension::MaliciousPatterns => "malicious_patterns",
        ScoreDimension::SemanticConsistency => "semantic_consistency",
        ScoreDimension::CompositionSafety => "composition_safety",
    }
}

/// Findings for the links a skill takes part in: Confirmed links are
/// WARNING, Suspected ones INFO. Evidence is this skill's side of the link.
pub fn link_findings(skill_id: &str, links: &[RiskLinkFinding]) -> Vec<Finding> {
    links
        .iter()
        .filter(|l| l.involves(skill_id))
        .map(|l| {
            let (role, other, ev) = if l.source_skill == skill_id {
                ("source", &l.sink_skill, &l.source_evidence)
            } else {
                ("sink", &l.source_skill, &l.sink_evidence)
            };
            let severity = match l.status {
                LinkStatus::Confirmed => Severity::Warning,
                LinkStatus::Suspected => Severity::Info,
            };
            let mut f = Finding::new(
                &format!("LINK-{}", l.policy_id),
                severity,
                FindingDimension::CompositionSafety,
                format!(
                    "{:?} {} link ({role}) with {other}: {} -> {}",
                    l.status, l.attack_pattern, l.source_skill, l.sink_skill
                ),
            )
            .with_recommendation(Some(format!(
                "Review {} before installing it alongside {other}",
                l.attack_pattern
            )));
            f = f.with_evidence(ev.clone());
            f.finding_id = format!("{}>{other}", f.finding_id);
            f
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillIdentity {
    pub id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Digests {
    pub rules: String,
    pub policies: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSection {
    pub status: GateDecision,
    pub results: Vec<GateResult>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub cache_hit: bool,
    pub timing_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub skill: SkillIdentity,
    pub mode: AuditMode,
    pub digests: Digests,
    pub gate: GateSection,
    #[serde(default)]
    pub alignment: Option<AlignmentReport>,
    #[serde(default)]
    pub risk_fingerprint: Option<RiskFingerprint>,
    #[serde(default)]
    pub risk_links: Vec<RiskLinkFinding>,
    pub scorecard: Scorecard,
    pub verdict: Verdict,
    pub findings: Vec<Finding>,
    pub recommendations: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub meta: ReportMeta,
}

impl AuditReport {
    /// The report with timing and cache metadata cleared.
    pub fn normalized(&self) -> AuditReport {
        AuditReport {
            meta: ReportMeta::default(),
            ..self.clone()
        }
    }
}

/// Severity-sort findings and collect unique recommendations in that order.
pub fn finalize_findings(mut findings: Vec<Finding>) -> (Vec<Finding>, Vec<String>) {
    findings.sort_by(Finding::report_order);
    findings.dedup();
    let mut recs: Vec<String> = Vec::new();
    for r in findings.iter().filter_map(|f| f.recommendation.as_ref()) {
        if !recs.contains(r) {
            recs.push(r.clone());
        }
    }
    (findings, recs)
}
