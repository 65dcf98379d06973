use std::fmt;

use serde::{Deserialize, Serialize};

use crate::evidence::Evidence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Severity {
    Info,
    Warning,
    Critical,
}

impl Severity {
    pub fn parse(label: &str) -> Option<Severity> {
        match label.trim().to_ascii_uppercase().as_str() {
            "INFO" => Some(Severity::Info),
            "WARNING" | "WARN" => Some(Severity::Warning),
            "CRITICAL" => Some(Severity::Critical),
            _ => None,
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "INFO",
            Severity::Warning => "WARNING",
            Severity::Critical => "CRITICAL",
        })
    }
}

/// Which gate dimension or audit phase raised a finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingDimension {
    Compliance,
    MaliciousCode,
    HazardousDependency,
    PermissionRationality,
    SemanticConsistency,
    CompositionSafety,
    /// Engine-level notes (provider fallbacks, configuration remarks).
    Pipeline,
}

impl FindingDimension {
    /// Scorecard dimension a finding counts towards, if any.
    pub fn scorecard_dimension(self) -> Option<ScoreDimension> {
        match self {
            FindingDimension::Compliance
            | FindingDimension::MaliciousCode
            | FindingDimension::HazardousDependency
            | FindingDimension::PermissionRationality => Some(ScoreDimension::MaliciousPatterns),
            FindingDimension::SemanticConsistency => Some(ScoreDimension::SemanticConsistency),
            FindingDimension::CompositionSafety => Some(ScoreDimension::CompositionSafety),
            FindingDimension::Pipeline => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FindingDimension::Compliance => "compliance",
            FindingDimension::MaliciousCode => "malicious_code",
            FindingDimension::HazardousDependency => "hazardous_dependency",
            FindingDimension::PermissionRationality => "permission_rationality",
            FindingDimension::SemanticConsistency => "semantic_consistency",
            FindingDimension::CompositionSafety => "composition_safety",
            FindingDimension::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreDimension {
    MaliciousPatterns,
    SemanticConsistency,
    CompositionSafety,
}

/// Certainty level of a scorecard dimension.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub enum DimensionStatus {
    #[default]
    Clean,
    Suspected,
    Confirmed,
}

impl DimensionStatus {
    pub const ALL: [DimensionStatus; 3] = [
        DimensionStatus::Clean,
        DimensionStatus::Suspected,
        DimensionStatus::Confirmed,
    ];

    /// Contribution to the risk score: Clean=0, Suspected=1, Confirmed=2.
    pub fn score(self) -> u8 {
        match self {
            DimensionStatus::Clean => 0,
            DimensionStatus::Suspected => 1,
            DimensionStatus::Confirmed => 2,
        }
    }

    pub fn parse(label: &str) -> Option<DimensionStatus> {
        match label.trim().to_ascii_lowercase().as_str() {
            "clean" => Some(DimensionStatus::Clean),
            "suspected" => Some(DimensionStatus::Suspected),
            "confirmed" => Some(DimensionStatus::Confirmed),
            _ => None,
        }
    }
}

impl fmt::Display for DimensionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DimensionStatus::Clean => "Clean",
            DimensionStatus::Suspected => "Suspected",
            DimensionStatus::Confirmed => "Confirmed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub finding_id: String,
    pub severity: Severity,
    pub dimension: FindingDimension,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Evidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommendation: Option<String>,
}

impl Finding {
    pub fn new(
        rule_id: &str,
        severity: Severity,
        dimension: FindingDimension,
        message: impl Into<String>,
    ) -> Finding {
        Finding {
            finding_id: rule_id.to_string(),
            severity,
            dimension,
            message: message.into(),
            evidence: None,
            recommendation: None,
        }
    }

    /// Attach evidence; the finding id becomes `<rule>@<path>:<offset>`.
    pub fn with_evidence(mut self, evidence: Evidence) -> Finding {
        let rule = self
            .finding_id
            .split('@')
            .next()
            .unwrap_or_default()
            .to_string();
        self.finding_id = format!("{rule}@{}:{}", evidence.path, evidence.offset);
        self.evidence = Some(evidence);
        self
    }

    pub fn with_recommendation(mut self, recommendation: Option<impl Into<String>>) -> Finding {
        self.recommendation = recommendation.map(Into::into);
        self
    }

    pub fn info(rule_id: &str, dimension: FindingDimension, message: impl Into<String>) -> Finding {
        Finding::new(rule_id, Severity::Info, dimension, message)
    }

    /// Report ordering: most severe first, then by dimension, location and id.
    pub fn report_order(a: &Finding, b: &Finding) -> std::cmp::Ordering {
        b.severity
            .cmp(&a.severity)
            .then(a.dimension.cmp(&b.dimension))
            .then_with(|| {
                let ka = a.evidence.as_ref().map(|e| (e.path.as_str(), e.offset));
                let kb = b.evidence.as_ref().map(|e| (e.path.as_str(), e.offset));
                ka.cmp(&kb)
            })
            .then_with(|| a.finding_id.cmp(&b.finding_id))
            .then_with(|| a.message.cmp(&b.message))
    }
}
