mod common;

use proptest::prelude::*;

use skillaudit::finding::{DimensionStatus, Finding, FindingDimension, ScoreDimension, Severity};
use skillaudit::verdict::{decide_verdict, render_report, ReportFormat, Scorecard};
use skillaudit::{AuditConfig, AuditMode, Auditor, IngestSource, VerdictLevel};

const STATUSES: [DimensionStatus; 3] = [DimensionStatus::Clean, DimensionStatus::Suspected, DimensionStatus::Confirmed];

fn points(s: DimensionStatus) -> u8 {
    match s {
        DimensionStatus::Clean => 0,
        DimensionStatus::Suspected => 1,
        DimensionStatus::Confirmed => 2,
    }
}

fn triples() -> Vec<[DimensionStatus; 3]> {
    let mut v = Vec::new();
    for m in STATUSES {
        for s in STATUSES {
            for c in STATUSES {
                v.push([m, s, c]);
            }
        }
    }
    v
}

/// Candidate findings: a CRITICAL in each scored dimension, a WARNING, an
/// INFO, and an engine note.
fn candidates() -> Vec<Finding> {
    vec![
        Finding::new("C-MAL", Severity::Critical, FindingDimension::MaliciousCode, "m"),
        Finding::new("C-SEM", Severity::Critical, FindingDimension::SemanticConsistency, "m"),
        Finding::new("C-CMP", Severity::Critical, FindingDimension::CompositionSafety, "m"),
        Finding::new("W", Severity::Warning, FindingDimension::PermissionRationality, "m"),
        Finding::new("I", Severity::Info, FindingDimension::Compliance, "m"),
        Finding::new("N", Severity::Info, FindingDimension::Pipeline, "m"),
    ]
}

fn subset(mask: u32) -> Vec<Finding> {
    candidates()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, f)| f)
        .collect()
}

const DIMS: [ScoreDimension; 3] = [
    ScoreDimension::MaliciousPatterns,
    ScoreDimension::SemanticConsistency,
    ScoreDimension::CompositionSafety,
];

fn card(t: [DimensionStatus; 3], skipped: u8) -> Scorecard {
    let mut c = Scorecard::new(t[0], t[1], t[2]);
    for (i, d) in DIMS.iter().enumerate().skip(1) {
        if skipped & (1 << i) != 0 {
            c.not_evaluated.insert(*d);
        }
    }
    c
}

/// The veto predicate written out over plain arrays.
fn expected(t: [DimensionStatus; 3], skipped: u8, findings: &[Finding]) -> VerdictLevel {
    let evaluated = |i: usize| i == 0 || skipped & (1 << i) == 0;
    let crit_in = |i: usize| {
        findings.iter().any(|f| {
            f.severity == Severity::Critical
                && match i {
                    0 => matches!(
                        f.dimension,
                        FindingDimension::Compliance
                            | FindingDimension::MaliciousCode
                            | FindingDimension::HazardousDependency
                            | FindingDimension::PermissionRationality
                    ),
                    1 => f.dimension == FindingDimension::SemanticConsistency,
                    _ => f.dimension == FindingDimension::CompositionSafety,
                }
        })
    };
    let reject = t[0] == DimensionStatus::Confirmed
        || (0..3).any(|i| evaluated(i) && t[i] == DimensionStatus::Confirmed && crit_in(i));
    if reject {
        return VerdictLevel::Rejected;
    }
    let cond = (0..3).any(|i| evaluated(i) && t[i] != DimensionStatus::Clean)
        || findings.iter().any(|f| f.severity >= Severity::Warning);
    if cond {
        VerdictLevel::Conditional
    } else {
        VerdictLevel::Approved
    }
}

#[test]
fn all_triples_score_as_point_sum() {
    let all = triples();
    assert_eq!(all.len(), 27);
    for t in all {
        let c = Scorecard::new(t[0], t[1], t[2]);
        let want = points(t[0]) + points(t[1]) + points(t[2]);
        assert_eq!(c.risk_score, want, "{t:?}");
        assert!(c.risk_score <= 6);
    }
}

#[test]
fn verdict_matches_predicate_over_triples_and_finding_sets() {
    let mut cases = 0;
    for t in triples() {
        for skipped in [0u8, 0b100, 0b110] {
            for mask in 0..(1u32 << candidates().len()) {
                let f = subset(mask);
                let got = decide_verdict(&card(t, skipped), &f).level;
                assert_eq!(got, expected(t, skipped, &f), "{t:?} skipped={skipped:03b} findings={mask:06b}");
                cases += 1;
            }
        }
    }
    assert_eq!(cases, 27 * 3 * 64);
}

#[test]
fn confirmed_malicious_dimension_always_rejects() {
    for t in triples().into_iter().filter(|t| t[0] == DimensionStatus::Confirmed) {
        for mask in 0..64 {
            assert_eq!(decide_verdict(&card(t, 0), &subset(mask)).level, VerdictLevel::Rejected);
        }
    }
}

#[test]
fn rejection_rationale_names_the_deciding_findings() {
    let c = card([DimensionStatus::Clean, DimensionStatus::Confirmed, DimensionStatus::Clean], 0);
    let v = decide_verdict(&c, &subset(0b10));
    assert_eq!(v.level, VerdictLevel::Rejected);
    assert_eq!(v.rationale, vec!["C-SEM".to_string()]);
}

fn rank(l: VerdictLevel) -> u8 {
    match l {
        VerdictLevel::Approved => 0,
        VerdictLevel::Conditional => 1,
        VerdictLevel::Rejected => 2,
    }
}

proptest! {
    #[test]
    fn verdict_is_monotone_in_statuses(
        a in prop::array::uniform3(0usize..3),
        bump in 0usize..3,
        mask in 0u32..64,
        skipped in prop::sample::select(vec![0u8, 0b100, 0b110]),
    ) {
        let t = [STATUSES[a[0]], STATUSES[a[1]], STATUSES[a[2]]];
        let mut u = t;
        u[bump] = STATUSES[(a[bump] + 1).min(2)];
        let f = subset(mask);
        let lo = decide_verdict(&card(t, skipped), &f).level;
        let hi = decide_verdict(&card(u, skipped), &f).level;
        prop_assert!(rank(hi) >= rank(lo));
    }

    #[test]
    fn verdict_is_monotone_in_findings(a in prop::array::uniform3(0usize..3), mask in 0u32..64, more in 0u32..64) {
        let t = [STATUSES[a[0]], STATUSES[a[1]], STATUSES[a[2]]];
        let lo = decide_verdict(&card(t, 0), &subset(mask)).level;
        let hi = decide_verdict(&card(t, 0), &subset(mask | more)).level;
        prop_assert!(rank(hi) >= rank(lo));
    }
}

#[test]
fn report_rendering_is_deterministic() {
    let auditor = Auditor::new(AuditConfig {
        mode: AuditMode::Quick,
        ..AuditConfig::default()
    })
    .unwrap();
    for name in common::fixture_names() {
        let r = auditor.run_audit(&IngestSource::Directory(common::fixture(&name))).unwrap().normalized();
        for fmt in [ReportFormat::Json, ReportFormat::Text] {
            assert_eq!(render_report(&r, fmt), render_report(&r, fmt), "{name}");
        }
        let json = render_report(&r, ReportFormat::Json);
        let back: skillaudit::AuditReport = serde_json::from_slice(&json).unwrap();
        assert_eq!(render_report(&back, ReportFormat::Json), json, "{name}");
    }
}
