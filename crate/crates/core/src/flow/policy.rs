use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::evidence::{Evidence, FileLookup};
use crate::provider::Provenance;
use crate::rules::RuleError;

use super::tags::{InputTag, OutputTag, RiskFingerprint};
use super::FlowError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackPattern {
    CommandInjection,
    IndirectPromptInjection,
    ParameterTampering,
    RemoteCodeExecution,
    DataExfiltration,
    DataLeakage,
    FactPoisoning,
    IntentHijacking,
}

impl AttackPattern {
    pub const ALL: [AttackPattern; 8] = [
        AttackPattern::CommandInjection,
        AttackPattern::IndirectPromptInjection,
        AttackPattern::ParameterTampering,
        AttackPattern::RemoteCodeExecution,
        AttackPattern::DataExfiltration,
        AttackPattern::DataLeakage,
        AttackPattern::FactPoisoning,
        AttackPattern::IntentHijacking,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackPattern::CommandInjection => "CommandInjection",
            AttackPattern::IndirectPromptInjection => "IndirectPromptInjection",
            AttackPattern::ParameterTampering => "ParameterTampering",
            AttackPattern::RemoteCodeExecution => "RemoteCodeExecution",
            AttackPattern::DataExfiltration => "DataExfiltration",
            AttackPattern::DataLeakage => "DataLeakage",
            AttackPattern::FactPoisoning => "FactPoisoning",
            AttackPattern::IntentHijacking => "IntentHijacking",
        }
    }
}

impl FromStr for AttackPattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        AttackPattern::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown attack pattern `{s}`"))
    }
}

impl fmt::Display for AttackPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskLinkPolicy {
    pub policy_id: String,
    pub source: OutputTag,
    pub sink: InputTag,
    pub attack_pattern: AttackPattern,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyFile {
    #[allow(dead_code)]
    schema_version: u32,
    #[serde(default)]
    policy: Vec<RawPolicy>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    id: String,
    source: String,
    sink: String,
    attack_pattern: String,
}

pub fn parse_policies(text: &str, file: &str) -> Result<Vec<RiskLinkPolicy>, RuleError> {
    let raw: PolicyFile = toml::from_str(text).map_err(|e| RuleError::parse(file, e))?;
    let mut out: Vec<RiskLinkPolicy> = Vec::new();
    for p in raw.policy {
        let bad = |m: String| RuleError::invalid(file, format!("policy {}: {m}", p.id));
        if out.iter().any(|x| x.policy_id == p.id) {
            return Err(bad("duplicate id".into()));
        }
        let policy = RiskLinkPolicy {
            source: p.source.parse().map_err(bad)?,
            sink: p.sink.parse().map_err(bad)?,
            attack_pattern: p.attack_pattern.parse().map_err(bad)?,
            policy_id: p.id.clone(),
        };
        if out.iter().any(|x| x.source == policy.source && x.sink == policy.sink) {
            return Err(bad(format!("pair {} -> {} already covered", policy.source, policy.sink)));
        }
        out.push(policy);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinkStatus {
    Suspected,
    Confirmed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RiskLinkFinding {
    pub source_skill: String,
    pub sink_skill: String,
    pub policy_id: String,
    pub attack_pattern: AttackPattern,
    pub status: LinkStatus,
    pub source_evidence: Evidence,
    pub sink_evidence: Evidence,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl RiskLinkFinding {
    pub fn involves(&self, skill_id: &str) -> bool {
        self.source_skill == skill_id || self.sink_skill == skill_id
    }

    fn order_key(&self) -> (&str, &str, &str) {
        (&self.source_skill, &self.sink_skill, &self.policy_id)
    }
}

/// Surviving ordered (source, sink) index pairs, sorted by (source id, sink
/// id). A pair survives when some policy's source tag is on the source, its
/// sink tag is on the sink, and the sink's structure admits that tag.
pub fn prefilter_pairs(fingerprints: &[RiskFingerprint], policies: &[RiskLinkPolicy]) -> Vec<(usize, usize)> {
    let mut by_sink: BTreeMap<InputTag, Vec<usize>> = BTreeMap::new();
    for (i, fp) in fingerprints.iter().enumerate() {
        for rec in &fp.input_tags {
            if rec.tag.admitted_by(&fp.structure) {
                by_sink.entry(rec.tag).or_default().push(i);
            }
        }
    }
    let mut pairs = BTreeSet::new();
    for (a, fp) in fingerprints.iter().enumerate() {
        for p in policies.iter().filter(|p| fp.output(p.source).is_some()) {
            for &b in by_sink.get(&p.sink).into_iter().flatten() {
                if a != b {
                    pairs.insert((fp.skill_id.as_str(), fingerprints[b].skill_id.as_str(), a, b));
                }
            }
        }
    }
    pairs.into_iter().map(|(_, _, a, b)| (a, b)).collect()
}

/// One finding per policy matching the pair. Sink tags the sink's structure
/// does not admit never match. Confirmed iff both tags are deterministic;
/// evidence enforcement may demote later.
pub fn match_policies(
    source: &RiskFingerprint,
    sink: &RiskFingerprint,
    policies: &[RiskLinkPolicy],
) -> Vec<RiskLinkFinding> {
    policies
        .iter()
        .filter_map(|p| {
            let out = source.output(p.source)?;
            let inp = sink.input(p.sink).filter(|r| r.tag.admitted_by(&sink.structure))?;
            let both = out.provenance == Provenance::Deterministic && inp.provenance == Provenance::Deterministic;
            Some(RiskLinkFinding {
                source_skill: source.skill_id.clone(),
                sink_skill: sink.skill_id.clone(),
                policy_id: p.policy_id.clone(),
                attack_pattern: p.attack_pattern,
                status: if both { LinkStatus::Confirmed } else { LinkStatus::Suspected },
                source_evidence: out.evidence.clone(),
                sink_evidence: inp.evidence.clone(),
                notes: Vec::new(),
            })
        })
        .collect()
}

/// Resolve a skill id to its files for evidence checks.
pub trait PackageLookup: Sync {
    fn files_of(&self, skill_id: &str) -> Option<&dyn FileLookup>;
}

impl<F: FileLookup + Sync> PackageLookup for BTreeMap<String, F> {
    fn files_of(&self, skill_id: &str) -> Option<&dyn FileLookup> {
        self.get(skill_id).map(|f| f as &dyn FileLookup)
    }
}

/// Check both citations against the original files. A failing citation
/// demotes the finding to Suspected with a note; status is never raised.
pub fn enforce_evidence(
    mut finding: RiskLinkFinding,
    packages: &dyn PackageLookup,
) -> Result<RiskLinkFinding, FlowError> {
    let src = packages
        .files_of(&finding.source_skill)
        .ok_or_else(|| FlowError::SkillNotFound(finding.source_skill.clone()))?;
    let dst = packages
        .files_of(&finding.sink_skill)
        .ok_or_else(|| FlowError::SkillNotFound(finding.sink_skill.clone()))?;
    let mut failed = Vec::new();
    if !finding.source_evidence.verify(src) {
        failed.push(format!(
            "source evidence not found verbatim at {}:{}",
            finding.source_evidence.path, finding.source_evidence.offset
        ));
    }
    if !finding.sink_evidence.verify(dst) {
        failed.push(format!(
            "sink evidence not found verbatim at {}:{}",
            finding.sink_evidence.path, finding.sink_evidence.offset
        ));
    }
    if !failed.is_empty() {
        finding.status = LinkStatus::Suspected;
        finding.notes.extend(failed);
    }
    Ok(finding)
}

/// Default cap on pair evaluations per batch.
pub const DEFAULT_BUDGET: usize = 250_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub findings: Vec<RiskLinkFinding>,
    /// Pairs surviving the pre-filter.
    pub candidates: usize,
    /// Pairs matched against the policies.
    pub evaluated: usize,
    /// Set when the budget cut the candidate list short.
    pub truncated: bool,
}

/// Pre-filter, match and enforce over the whole corpus. Candidates are
/// processed in order, so a budget cut keeps the lowest-ordered pairs. Work
/// is spread over the current rayon pool; output order does not depend on it.
pub fn simulate_batch(
    fingerprints: &[RiskFingerprint],
    policies: &[RiskLinkPolicy],
    packages: &dyn PackageLookup,
    budget: usize,
) -> Result<SimulationOutcome, FlowError> {
    let candidates = prefilter_pairs(fingerprints, policies);
    let take = candidates.len().min(budget);
    let per_pair: Vec<Vec<RiskLinkFinding>> = candidates[..take]
        .par_iter()
        .map(|&(a, b)| {
            match_policies(&fingerprints[a], &fingerprints[b], policies)
                .into_iter()
                .map(|f| enforce_evidence(f, packages))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let mut findings: Vec<RiskLinkFinding> = per_pair.into_iter().flatten().collect();
    findings.sort_by(|x, y| x.order_key().cmp(&y.order_key()));
    Ok(SimulationOutcome {
        findings,
        candidates: candidates.len(),
        evaluated: take,
        truncated: take < candidates.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::tags::TagRecord;
    use crate::skill::StructureProfile;

    fn shipped() -> Vec<RiskLinkPolicy> {
        parse_policies(include_str!("../../rules/policies.toml"), "policies.toml").unwrap()
    }

    fn fp(id: &str, outs: &[OutputTag], ins: &[InputTag]) -> RiskFingerprint {
        let structure = StructureProfile {
            document_only: false,
            has_executable_scripts: true,
            has_network_surface_hint: false,
        };
        let mut f = RiskFingerprint::new(id, "0", structure);
        for &t in outs {
            f.add_output(TagRecord::deterministic(t, ev(t.as_str()), "T"));
        }
        for &t in ins {
            f.add_input(TagRecord::deterministic(t, ev(t.as_str()), "T"));
        }
        f
    }

    fn ev(s: &str) -> Evidence {
        Evidence::exact("f", s, 0, s.len())
    }

    #[test]
    fn p6_candidate_and_match() {
        let a = fp("a", &[OutputTag::SensitiveCredentialsOrData], &[]);
        let b = fp("b", &[], &[InputTag::ExternalNetworkEgress]);
        let fps = vec![a, b];
        assert_eq!(prefilter_pairs(&fps, &shipped()), vec![(0, 1)]);
        let m = match_policies(&fps[0], &fps[1], &shipped());
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].policy_id, "P6");
        assert_eq!(m[0].attack_pattern, AttackPattern::DataExfiltration);
        assert_eq!(m[0].status, LinkStatus::Confirmed);
    }

    #[test]
    fn unsanitized_into_two_sinks() {
        let a = fp("a", &[OutputTag::UnsanitizedExternalString], &[]);
        let b = fp("b", &[], &[InputTag::ShellOrInterpreterExecution, InputTag::LlmPromptInjection]);
        let ids: Vec<_> = match_policies(&a, &b, &shipped()).into_iter().map(|f| f.attack_pattern).collect();
        assert_eq!(ids, [AttackPattern::CommandInjection, AttackPattern::IndirectPromptInjection]);
    }

    #[test]
    fn manipulative_to_egress_is_nothing() {
        let a = fp("a", &[OutputTag::ManipulativeSemantics], &[]);
        let b = fp("b", &[], &[InputTag::ExternalNetworkEgress]);
        assert!(match_policies(&a, &b, &shipped()).is_empty());
    }

    #[test]
    fn no_outputs_no_candidates() {
        let fps = vec![fp("a", &[], &[InputTag::ExternalNetworkEgress]), fp("b", &[], &[InputTag::LlmPromptInjection])];
        assert!(prefilter_pairs(&fps, &shipped()).is_empty());
    }

    #[test]
    fn enforcement_demotes_and_errors() {
        let a = fp("a", &[OutputTag::SensitiveCredentialsOrData], &[]);
        let b = fp("b", &[], &[InputTag::ExternalNetworkEgress]);
        let f = match_policies(&a, &b, &shipped()).remove(0);
        let mut files: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        files.insert("a".into(), BTreeMap::from([("f".into(), "sensitive_credentials_or_data".into())]));
        files.insert("b".into(), BTreeMap::from([("f".into(), "external_network_egress".into())]));
        assert_eq!(enforce_evidence(f.clone(), &files).unwrap().status, LinkStatus::Confirmed);

        files.get_mut("a").unwrap().insert("f".into(), "sensitive_credentials_or_dat4".into());
        let d = enforce_evidence(f.clone(), &files).unwrap();
        assert_eq!(d.status, LinkStatus::Suspected);
        assert_eq!(d.notes.len(), 1);

        files.get_mut("b").unwrap().clear();
        assert_eq!(enforce_evidence(f.clone(), &files).unwrap().notes.len(), 2);

        files.remove("b");
        assert_eq!(enforce_evidence(f, &files), Err(FlowError::SkillNotFound("b".into())));
    }

    #[test]
    fn zero_budget_truncates() {
        let fps = vec![
            fp("a", &[OutputTag::SensitiveCredentialsOrData], &[]),
            fp("b", &[], &[InputTag::ExternalNetworkEgress]),
        ];
        let files: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let out = simulate_batch(&fps, &shipped(), &files, 0).unwrap();
        assert!(out.findings.is_empty());
        assert!(out.truncated);
        assert_eq!((out.candidates, out.evaluated), (1, 0));
    }

    #[test]
    fn duplicate_pair_rejected() {
        let text = "schema_version = 1\n[[policy]]\nid = \"A\"\nsource = \"manipulative_semantics\"\nsink = \"sensitive_action_trigger\"\nattack_pattern = \"IntentHijacking\"\n[[policy]]\nid = \"B\"\nsource = \"manipulative_semantics\"\nsink = \"sensitive_action_trigger\"\nattack_pattern = \"FactPoisoning\"\n";
        assert!(parse_policies(text, "t").is_err());
    }
}
