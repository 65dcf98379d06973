use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::alignment::{CanonicalKey, CapabilitySet, NormalizationTable};
use crate::evidence::Evidence;
use crate::finding::{Finding, FindingDimension};
use crate::gatekeeper::{target_files, FileTarget};
use crate::provider::{
    parse_tag_suggestions, InferenceProvider, Provenance, ProviderRequest, ProviderTask,
};
use crate::rules::{compile, RuleError};
use crate::skill::{classify_structure, SkillPackage, StructureProfile};

/// What hazardous output a skill can emit (policy source side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputTag {
    UnsanitizedExternalString,
    ExecutableCodeFragments,
    SensitiveCredentialsOrData,
    ManipulativeSemantics,
}

/// What hazardous sink a skill exposes (policy sink side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputTag {
    ShellOrInterpreterExecution,
    LlmPromptInjection,
    SensitiveActionParameter,
    ExternalNetworkEgress,
    PersistentStateOrConfig,
    SensitiveActionTrigger,
}

impl OutputTag {
    pub const ALL: [OutputTag; 4] = [
        OutputTag::UnsanitizedExternalString,
        OutputTag::ExecutableCodeFragments,
        OutputTag::SensitiveCredentialsOrData,
        OutputTag::ManipulativeSemantics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutputTag::UnsanitizedExternalString => "unsanitized_external_string",
            OutputTag::ExecutableCodeFragments => "executable_code_fragments",
            OutputTag::SensitiveCredentialsOrData => "sensitive_credentials_or_data",
            OutputTag::ManipulativeSemantics => "manipulative_semantics",
        }
    }
}

impl InputTag {
    pub const ALL: [InputTag; 6] = [
        InputTag::ShellOrInterpreterExecution,
        InputTag::LlmPromptInjection,
        InputTag::SensitiveActionParameter,
        InputTag::ExternalNetworkEgress,
        InputTag::PersistentStateOrConfig,
        InputTag::SensitiveActionTrigger,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InputTag::ShellOrInterpreterExecution => "shell_or_interpreter_execution",
            InputTag::LlmPromptInjection => "llm_prompt_injection",
            InputTag::SensitiveActionParameter => "sensitive_action_parameter",
            InputTag::ExternalNetworkEgress => "external_network_egress",
            InputTag::PersistentStateOrConfig => "persistent_state_or_config",
            InputTag::SensitiveActionTrigger => "sensitive_action_trigger",
        }
    }

    /// Structural pre-filter: a skill without scripts cannot execute input.
    pub fn admitted_by(self, structure: &StructureProfile) -> bool {
        !(self == InputTag::ShellOrInterpreterExecution && structure.document_only)
    }
}

impl FromStr for OutputTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        OutputTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown output tag `{s}`"))
    }
}

impl FromStr for InputTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        InputTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown input tag `{s}`"))
    }
}

impl fmt::Display for OutputTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for InputTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One tag on a fingerprint with the snippet that justifies it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRecord<T> {
    pub tag: T,
    pub evidence: Evidence,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    pub rule_id: String,
}

impl<T> TagRecord<T> {
    pub fn deterministic(tag: T, evidence: Evidence, rule_id: &str) -> TagRecord<T> {
        TagRecord {
            tag,
            evidence,
            provenance: Provenance::Deterministic,
            confidence: None,
            rule_id: rule_id.to_string(),
        }
    }

    fn precedence(&self) -> (bool, &str, usize, &str) {
        (
            self.provenance == Provenance::Inferred,
            &self.evidence.path,
            self.evidence.offset,
            &self.rule_id,
        )
    }
}

/// Keep one record per tag: deterministic first, then earliest citation.
fn insert_tag<T: Ord + Copy>(list: &mut Vec<TagRecord<T>>, rec: TagRecord<T>) {
    match list.binary_search_by(|r| r.tag.cmp(&rec.tag)) {
        Ok(i) => {
            if rec.precedence() < list[i].precedence() {
                list[i] = rec;
            }
        }
        Err(i) => list.insert(i, rec),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskFingerprint {
    pub skill_id: String,
    /// Content fingerprint of the package, hex.
    pub digest: String,
    pub output_tags: Vec<TagRecord<OutputTag>>,
    pub input_tags: Vec<TagRecord<InputTag>>,
    pub structure: StructureProfile,
}

impl RiskFingerprint {
    pub fn new(skill_id: impl Into<String>, digest: impl Into<String>, structure: StructureProfile) -> Self {
        RiskFingerprint {
            skill_id: skill_id.into(),
            digest: digest.into(),
            output_tags: Vec::new(),
            input_tags: Vec::new(),
            structure,
        }
    }

    pub fn output(&self, tag: OutputTag) -> Option<&TagRecord<OutputTag>> {
        self.output_tags.iter().find(|r| r.tag == tag)
    }

    pub fn input(&self, tag: InputTag) -> Option<&TagRecord<InputTag>> {
        self.input_tags.iter().find(|r| r.tag == tag)
    }

    pub fn add_output(&mut self, rec: TagRecord<OutputTag>) {
        insert_tag(&mut self.output_tags, rec);
    }

    pub fn add_input(&mut self, rec: TagRecord<InputTag>) {
        insert_tag(&mut self.input_tags, rec);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagSide {
    Output(OutputTag),
    Input(InputTag),
}

impl TagSide {
    pub fn parse(side: &str, tag: &str) -> Result<TagSide, String> {
        match side {
            "output" => tag.parse().map(TagSide::Output),
            "input" => tag.parse().map(TagSide::Input),
            other => Err(format!("side must be output or input, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum TagTrigger {
    Capability(CanonicalKey),
    Pattern { target: FileTarget, regex: Regex },
    Structure(String),
}

#[derive(Debug, Clone)]
pub struct TagRule {
    pub id: String,
    pub trigger: TagTrigger,
    pub tag: TagSide,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TagRuleFile {
    #[allow(dead_code)]
    schema_version: u32,
    #[serde(default)]
    rule: Vec<RawTagRule>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTagRule {
    id: String,
    kind: String,
    side: String,
    tag: String,
    capability: Option<String>,
    target: Option<String>,
    pattern: Option<String>,
    flag: Option<String>,
}

/// Deterministic tag assignment table.
#[derive(Debug, Clone, Default)]
pub struct TagRuleSet {
    pub rules: Vec<TagRule>,
}

impl TagRuleSet {
    pub fn parse(text: &str, file: &str, norm: &NormalizationTable) -> Result<TagRuleSet, RuleError> {
        let raw: TagRuleFile = toml::from_str(text).map_err(|e| RuleError::parse(file, e))?;
        let mut rules: Vec<TagRule> = Vec::new();
        for r in raw.rule {
            let bad = |msg: String| RuleError::invalid(file, format!("tag rule {}: {msg}", r.id));
            if rules.iter().any(|x| x.id == r.id) {
                return Err(bad("duplicate id".into()));
            }
            let tag = TagSide::parse(&r.side, &r.tag).map_err(bad)?;
            let trigger = match r.kind.as_str() {
                "capability" => {
                    let label = r.capability.as_deref().ok_or_else(|| bad("missing `capability`".into()))?;
                    let (res, acc) = label
                        .split_once(':')
                        .ok_or_else(|| bad(format!("capability `{label}` is not resource:access")))?;
                    let n = norm.normalize(res, acc).map_err(|e| bad(e.to_string()))?;
                    TagTrigger::Capability(n.key)
                }
                "pattern" => {
                    let target = r.target.as_deref().unwrap_or("any");
                    let target = FileTarget::parse(target).ok_or_else(|| bad(format!("unknown target `{target}`")))?;
                    let pattern = r.pattern.as_deref().ok_or_else(|| bad("missing `pattern`".into()))?;
                    TagTrigger::Pattern {
                        target,
                        regex: compile(file, &r.id, pattern)?,
                    }
                }
                "structure" => {
                    let flag = r.flag.clone().ok_or_else(|| bad("missing `flag`".into()))?;
                    if StructureProfile::default().flag(&flag).is_none() {
                        return Err(bad(format!("unknown structure flag `{flag}`")));
                    }
                    TagTrigger::Structure(flag)
                }
                other => return Err(bad(format!("unknown kind `{other}`"))),
            };
            rules.push(TagRule {
                id: r.id,
                trigger,
                tag,
            });
        }
        Ok(TagRuleSet { rules })
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// A fingerprint plus the notes and counters produced while tagging.
#[derive(Debug, Clone)]
pub struct RiskProfile {
    pub fingerprint: RiskFingerprint,
    pub findings: Vec<Finding>,
    /// Tag rules evaluated; always `rules.len()` for one package.
    pub rule_applications: u64,
}

fn first_line(path: &str, text: &str) -> Option<Evidence> {
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        if !line.trim().is_empty() {
            return Some(Evidence::for_span(path, text, pos, pos + line.trim_end().len()));
        }
        pos += line.len();
    }
    None
}

fn structure_evidence(package: &SkillPackage, flag: &str) -> Option<Evidence> {
    let manifest = package.manifest_file();
    let doc = || first_line(&manifest.path, &manifest.text);
    if flag == "document_only" {
        return doc();
    }
    package
        .scripts
        .iter()
        .find_map(|s| first_line(&s.path, &s.text()))
        .or_else(doc)
}

fn apply(fp: &mut RiskFingerprint, side: TagSide, evidence: Evidence, provenance: Provenance, confidence: Option<f64>, rule_id: &str) {
    match side {
        TagSide::Output(tag) => fp.add_output(TagRecord {
            tag,
            evidence,
            provenance,
            confidence,
            rule_id: rule_id.to_string(),
        }),
        TagSide::Input(tag) => fp.add_input(TagRecord {
            tag,
            evidence,
            provenance,
            confidence,
            rule_id: rule_id.to_string(),
        }),
    }
}

/// Tag one skill. Deterministic rules run first; the provider is asked only
/// when a side ends up with no tags, and only that side is filled from its
/// suggestions. Tags that contradict the package structure are dropped with
/// an INFO finding.
pub fn profile_risk(
    package: &SkillPackage,
    caps: &CapabilitySet,
    rules: &TagRuleSet,
    provider: Option<&dyn InferenceProvider>,
) -> RiskProfile {
    let structure = classify_structure(package);
    let mut fp = RiskFingerprint::new(&package.id, package.fingerprint.to_string(), structure);
    let mut findings = Vec::new();
    let mut applications = 0u64;

    for rule in &rules.rules {
        applications += 1;
        match &rule.trigger {
            TagTrigger::Capability(key) => {
                if let Some(cap) = caps.get(key) {
                    apply(&mut fp, rule.tag, cap.evidence.clone(), cap.provenance, cap.confidence, &rule.id);
                }
            }
            TagTrigger::Pattern { target, regex } => {
                let hit = target_files(package, *target).into_iter().find_map(|(path, text)| {
                    regex
                        .find_iter(&text)
                        .find(|m| !m.as_str().is_empty())
                        .map(|m| Evidence::for_match(path, &text, m.start(), m.end()))
                });
                if let Some(ev) = hit {
                    apply(&mut fp, rule.tag, ev, Provenance::Deterministic, None, &rule.id);
                }
            }
            TagTrigger::Structure(flag) => {
                if structure.flag(flag) == Some(true) {
                    if let Some(ev) = structure_evidence(package, flag) {
                        apply(&mut fp, rule.tag, ev, Provenance::Deterministic, None, &rule.id);
                    }
                }
            }
        }
    }

    let need_output = fp.output_tags.is_empty();
    let need_input = fp.input_tags.is_empty();
    if let Some(provider) = provider.filter(|_| need_output || need_input) {
        consult_provider(package, provider, &mut fp, need_output, need_input, &mut findings);
    }

    if structure.document_only {
        let before = fp.input_tags.len();
        let dropped: Vec<String> = fp
            .input_tags
            .iter()
            .filter(|r| !r.tag.admitted_by(&structure))
            .map(|r| format!("{} ({})", r.tag, r.rule_id))
            .collect();
        fp.input_tags.retain(|r| r.tag.admitted_by(&structure));
        if fp.input_tags.len() != before {
            findings.push(Finding::info(
                "FLOW-STRUCTURE-DROP",
                FindingDimension::CompositionSafety,
                format!("document-only skill: dropped sink tag {}", dropped.join(", ")),
            ));
        }
    }

    RiskProfile {
        fingerprint: fp,
        findings,
        rule_applications: applications,
    }
}

fn consult_provider(
    package: &SkillPackage,
    provider: &dyn InferenceProvider,
    fp: &mut RiskFingerprint,
    need_output: bool,
    need_input: bool,
    findings: &mut Vec<Finding>,
) {
    let files = target_files(package, FileTarget::Any);
    for (path, text) in files.iter().filter(|(_, t)| !t.trim().is_empty()) {
        let request = ProviderRequest::new(ProviderTask::RiskTags, text.as_ref());
        let suggestions = provider
            .infer(&request)
            .and_then(|resp| parse_tag_suggestions(&resp));
        let suggestions = match suggestions {
            Ok(s) => s,
            Err(e) => {
                let msg = format!("{} provider gave no tag suggestion for {path}: {e}", provider.kind());
                if !findings.iter().any(|f| f.message == msg) {
                    findings.push(Finding::info("PIPE-PROVIDER-NO-SUGGESTION", FindingDimension::Pipeline, msg));
                }
                continue;
            }
        };
        for s in suggestions {
            let Ok(side) = TagSide::parse(&s.side, &s.tag) else {
                continue;
            };
            let wanted = match side {
                TagSide::Output(_) => need_output,
                TagSide::Input(_) => need_input,
            };
            if !wanted {
                continue;
            }
            let Some(ev) = Evidence::find(path, text, &s.snippet) else {
                continue;
            };
            let rule_id = format!("provider:{}", provider.kind());
            apply(fp, side, ev, Provenance::Inferred, Some(s.confidence), &rule_id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::extract_implemented;
    use crate::provider::DeterministicProvider;
    use crate::rules::RuleRepository;
    use crate::skill::{package_from_files, RawFile};

    fn profile(files: &[(&str, &str)], with_provider: bool) -> RiskProfile {
        let repo = RuleRepository::defaults();
        let raw = files.iter().map(|(p, t)| RawFile::new(*p, *t)).collect();
        let pkg = package_from_files(raw, None).unwrap();
        let provider = DeterministicProvider::new(repo.provider_tables.clone());
        let p: Option<&dyn InferenceProvider> = if with_provider { Some(&provider) } else { None };
        let (caps, _) = extract_implemented(&pkg, &repo.analyzers, &repo.normalization, None);
        profile_risk(&pkg, &caps, &repo.tag_rules, p)
    }

    const MD: &str = "---\nname: t\ndescription: d\n---\n";

    #[test]
    fn credential_env_read_tags_output() {
        let p = profile(
            &[("SKILL.md", MD), ("dump.sh", "#!/bin/sh\necho \"$GITHUB_TOKEN\"\n")],
            false,
        );
        let rec = p.fingerprint.output(OutputTag::SensitiveCredentialsOrData).expect("tag");
        assert_eq!(rec.provenance, Provenance::Deterministic);
        assert!(rec.evidence.snippet.contains("GITHUB_TOKEN"), "{rec:?}");
    }

    #[test]
    fn fetched_page_into_output() {
        let md = format!("{MD}Returns the fetched page content verbatim to the agent.\n");
        let p = profile(&[("SKILL.md", &md)], false);
        assert!(p.fingerprint.output(OutputTag::UnsanitizedExternalString).is_some());
    }

    #[test]
    fn document_only_drops_inferred_shell_sink() {
        let md = format!("{MD}This skill runs arbitrary commands you paste.\n");
        let p = profile(&[("SKILL.md", &md)], true);
        assert!(p.fingerprint.input(InputTag::ShellOrInterpreterExecution).is_none());
        assert!(p.findings.iter().any(|f| f.finding_id == "FLOW-STRUCTURE-DROP"));
    }

    #[test]
    fn counts_every_rule_once() {
        let repo = RuleRepository::defaults();
        let p = profile(&[("SKILL.md", MD)], false);
        assert_eq!(p.rule_applications, repo.tag_rules.len() as u64);
    }

    #[test]
    fn malformed_side_rejected() {
        let norm = NormalizationTable::canonical_only();
        let text = "schema_version = 1\n[[rule]]\nid = \"X\"\nkind = \"capability\"\ncapability = \"network:egress\"\nside = \"output\"\ntag = \"external_network_egress\"\n";
        assert!(TagRuleSet::parse(text, "t", &norm).is_err());
        let text = text.replace("side = \"output\"", "side = \"input\"");
        assert_eq!(TagRuleSet::parse(&text, "t", &norm).unwrap().len(), 1);
    }

    #[test]
    fn provider_only_fills_empty_side() {
        let md = format!("{MD}Scrapes sites.\n");
        let p = profile(&[("SKILL.md", &md)], true);
        let rec = p.fingerprint.output(OutputTag::UnsanitizedExternalString).unwrap();
        assert_eq!(rec.provenance, Provenance::Inferred);
        assert!(rec.confidence.is_some());
    }
}
