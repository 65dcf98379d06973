use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::Deserialize;

use crate::evidence::Evidence;
use crate::finding::{Finding, FindingDimension};
use crate::provider::{parse_capability_suggestions, InferenceProvider, ProviderRequest, ProviderTask};
use crate::rules::{compile, RuleError};
use crate::skill::{LanguageHint, ScriptFile, SkillPackage};

use super::capability::{Capability, CapabilitySet, NormalizationTable, Normalized, Origin};

/// Longest assignment chain from an external source to a sink argument.
pub const MAX_BINDING_DEPTH: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorLanguage {
    Shell,
    Python,
    Javascript,
    Any,
}

impl DetectorLanguage {
    fn for_hint(hint: LanguageHint) -> DetectorLanguage {
        match hint {
            LanguageHint::Shell => DetectorLanguage::Shell,
            LanguageHint::PythonLike => DetectorLanguage::Python,
            LanguageHint::JavascriptLike => DetectorLanguage::Javascript,
            LanguageHint::Other => DetectorLanguage::Any,
        }
    }

    fn is_comment(self, trimmed: &str) -> bool {
        match self {
            DetectorLanguage::Shell | DetectorLanguage::Python => trimmed.starts_with('#'),
            DetectorLanguage::Javascript => {
                trimmed.starts_with("//") || trimmed.starts_with("/*") || trimmed.starts_with('*')
            }
            DetectorLanguage::Any => trimmed.starts_with('#') || trimmed.starts_with("//"),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzerFile {
    #[allow(dead_code)]
    schema_version: u32,
    #[serde(default)]
    implicit: BTreeMap<String, Vec<RawImplicit>>,
    #[serde(default)]
    detector: Vec<RawDetector>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImplicit {
    resource: String,
    access: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetector {
    id: String,
    language: DetectorLanguage,
    pattern: String,
    unless: Option<String>,
    resource: String,
    access: String,
    #[serde(default)]
    source: bool,
    #[serde(default)]
    sink: bool,
}

#[derive(Debug, Clone)]
pub struct Detector {
    pub id: String,
    pub language: DetectorLanguage,
    regex: Regex,
    unless: Option<Regex>,
    capability: Normalized,
    pub source: bool,
    pub sink: bool,
}

impl Detector {
    fn find<'t>(&self, line: &'t str) -> Option<regex::Match<'t>> {
        let m = self.regex.find(line)?;
        if m.as_str().is_empty() || self.unless.as_ref().is_some_and(|u| u.is_match(line)) {
            return None;
        }
        Some(m)
    }
}

/// Per-language detection tables plus capabilities implied by the language
/// itself (a shell script executes shell commands).
#[derive(Debug, Clone)]
pub struct AnalyzerRegistry {
    detectors: Vec<Detector>,
    implicit: BTreeMap<DetectorLanguage, Vec<Normalized>>,
}

impl AnalyzerRegistry {
    pub fn parse(
        text: &str,
        file: &str,
        norm: &NormalizationTable,
    ) -> Result<AnalyzerRegistry, RuleError> {
        let raw: AnalyzerFile = toml::from_str(text).map_err(|e| RuleError::parse(file, e))?;
        let mut detectors: Vec<Detector> = Vec::new();
        for d in raw.detector {
            if detectors.iter().any(|x| x.id == d.id) {
                return Err(RuleError::invalid(file, format!("duplicate detector id {}", d.id)));
            }
            let capability = norm
                .normalize(&d.resource, &d.access)
                .map_err(|e| RuleError::invalid(file, format!("{}: {e}", d.id)))?;
            detectors.push(Detector {
                regex: compile(file, &d.id, &d.pattern)?,
                unless: d
                    .unless
                    .as_deref()
                    .map(|u| compile(file, &format!("{}.unless", d.id), u))
                    .transpose()?,
                id: d.id,
                language: d.language,
                capability,
                source: d.source,
                sink: d.sink,
            });
        }
        let mut implicit = BTreeMap::new();
        for (lang, caps) in raw.implicit {
            let language: DetectorLanguage =
                serde_json::from_value(serde_json::Value::String(lang.clone())).map_err(|_| {
                    RuleError::invalid(file, format!("[implicit] unknown language `{lang}`"))
                })?;
            let list = caps
                .iter()
                .map(|c| {
                    norm.normalize(&c.resource, &c.access)
                        .map_err(|e| RuleError::invalid(file, format!("[implicit] {lang}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            implicit.insert(language, list);
        }
        Ok(AnalyzerRegistry {
            detectors,
            implicit,
        })
    }

    pub fn detectors(&self, language: DetectorLanguage) -> impl Iterator<Item = &Detector> {
        self.detectors.iter().filter(move |d| d.language == language)
    }

    pub fn has_language(&self, language: DetectorLanguage) -> bool {
        self.detectors(language).next().is_some()
    }
}

// --- I/O binding ----------------------------------------------------------------

fn shell_assign() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:export\s+|local\s+|readonly\s+|declare\s+(?:-\w+\s+)?)?([A-Za-z_][A-Za-z0-9_]*)=(.*)$")
            .unwrap()
    })
}

fn python_assign() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?::[^=]+)?=\s*([^=].*)$").unwrap())
}

fn js_assign() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:const\s+|let\s+|var\s+)?([A-Za-z_$][A-Za-z0-9_$]*)\s*=\s*([^=>].*)$")
            .unwrap()
    })
}

fn python_with_as() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bas\s+([A-Za-z_][A-Za-z0-9_]*)").unwrap())
}

fn shell_refs() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$\{?([A-Za-z_][A-Za-z0-9_]*)").unwrap())
}

fn identifiers() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[A-Za-z_$][A-Za-z0-9_$]*").unwrap())
}

/// Shell variables that are set by the shell itself rather than by the
/// caller's environment.
const SHELL_BUILTIN_VARS: &[&str] = &[
    "HOME", "PATH", "PWD", "OLDPWD", "USER", "SHELL", "TMPDIR", "RANDOM", "LINENO", "IFS",
    "HOSTNAME", "UID", "EUID", "PPID", "BASH_SOURCE", "SECONDS", "BASH", "OSTYPE",
];

/// Line-local plus assignment-chain taint tracking within one script.
struct BindingTracker {
    language: DetectorLanguage,
    tainted: HashMap<String, u8>,
    assigned: HashSet<String>,
}

impl BindingTracker {
    fn new(language: DetectorLanguage) -> BindingTracker {
        BindingTracker {
            language,
            tainted: HashMap::new(),
            assigned: HashSet::new(),
        }
    }

    fn refs<'t>(&self, text: &'t str) -> Vec<&'t str> {
        match self.language {
            DetectorLanguage::Shell => shell_refs()
                .captures_iter(text)
                .map(|c| c.get(1).unwrap().as_str())
                .collect(),
            _ => identifiers().find_iter(text).map(|m| m.as_str()).collect(),
        }
    }

    /// Smallest chain depth among variables referenced in `text`; an
    /// unassigned upper-case shell variable is read from the environment and
    /// counts as depth 0.
    fn reference_depth(&self, text: &str) -> Option<u8> {
        self.refs(text)
            .into_iter()
            .filter_map(|name| {
                if let Some(&d) = self.tainted.get(name) {
                    return Some(d);
                }
                let env_read = self.language == DetectorLanguage::Shell
                    && !self.assigned.contains(name)
                    && name.len() > 1
                    && name.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit() || b == b'_')
                    && !SHELL_BUILTIN_VARS.contains(&name);
                env_read.then_some(0)
            })
            .min()
    }

    fn assignment<'t>(&self, line: &'t str) -> Option<(&'t str, &'t str)> {
        let re = match self.language {
            DetectorLanguage::Shell => shell_assign(),
            DetectorLanguage::Python => python_assign(),
            DetectorLanguage::Javascript => js_assign(),
            DetectorLanguage::Any => python_assign(),
        };
        let c = re.captures(line)?;
        Some((c.get(1)?.as_str(), c.get(2)?.as_str()))
    }

    /// Whether a sink on this line receives external data.
    fn sink_bound(&self, line: &str, source_on_line: bool) -> bool {
        source_on_line || self.reference_depth(line).is_some()
    }

    fn observe(&mut self, line: &str, source_on_line: bool) {
        if let Some((lhs, rhs)) = self.assignment(line) {
            let depth = if source_on_line {
                Some(1)
            } else {
                self.reference_depth(rhs).map(|d| d + 1)
            };
            self.assigned.insert(lhs.to_string());
            if let Some(d) = depth.filter(|&d| d <= MAX_BINDING_DEPTH) {
                let entry = self.tainted.entry(lhs.to_string()).or_insert(d);
                *entry = (*entry).min(d);
            }
        }
        if self.language == DetectorLanguage::Python && source_on_line {
            for c in python_with_as().captures_iter(line) {
                self.tainted.insert(c[1].to_string(), 1);
            }
        }
    }
}

struct ScriptAnalysis {
    capabilities: Vec<Capability>,
    findings: Vec<Finding>,
    detections: usize,
}

fn analyze_script(script: &ScriptFile, registry: &AnalyzerRegistry) -> ScriptAnalysis {
    let text = script.text();
    let mut findings = Vec::new();
    let mut language = DetectorLanguage::for_hint(script.language_hint);
    if language == DetectorLanguage::Any || !registry.has_language(language) {
        findings.push(Finding::info(
            "ALN-ANALYZER-UNAVAILABLE",
            FindingDimension::SemanticConsistency,
            format!(
                "no dedicated analyzer for {} ({}); used the fallback pattern analyzer",
                script.path, script.language_hint
            ),
        ));
        language = DetectorLanguage::Any;
    }
    let detectors: Vec<&Detector> = registry.detectors(language).collect();
    let mut capabilities = Vec::new();

    let hint_language = DetectorLanguage::for_hint(script.language_hint);
    if let Some(implied) = registry.implicit.get(&hint_language) {
        if let Some((start, end)) = first_content_line(&text) {
            for n in implied {
                let ev = Evidence::for_span(&script.path, &text, start, end);
                capabilities.push(Capability::deterministic(
                    n.key.clone(),
                    ev,
                    &format!("implicit:{}", script.language_hint),
                ));
            }
        }
    }

    let mut tracker = BindingTracker::new(language);
    let mut detections = 0;
    let mut offset = 0;
    for raw_line in text.split_inclusive('\n') {
        let line_start = offset;
        offset += raw_line.len();
        let line = raw_line.trim_end_matches(['\n', '\r']);
        let trimmed = line.trim_start();
        if trimmed.is_empty() || language.is_comment(trimmed) {
            continue;
        }
        let hits: Vec<(&Detector, regex::Match)> =
            detectors.iter().filter_map(|d| d.find(line).map(|m| (*d, m))).collect();
        let source_on_line = hits.iter().any(|(d, _)| d.source);
        for (d, m) in &hits {
            let ev = Evidence::for_match(&script.path, &text, line_start + m.start(), line_start + m.end());
            let mut cap = Capability::deterministic(d.capability.key.clone(), ev, &d.id);
            if d.sink {
                cap.external_binding = tracker.sink_bound(line, source_on_line);
            }
            if let Some(f) = d.capability.info_finding(&format!("detector {}", d.id)) {
                findings.push(f);
            }
            capabilities.push(cap);
            detections += 1;
        }
        tracker.observe(line, source_on_line);
    }
    ScriptAnalysis {
        capabilities,
        findings,
        detections,
    }
}

fn first_content_line(text: &str) -> Option<(usize, usize)> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        if !body.trim().is_empty() {
            return Some((start, start + body.len()));
        }
    }
    None
}

fn consult_provider(
    script: &ScriptFile,
    provider: &dyn InferenceProvider,
    norm: &NormalizationTable,
    out: &mut Vec<Capability>,
    findings: &mut Vec<Finding>,
) {
    let text = script.text();
    let request = ProviderRequest::new(ProviderTask::Capabilities, text.as_ref());
    let suggestions = provider
        .infer(&request)
        .and_then(|r| parse_capability_suggestions(&r));
    let suggestions = match suggestions {
        Ok(s) => s,
        Err(e) => {
            findings.push(Finding::info(
                "PIPE-PROVIDER-NO-SUGGESTION",
                FindingDimension::Pipeline,
                format!(
                    "{} provider gave no usable capability suggestion for {}: {e}",
                    provider.kind(),
                    script.path
                ),
            ));
            return;
        }
    };
    for s in suggestions {
        let Some(ev) = Evidence::find(&script.path, &text, &s.snippet) else {
            log::debug!("dropping provider suggestion without verbatim evidence: {:?}", s.snippet);
            continue;
        };
        match norm.normalize(&s.resource, &s.access) {
            Ok(n) => {
                if let Some(f) = n.info_finding("provider suggestion") {
                    findings.push(f);
                }
                out.push(Capability::inferred(
                    n.key,
                    ev,
                    &format!("provider:{}", provider.kind()),
                    s.confidence,
                ));
            }
            Err(e) => findings.push(Finding::info(
                "PIPE-PROVIDER-NO-SUGGESTION",
                FindingDimension::Pipeline,
                format!("discarded provider suggestion for {}: {e}", script.path),
            )),
        }
    }
}

/// Extract C(s) from every script. The provider, when given, is consulted
/// only for non-empty scripts where no detector fired.
pub fn extract_implemented(
    package: &SkillPackage,
    registry: &AnalyzerRegistry,
    norm: &NormalizationTable,
    provider: Option<&dyn InferenceProvider>,
) -> (CapabilitySet, Vec<Finding>) {
    let mut set = CapabilitySet::new(&package.id, Origin::Implemented);
    let mut findings = Vec::new();
    for script in &package.scripts {
        let mut analysis = analyze_script(script, registry);
        if analysis.detections == 0 && first_content_line(&script.text()).is_some() {
            if let Some(p) = provider {
                consult_provider(script, p, norm, &mut analysis.capabilities, &mut analysis.findings);
            }
        }
        for cap in analysis.capabilities {
            set.insert(cap);
        }
        for f in analysis.findings {
            if !findings.iter().any(|x: &Finding| x.message == f.message) {
                findings.push(f);
            }
        }
    }
    (set, findings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{DeterministicProvider, ProviderTables};
    use crate::skill::{package_from_files, RawFile};

    const SKILL: &str = "---\nname: t\ndescription: test\n---\n";

    fn setup() -> (AnalyzerRegistry, NormalizationTable) {
        let norm = NormalizationTable::parse(include_str!("../../rules/normalization.toml")).unwrap();
        let reg =
            AnalyzerRegistry::parse(include_str!("../../rules/analyzers.toml"), "analyzers.toml", &norm)
                .unwrap();
        (reg, norm)
    }

    fn implemented(path: &str, code: &str) -> CapabilitySet {
        let (reg, norm) = setup();
        let pkg = package_from_files(
            vec![RawFile::new("SKILL.md", SKILL), RawFile::new(path, code)],
            None,
        )
        .unwrap();
        let (set, _) = extract_implemented(&pkg, &reg, &norm, None);
        for cap in set.items.values() {
            assert!(cap.evidence.verify(&pkg), "{cap:?}");
        }
        set
    }

    fn keys(set: &CapabilitySet) -> Vec<String> {
        set.keys().map(|k| k.to_string()).collect()
    }

    fn binding(set: &CapabilitySet, key: &str) -> bool {
        set.get(&key.parse().unwrap()).unwrap().external_binding
    }

    #[test]
    fn shell_outbound_transfer_is_egress() {
        let set = implemented("send.sh", "#!/bin/sh\ncurl -s -d @report.json https://example.com/hook\n");
        assert!(keys(&set).contains(&"network:egress".to_string()), "{:?}", keys(&set));
        assert!(!keys(&set).contains(&"network:read".to_string()));
    }

    #[test]
    fn constant_process_spawn_is_unbound() {
        let set = implemented("run.py", "import subprocess\nsubprocess.run([\"ls\", \"-l\"])\n");
        assert_eq!(keys(&set), ["shell:execute"]);
        assert!(!binding(&set, "shell:execute"));
    }

    #[test]
    fn env_read_two_lines_above_binds() {
        let set = implemented(
            "run.py",
            "import os, subprocess\ncmd = os.environ.get(\"USER_CMD\")\n\nsubprocess.run(cmd, shell=True)\n",
        );
        assert!(binding(&set, "shell:execute"));
    }

    #[test]
    fn chain_depth_is_bounded() {
        let within = "import os\na = os.getenv(\"X\")\nb = a\nc = b\nos.system(c)\n";
        assert!(binding(&implemented("w.py", within), "shell:execute"));
        let beyond = "import os\na = os.getenv(\"X\")\nb = a\nc = b\nd = c\nos.system(d)\n";
        assert!(!binding(&implemented("b.py", beyond), "shell:execute"));
    }

    #[test]
    fn comments_are_ignored() {
        let set = implemented("c.py", "# subprocess.run(x)\nprint('hi')\n");
        assert!(set.is_empty());
    }

    #[test]
    fn shell_script_implies_execution() {
        let set = implemented("hello.sh", "echo hello\n");
        assert_eq!(keys(&set), ["shell:execute"]);
    }

    #[test]
    fn shell_env_var_binds_sink() {
        let set = implemented("d.sh", "#!/bin/bash\nrm -rf \"$TARGET_DIR\"\n");
        assert!(binding(&set, "filesystem:delete"));
        let set = implemented("e.sh", "#!/bin/bash\nDIR=build\nrm -rf \"$DIR\"\n");
        assert!(!binding(&set, "filesystem:delete"));
    }

    #[test]
    fn unknown_language_falls_back_with_info() {
        let (reg, norm) = setup();
        let pkg = package_from_files(
            vec![
                RawFile::new("SKILL.md", SKILL),
                RawFile::new("tool", "#!/usr/bin/ruby\nsystem(\"ls\")\n"),
            ],
            None,
        )
        .unwrap();
        let (set, findings) = extract_implemented(&pkg, &reg, &norm, None);
        assert_eq!(keys(&set), ["shell:execute"]);
        assert!(findings.iter().any(|f| f.finding_id == "ALN-ANALYZER-UNAVAILABLE"));
    }

    #[test]
    fn provider_only_when_nothing_detected() {
        let (reg, norm) = setup();
        let provider = DeterministicProvider::new(
            ProviderTables::parse(include_str!("../../rules/provider.toml"), "provider.toml").unwrap(),
        );
        let pkg = package_from_files(
            vec![
                RawFile::new("SKILL.md", SKILL),
                RawFile::new("a.js", "const s = new socket.Client();\n"),
                RawFile::new("b.js", "const fs = require('fs');\nfs.readFileSync('x'); // socket\n"),
            ],
            None,
        )
        .unwrap();
        let (set, _) = extract_implemented(&pkg, &reg, &norm, Some(&provider));
        let egress = set.get(&"network:egress".parse().unwrap()).unwrap();
        assert_eq!(egress.provenance, crate::provider::Provenance::Inferred);
        assert_eq!(egress.evidence.path, "a.js");
        assert!(egress.evidence.verify(&pkg));
    }
}
