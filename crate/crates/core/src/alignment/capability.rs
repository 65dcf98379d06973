use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::evidence::Evidence;
use crate::finding::{Finding, FindingDimension};
use crate::provider::Provenance;

use super::AlignmentError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Resource {
    Filesystem,
    Network,
    Shell,
    Environment,
    Credentials,
    LlmPrompt,
    PersistentState,
    Process,
    ClipboardOrUi,
    Other(String),
}

impl Resource {
    pub const KNOWN: [Resource; 9] = [
        Resource::Filesystem,
        Resource::Network,
        Resource::Shell,
        Resource::Environment,
        Resource::Credentials,
        Resource::LlmPrompt,
        Resource::PersistentState,
        Resource::Process,
        Resource::ClipboardOrUi,
    ];

    /// Parse a canonical label, including the rendered `other(x)` form.
    pub fn from_canonical(label: &str) -> Option<Resource> {
        Some(match label {
            "filesystem" => Resource::Filesystem,
            "network" => Resource::Network,
            "shell" => Resource::Shell,
            "environment" => Resource::Environment,
            "credentials" => Resource::Credentials,
            "llm_prompt" => Resource::LlmPrompt,
            "persistent_state" => Resource::PersistentState,
            "process" => Resource::Process,
            "clipboard_or_ui" => Resource::ClipboardOrUi,
            other => {
                let inner = other.strip_prefix("other(")?.strip_suffix(')')?;
                if inner.is_empty() {
                    return None;
                }
                Resource::Other(inner.to_string())
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            Resource::Other(x) => format!("other({x})"),
            known => known.known_label().to_string(),
        }
    }

    fn known_label(&self) -> &'static str {
        match self {
            Resource::Filesystem => "filesystem",
            Resource::Network => "network",
            Resource::Shell => "shell",
            Resource::Environment => "environment",
            Resource::Credentials => "credentials",
            Resource::LlmPrompt => "llm_prompt",
            Resource::PersistentState => "persistent_state",
            Resource::Process => "process",
            Resource::ClipboardOrUi => "clipboard_or_ui",
            Resource::Other(_) => "other",
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Resource::Other(x) => write!(f, "other({x})"),
            known => f.write_str(known.known_label()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Access {
    Read,
    Write,
    Execute,
    Egress,
    Delete,
    Configure,
}

impl Access {
    pub const ALL: [Access; 6] = [
        Access::Read,
        Access::Write,
        Access::Execute,
        Access::Egress,
        Access::Delete,
        Access::Configure,
    ];

    pub fn from_canonical(label: &str) -> Option<Access> {
        Some(match label {
            "read" => Access::Read,
            "write" => Access::Write,
            "execute" => Access::Execute,
            "egress" => Access::Egress,
            "delete" => Access::Delete,
            "configure" => Access::Configure,
            _ => return None,
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            Access::Read => "read",
            Access::Write => "write",
            Access::Execute => "execute",
            Access::Egress => "egress",
            Access::Delete => "delete",
            Access::Configure => "configure",
        }
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Validity table for capability tuples: egress only on network, execute
/// only on shell or process, configure only on persistent state or the
/// environment. Other accesses are unrestricted.
pub fn is_valid_pair(resource: &Resource, access: Access) -> bool {
    match access {
        Access::Egress => *resource == Resource::Network,
        Access::Execute => matches!(resource, Resource::Shell | Resource::Process),
        Access::Configure => {
            matches!(resource, Resource::PersistentState | Resource::Environment)
        }
        Access::Read | Access::Write | Access::Delete => true,
    }
}

/// Identity of a capability: normalized (resource, access). Rendered and
/// serialized as `resource:access`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalKey {
    pub resource: Resource,
    pub access: Access,
}

impl CanonicalKey {
    pub fn new(resource: Resource, access: Access) -> CanonicalKey {
        CanonicalKey { resource, access }
    }
}

impl fmt::Display for CanonicalKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.resource, self.access)
    }
}

impl FromStr for CanonicalKey {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, a) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("capability key `{s}` is not of the form resource:access"))?;
        let resource =
            Resource::from_canonical(r).ok_or_else(|| format!("unknown resource `{r}`"))?;
        let access = Access::from_canonical(a).ok_or_else(|| format!("unknown access `{a}`"))?;
        Ok(CanonicalKey { resource, access })
    }
}

impl Serialize for CanonicalKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CanonicalKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capability {
    pub key: CanonicalKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qualifier: Option<String>,
    pub evidence: Evidence,
    /// Set when externally sourced data reaches this sensitive call.
    #[serde(default)]
    pub external_binding: bool,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    /// Lexicon entry, detector or provider task that produced it.
    pub rule_id: String,
}

impl Capability {
    pub fn deterministic(key: CanonicalKey, evidence: Evidence, rule_id: &str) -> Capability {
        Capability {
            key,
            qualifier: None,
            evidence,
            external_binding: false,
            provenance: Provenance::Deterministic,
            confidence: None,
            rule_id: rule_id.to_string(),
        }
    }

    pub fn inferred(
        key: CanonicalKey,
        evidence: Evidence,
        rule_id: &str,
        confidence: f64,
    ) -> Capability {
        Capability {
            provenance: Provenance::Inferred,
            confidence: Some(confidence.clamp(0.0, 1.0)),
            ..Capability::deterministic(key, evidence, rule_id)
        }
    }

    /// Ordering used to pick the representative among duplicates:
    /// deterministic before inferred, then earliest file and offset.
    fn precedence(&self) -> (bool, &str, usize, &str) {
        (
            self.provenance == Provenance::Inferred,
            self.evidence.path.as_str(),
            self.evidence.offset,
            self.rule_id.as_str(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Declared,
    Implemented,
}

/// D(s) or C(s): capabilities keyed by canonical key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilitySet {
    pub owner: String,
    pub origin: Origin,
    #[serde(with = "items_as_list")]
    pub items: BTreeMap<CanonicalKey, Capability>,
}

impl CapabilitySet {
    pub fn new(owner: impl Into<String>, origin: Origin) -> CapabilitySet {
        CapabilitySet {
            owner: owner.into(),
            origin,
            items: BTreeMap::new(),
        }
    }

    /// Insert, keeping one item per key. The representative is the
    /// deterministic, earliest-cited candidate; a binding flag on any
    /// candidate carries over.
    pub fn insert(&mut self, cap: Capability) {
        match self.items.get_mut(&cap.key) {
            None => {
                self.items.insert(cap.key.clone(), cap);
            }
            Some(existing) => {
                let binding = existing.external_binding || cap.external_binding;
                if cap.precedence() < existing.precedence() {
                    *existing = cap;
                }
                existing.external_binding = binding;
            }
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &CanonicalKey> {
        self.items.keys()
    }

    pub fn contains(&self, key: &CanonicalKey) -> bool {
        self.items.contains_key(key)
    }

    pub fn get(&self, key: &CanonicalKey) -> Option<&Capability> {
        self.items.get(key)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

mod items_as_list {
    use super::*;

    pub fn serialize<S: Serializer>(
        items: &BTreeMap<CanonicalKey, Capability>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(items.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<CanonicalKey, Capability>, D::Error> {
        let list = Vec::<Capability>::deserialize(d)?;
        Ok(list.into_iter().map(|c| (c.key.clone(), c)).collect())
    }
}

// --- normalization -----------------------------------------------------------

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizationFile {
    #[allow(dead_code)]
    schema_version: u32,
    #[serde(default)]
    resource: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    access: BTreeMap<String, Vec<String>>,
}

/// Synonym table collapsing free-form labels onto canonical ones.
#[derive(Debug, Clone, Default)]
pub struct NormalizationTable {
    resource: HashMap<String, Resource>,
    access: HashMap<String, Access>,
}

/// Result of normalizing a raw label pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub key: CanonicalKey,
    /// Set when the resource label was unknown and became `other(label)`.
    pub unknown_resource: Option<String>,
}

impl Normalized {
    pub fn info_finding(&self, context: &str) -> Option<Finding> {
        self.unknown_resource.as_ref().map(|label| {
            Finding::info(
                "ALN-UNKNOWN-RESOURCE",
                FindingDimension::SemanticConsistency,
                format!("unknown resource label `{label}` in {context}; kept as {}", self.key),
            )
        })
    }
}

pub(crate) fn fold_label(label: &str) -> String {
    label
        .trim()
        .to_lowercase()
        .chars()
        .map(|c| if c == '-' || c.is_whitespace() { '_' } else { c })
        .collect()
}

impl NormalizationTable {
    pub fn parse(text: &str) -> Result<NormalizationTable, String> {
        let file: NormalizationFile = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut table = NormalizationTable::canonical_only();
        for (canonical, synonyms) in file.resource {
            let target = Resource::from_canonical(&canonical)
                .filter(|r| !matches!(r, Resource::Other(_)))
                .ok_or_else(|| format!("[resource] key `{canonical}` is not a canonical resource"))?;
            for syn in synonyms {
                table.add_resource(&syn, target.clone())?;
            }
        }
        for (canonical, synonyms) in file.access {
            let target = Access::from_canonical(&canonical)
                .ok_or_else(|| format!("[access] key `{canonical}` is not a canonical access"))?;
            for syn in synonyms {
                table.add_access(&syn, target)?;
            }
        }
        Ok(table)
    }

    /// Table that only knows the canonical labels themselves.
    pub fn canonical_only() -> NormalizationTable {
        let mut table = NormalizationTable::default();
        for r in Resource::KNOWN {
            table.resource.insert(r.label(), r);
        }
        for a in Access::ALL {
            table.access.insert(a.label().to_string(), a);
        }
        table
    }

    fn add_resource(&mut self, synonym: &str, target: Resource) -> Result<(), String> {
        let key = fold_label(synonym);
        match self.resource.get(&key) {
            Some(prev) if *prev != target => Err(format!(
                "resource synonym `{synonym}` maps to both {prev} and {target}"
            )),
            _ => {
                self.resource.insert(key, target);
                Ok(())
            }
        }
    }

    fn add_access(&mut self, synonym: &str, target: Access) -> Result<(), String> {
        let key = fold_label(synonym);
        match self.access.get(&key) {
            Some(prev) if *prev != target => Err(format!(
                "access synonym `{synonym}` maps to both {prev} and {target}"
            )),
            _ => {
                self.access.insert(key, target);
                Ok(())
            }
        }
    }

    pub fn resource(&self, label: &str) -> Option<Resource> {
        let folded = fold_label(label);
        self.resource
            .get(&folded)
            .cloned()
            .or_else(|| Resource::from_canonical(&folded))
    }

    pub fn access(&self, label: &str) -> Option<Access> {
        self.access.get(&fold_label(label)).copied()
    }

    /// Map raw labels onto a canonical key. Unknown resources become
    /// `other(label)`; unknown access labels and pairs outside the validity
    /// table are errors.
    pub fn normalize(&self, resource: &str, access: &str) -> Result<Normalized, AlignmentError> {
        let access_key = self
            .access(access)
            .ok_or_else(|| AlignmentError::UnknownAccess(access.to_string()))?;
        let (resource_key, unknown) = match self.resource(resource) {
            Some(r) => (r, None),
            None => {
                let folded = fold_label(resource);
                if folded.is_empty() {
                    return Err(AlignmentError::UnknownResource(resource.to_string()));
                }
                (Resource::Other(folded.clone()), Some(folded))
            }
        };
        if !is_valid_pair(&resource_key, access_key) {
            return Err(AlignmentError::InvalidPair(format!(
                "{resource_key}:{access_key}"
            )));
        }
        Ok(Normalized {
            key: CanonicalKey::new(resource_key, access_key),
            unknown_resource: unknown,
        })
    }

    /// Normalize an already-structured key (idempotent on canonical keys).
    pub fn normalize_key(&self, key: &CanonicalKey) -> Result<Normalized, AlignmentError> {
        match &key.resource {
            Resource::Other(label) => match self.resource(label) {
                Some(r) if !matches!(r, Resource::Other(_)) => {
                    self.normalize(&r.label(), key.access.label())
                }
                _ => Ok(Normalized {
                    key: key.clone(),
                    unknown_resource: None,
                }),
            },
            _ => self.normalize(&key.resource.label(), key.access.label()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> NormalizationTable {
        NormalizationTable::parse(include_str!("../../rules/normalization.toml")).unwrap()
    }

    #[test]
    fn synonyms_collapse() {
        let t = table();
        let n = t.normalize("http", "upload").unwrap();
        assert_eq!(n.key.to_string(), "network:egress");
        assert!(n.unknown_resource.is_none());
        assert_eq!(t.normalize("env", "get").unwrap().key.to_string(), "environment:read");
        assert_eq!(t.normalize("Secrets", "Read").unwrap().key.to_string(), "credentials:read");
    }

    #[test]
    fn canonical_is_fixed_point() {
        let t = table();
        let n = t.normalize("network", "egress").unwrap();
        assert_eq!(n.key, CanonicalKey::new(Resource::Network, Access::Egress));
        assert_eq!(t.normalize_key(&n.key).unwrap().key, n.key);
    }

    #[test]
    fn unknown_resource_becomes_other_with_info() {
        let n = table().normalize("quantum", "read").unwrap();
        assert_eq!(n.key.to_string(), "other(quantum):read");
        let f = n.info_finding("test").unwrap();
        assert_eq!(f.severity, crate::finding::Severity::Info);
    }

    #[test]
    fn validity_table_rejects_nonsense() {
        let t = table();
        assert!(matches!(t.normalize("filesystem", "egress"), Err(AlignmentError::InvalidPair(_))));
        assert!(matches!(t.normalize("network", "execute"), Err(AlignmentError::InvalidPair(_))));
        assert!(t.normalize("process", "execute").is_ok());
        assert!(t.normalize("environment", "configure").is_ok());
        assert!(matches!(t.normalize("shell", "teleport"), Err(AlignmentError::UnknownAccess(_))));
    }

    #[test]
    fn key_round_trips_through_string() {
        for r in Resource::KNOWN.into_iter().chain([Resource::Other("x_y".into())]) {
            for a in Access::ALL {
                let k = CanonicalKey::new(r.clone(), a);
                assert_eq!(k.to_string().parse::<CanonicalKey>().unwrap(), k);
            }
        }
    }

    #[test]
    fn conflicting_synonyms_rejected() {
        let err = NormalizationTable::parse(
            "schema_version = 1\n[resource]\nnetwork = [\"x\"]\nshell = [\"x\"]\n",
        )
        .unwrap_err();
        assert!(err.contains("maps to both"));
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(r in "[a-zA-Z_ -]{1,12}", a_idx in 0usize..6) {
            let t = table();
            let a = Access::ALL[a_idx].label();
            if let Ok(n) = t.normalize(&r, a) {
                let again = t.normalize_key(&n.key).unwrap();
                prop_assert_eq!(&again.key, &n.key);
                prop_assert!(again.unknown_resource.is_none());
                let rendered = t.normalize(&n.key.resource.label(), a).unwrap();
                prop_assert_eq!(rendered.key, n.key);
            }
        }
    }
}
