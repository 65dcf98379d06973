//! Cross-skill risk simulation.
//!
//! Each skill gets a risk fingerprint of output-risk (source) and
//! input-sensitivity (sink) tags. Ordered skill pairs are pre-filtered by a
//! sink-tag index, matched against the source→sink policies, and every
//! resulting link has its evidence re-checked. Confirmed links form the
//! undirected risk-chain graph.

mod graph;
mod policy;
mod tags;

use thiserror::Error;

pub use graph::{build_risk_graph, GraphEdge, GraphNode, RiskChainGraph, UnionFind};
pub use policy::{
    enforce_evidence, match_policies, parse_policies, prefilter_pairs, simulate_batch,
    AttackPattern, LinkStatus, PackageLookup, RiskLinkFinding, RiskLinkPolicy, SimulationOutcome,
    DEFAULT_BUDGET,
};
pub use tags::{
    profile_risk, InputTag, OutputTag, RiskFingerprint, RiskProfile, TagRecord, TagRule,
    TagRuleSet, TagSide, TagTrigger,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlowError {
    #[error("skill {0} is not in the corpus")]
    SkillNotFound(String),
}
