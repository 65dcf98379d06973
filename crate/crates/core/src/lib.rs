//! Static security auditing for agent skill packages.
//!
//! The engine runs three phases over a skill bundle:
//!
//! 1. [`gatekeeper`]: independent admission gates (compliance, malicious
//!    code, hazardous dependencies, permission rationality) aggregated with
//!    BLOCK dominance.
//! 2. [`alignment`]: declared capabilities extracted from documentation are
//!    compared with capabilities implemented in code, and the pair is placed
//!    in a four-class alignment matrix.
//! 3. [`flow`]: every skill receives a risk fingerprint (output-risk and
//!    input-sensitivity tags); source/sink risk-link policies are matched
//!    across skill pairs and the confirmed links form a risk-chain graph.
//!
//! [`verdict`] fuses the phase outcomes into a scorecard and a one-vote-veto
//! verdict, and [`orchestrator`] drives the pipeline, the fingerprint
//! registry, and batch scheduling.

pub mod alignment;
pub mod evidence;
pub mod finding;
pub mod flow;
pub mod gatekeeper;
pub mod orchestrator;
pub mod provider;
pub mod rules;
pub mod skill;
pub mod verdict;

pub use evidence::Evidence;
pub use finding::{DimensionStatus, Finding, FindingDimension, Severity};
pub use orchestrator::{AuditConfig, AuditError, AuditMode, Auditor};
pub use skill::{ingest_skill, IngestSource, SkillPackage};
pub use verdict::{AuditReport, VerdictLevel};
