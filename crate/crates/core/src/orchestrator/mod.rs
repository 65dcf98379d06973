//! End-to-end pipeline, batch scheduling and the fingerprint registry.

mod batch;
mod config;
mod registry;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Mutex, MutexGuard};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alignment::{
    classify_alignment, deviation_findings, extract_declared, extract_implemented, score_alignment,
    AlignmentClass, AlignmentReport, CapabilitySet, Origin,
};
use crate::evidence::FileLookup;
use crate::finding::{DimensionStatus, Finding, FindingDimension, ScoreDimension, Severity};
use crate::flow::{
    build_risk_graph, profile_risk, simulate_batch, LinkStatus, PackageLookup, RiskChainGraph,
    RiskFingerprint, RiskLinkFinding, SimulationOutcome,
};
use crate::gatekeeper::{aggregate_gates, run_gates, GateDecision, GateDescriptor, GateError, GateResult, PhaseOutcome};
use crate::provider::InferenceProvider;
use crate::rules::{RuleError, RuleRepository};
use crate::skill::{ingest_skill, IngestError, IngestSource, SkillPackage};
use crate::verdict::{
    compute_scorecard, decide_verdict, finalize_findings, link_findings, Digests, GateSection,
    ReportMeta, Scorecard, SkillIdentity, VerdictError, REPORT_SCHEMA_VERSION,
};

pub use crate::verdict::AuditMode;
pub use batch::{parse_batch_manifest, rank_bin_bounds, BatchSummary, RankBin, SummaryBucket, RANK_BINS};
pub use config::{default_workers, AuditConfig, ConfigError, ProviderBinding, ProviderKind, DEFAULT_TOKEN_ENV};
pub use registry::{Registry, RegistryError, RegistryKey, RegistryRecord};

use crate::verdict::AuditReport;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Verdict(#[from] VerdictError),
    #[error("batch has no sources")]
    EmptyBatch,
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

/// One batch input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSource {
    pub source: IngestSource,
    /// Overrides the id derived from the manifest name.
    pub id: Option<String>,
    pub download_count: Option<u64>,
}

impl BatchSource {
    pub fn new(source: IngestSource) -> BatchSource {
        BatchSource {
            source,
            id: None,
            download_count: None,
        }
    }
}

#[derive(Debug)]
pub struct BatchEntry {
    /// Skill id, or the source string when ingestion failed.
    pub id: String,
    pub source: String,
    pub download_count: Option<u64>,
    pub outcome: Result<AuditReport, String>,
}

#[derive(Debug)]
pub struct BatchOutcome {
    /// Sorted by id.
    pub entries: Vec<BatchEntry>,
    pub graph: RiskChainGraph,
    /// Absent in quick mode.
    pub simulation: Option<SimulationStats>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulationStats {
    pub corpus: usize,
    pub candidates: usize,
    pub evaluated: usize,
    pub truncated: bool,
    pub links: usize,
}

impl BatchOutcome {
    pub fn completed(&self) -> bool {
        self.entries.iter().all(|e| e.outcome.is_ok())
    }
}

/// Per-skill state after phases 1 and 2.
struct Analysis {
    package: SkillPackage,
    gate_results: Vec<GateResult>,
    outcome: PhaseOutcome,
    alignment: Option<AlignmentReport>,
    semantic_crashed: bool,
    fingerprint: Option<RiskFingerprint>,
    composition_crashed: bool,
    findings: Vec<Finding>,
    notes: Vec<String>,
    started: Instant,
}

impl Analysis {
    fn stopped(&self) -> bool {
        self.outcome.status == GateDecision::Block
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".to_string())
}

fn crash_finding(id: &str, dimension: FindingDimension, what: &str, why: &str) -> Finding {
    Finding::new(id, Severity::Critical, dimension, format!("{what} failed: {why}"))
        .with_recommendation(Some("Re-run the audit; the failed phase counts against the skill until it completes"))
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// Evidence files for a corpus mixing freshly ingested packages and skills
/// known only from the registry.
#[derive(Default)]
struct CorpusFiles<'a> {
    packages: BTreeMap<String, &'a SkillPackage>,
    stored: BTreeMap<String, &'a BTreeMap<String, String>>,
}

impl PackageLookup for CorpusFiles<'_> {
    fn files_of(&self, skill_id: &str) -> Option<&dyn FileLookup> {
        if let Some(p) = self.packages.get(skill_id) {
            return Some(*p as &dyn FileLookup);
        }
        self.stored.get(skill_id).map(|m| *m as &dyn FileLookup)
    }
}

pub struct Auditor {
    config: AuditConfig,
    rules: RuleRepository,
    roster: Vec<GateDescriptor>,
    provider: Option<Box<dyn InferenceProvider>>,
    registry: Mutex<Registry>,
    rules_digest: String,
    policy_digest: String,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for Auditor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Auditor")
            .field("config", &self.config)
            .field("rules_digest", &self.rules_digest)
            .field("policy_digest", &self.policy_digest)
            .finish_non_exhaustive()
    }
}

impl Auditor {
    pub fn new(config: AuditConfig) -> Result<Auditor, AuditError> {
        config.validate()?;
        let rules = match &config.rules_dir {
            Some(dir) => RuleRepository::load_dir(dir)?,
            None => RuleRepository::defaults(),
        };
        Auditor::with_rules(config, rules)
    }

    pub fn with_rules(config: AuditConfig, rules: RuleRepository) -> Result<Auditor, AuditError> {
        let registry = match &config.registry {
            Some(path) => Registry::open(path)?,
            None => Registry::in_memory(),
        };
        Auditor::with_registry(config, rules, registry)
    }

    pub fn with_registry(config: AuditConfig, rules: RuleRepository, registry: Registry) -> Result<Auditor, AuditError> {
        config.validate()?;
        let roster = match &config.gates {
            Some(ids) => rules.gates.select(ids)?,
            None => rules.gates.roster.clone(),
        };
        rules.gates.check_roster(&roster)?;
        let provider = config.provider.build(&rules.provider_tables);
        let rules_digest = effective_rules_digest(&rules, config.mode, &roster, &config.provider.identity());
        let policy_digest = rules.policy_digest();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| AuditError::Pool(e.to_string()))?;
        Ok(Auditor {
            config,
            rules,
            roster,
            provider,
            registry: Mutex::new(registry),
            rules_digest,
            policy_digest,
            pool,
        })
    }

    /// Replace the configured provider (`None` disables suggestions). The
    /// rules digest changes with it, so cached reports are not reused.
    pub fn with_provider(mut self, provider: Option<Box<dyn InferenceProvider>>) -> Auditor {
        let identity = provider.as_ref().map_or("none".to_string(), |p| format!("custom:{}", p.kind()));
        self.rules_digest = effective_rules_digest(&self.rules, self.config.mode, &self.roster, &identity);
        self.provider = provider;
        self
    }

    pub fn config(&self) -> &AuditConfig {
        &self.config
    }

    pub fn rules(&self) -> &RuleRepository {
        &self.rules
    }

    pub fn roster(&self) -> &[GateDescriptor] {
        &self.roster
    }

    /// Rules digest recorded in reports and registry keys.
    pub fn rules_digest(&self) -> &str {
        &self.rules_digest
    }

    pub fn policy_digest(&self) -> &str {
        &self.policy_digest
    }

    pub fn registry(&self) -> MutexGuard<'_, Registry> {
        self.registry.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn key_for(&self, package: &SkillPackage) -> RegistryKey {
        RegistryKey {
            fingerprint: package.fingerprint.to_string(),
            rules_digest: self.rules_digest.clone(),
            policy_digest: self.policy_digest.clone(),
        }
    }

    /// Ingest and audit one source.
    pub fn run_audit(&self, source: &IngestSource) -> Result<AuditReport, AuditError> {
        let package = ingest_skill(source)?;
        self.audit_package(package)
    }

    /// Audit an already-ingested package. A registry hit with matching
    /// digests re-emits the stored report marked as a cache hit.
    pub fn audit_package(&self, package: SkillPackage) -> Result<AuditReport, AuditError> {
        let started = Instant::now();
        let key = self.key_for(&package);
        if let Some(rec) = self.registry().get(&key) {
            let mut report = rec.report.clone();
            report.meta = ReportMeta {
                cache_hit: true,
                timing_ms: started.elapsed().as_millis() as u64,
            };
            return Ok(report);
        }
        self.pool.install(|| {
            let analysis = self.analyse(package, started)?;
            let report = if self.config.mode == AuditMode::Standard && !analysis.stopped() {
                let (links, failure) = self.single_simulation(&analysis);
                self.finish(analysis, Some(&links), failure)?
            } else {
                self.finish(analysis, None, None)?
            };
            Ok(report)
        })
        .and_then(|(report, record)| {
            self.registry().put(record)?;
            Ok(report)
        })
    }

    /// Phase 3 for one skill against the registry corpus.
    fn single_simulation(&self, analysis: &Analysis) -> (Vec<RiskLinkFinding>, Option<String>) {
        let Some(fp) = &analysis.fingerprint else {
            return (Vec::new(), None);
        };
        let registry = self.registry();
        let exclude_ids = BTreeSet::from([fp.skill_id.clone()]);
        let exclude_fps = BTreeSet::from([fp.digest.clone()]);
        let stored = self.stored_corpus(&registry, &exclude_ids, &exclude_fps);
        let mut fingerprints = vec![fp.clone()];
        let mut files = CorpusFiles::default();
        files.packages.insert(fp.skill_id.clone(), &analysis.package);
        for rec in &stored {
            if let Some(rfp) = &rec.risk_fingerprint {
                fingerprints.push(rfp.clone());
                files.stored.insert(rfp.skill_id.clone(), &rec.evidence_files);
            }
        }
        match self.simulate(&fingerprints, &files) {
            Ok(out) => (out.findings.into_iter().filter(|l| l.involves(&fp.skill_id)).collect(), None),
            Err(why) => (Vec::new(), Some(why)),
        }
    }

    fn simulate(&self, fingerprints: &[RiskFingerprint], files: &CorpusFiles<'_>) -> Result<SimulationOutcome, String> {
        let policies = &self.rules.policies;
        let budget = self.config.budget;
        match catch_unwind(AssertUnwindSafe(|| simulate_batch(fingerprints, policies, files, budget))) {
            Ok(Ok(out)) => {
                if out.truncated {
                    log::warn!(
                        "pair budget {} reached: {} of {} candidate pairs evaluated",
                        budget,
                        out.evaluated,
                        out.candidates
                    );
                }
                Ok(out)
            }
            Ok(Err(e)) => Err(e.to_string()),
            Err(payload) => Err(panic_message(payload)),
        }
    }

    /// Latest registry record per skill id with this auditor's digests and
    /// a stored risk fingerprint, skipping excluded ids and fingerprints.
    fn stored_corpus<'r>(
        &self,
        registry: &'r Registry,
        exclude_ids: &BTreeSet<String>,
        exclude_fps: &BTreeSet<String>,
    ) -> Vec<&'r RegistryRecord> {
        let mut latest: BTreeMap<&str, &RegistryRecord> = BTreeMap::new();
        for rec in registry.records_by_age() {
            if rec.rules_digest != self.rules_digest
                || rec.policy_digest != self.policy_digest
                || rec.risk_fingerprint.is_none()
                || exclude_ids.contains(&rec.skill_id)
                || exclude_fps.contains(&rec.fingerprint)
            {
                continue;
            }
            latest.insert(&rec.skill_id, rec);
        }
        latest.into_values().collect()
    }

    /// Phases 1 and 2, plus risk tagging in standard mode.
    fn analyse(&self, package: SkillPackage, started: Instant) -> Result<Analysis, AuditError> {
        let gate_results = run_gates(&package, &self.roster, &self.rules)?;
        let outcome = aggregate_gates(&gate_results)?;
        let mut a = Analysis {
            package,
            gate_results,
            outcome,
            alignment: None,
            semantic_crashed: false,
            fingerprint: None,
            composition_crashed: false,
            findings: Vec::new(),
            notes: Vec::new(),
            started,
        };
        a.findings.extend(a.outcome.findings.iter().cloned());
        match a.outcome.status {
            GateDecision::Block => {
                a.notes.push("gate outcome BLOCK: pipeline stopped after admission gates".into());
                return Ok(a);
            }
            GateDecision::Warn => a.notes.push("gate outcome WARN: audit continued".into()),
            GateDecision::Pass => {}
        }

        let provider = self.provider.as_deref();
        let rules = &self.rules;
        let pkg = &a.package;
        let phase2 = catch_unwind(AssertUnwindSafe(|| {
            let (declared, mut findings) = extract_declared(pkg, &rules.lexicon, &rules.normalization);
            let (implemented, impl_findings) = extract_implemented(pkg, &rules.analyzers, &rules.normalization, provider);
            findings.extend(impl_findings);
            let mut report = classify_alignment(declared, implemented).map_err(|e| e.to_string())?;
            report.status = score_alignment(&report, &rules.severity);
            findings.extend(deviation_findings(&report, &rules.severity));
            Ok::<_, String>((report, findings))
        }));
        match phase2 {
            Ok(Ok((report, findings))) => {
                a.findings.extend(findings);
                a.alignment = Some(report);
            }
            Ok(Err(why)) => {
                a.semantic_crashed = true;
                a.findings.push(crash_finding("PIPE-ALIGNMENT-FAILED", FindingDimension::SemanticConsistency, "alignment detection", &why));
            }
            Err(payload) => {
                a.semantic_crashed = true;
                let why = panic_message(payload);
                a.findings.push(crash_finding("PIPE-ALIGNMENT-FAILED", FindingDimension::SemanticConsistency, "alignment detection", &why));
            }
        }

        if self.config.mode == AuditMode::Standard {
            let empty = CapabilitySet::new(&pkg.id, Origin::Implemented);
            let caps = a.alignment.as_ref().map_or(&empty, |r| &r.implemented);
            let tagging = catch_unwind(AssertUnwindSafe(|| profile_risk(pkg, caps, &rules.tag_rules, provider)));
            match tagging {
                Ok(profile) => {
                    a.findings.extend(profile.findings);
                    a.fingerprint = Some(profile.fingerprint);
                }
                Err(payload) => {
                    a.composition_crashed = true;
                    let why = panic_message(payload);
                    a.findings.push(crash_finding("PIPE-TAGGING-FAILED", FindingDimension::CompositionSafety, "risk tagging", &why));
                }
            }
        }
        Ok(a)
    }

    /// Fuse phase results into the report and its registry record.
    fn finish(
        &self,
        mut a: Analysis,
        links: Option<&[RiskLinkFinding]>,
        simulation_failure: Option<String>,
    ) -> Result<(AuditReport, RegistryRecord), AuditError> {
        let id = a.package.id.clone();
        let mut composition_failed = a.composition_crashed;
        if let Some(why) = &simulation_failure {
            composition_failed = true;
            a.findings.push(crash_finding("PIPE-SIMULATION-FAILED", FindingDimension::CompositionSafety, "composition simulation", why));
        }
        let links: Vec<RiskLinkFinding> = links.unwrap_or_default().iter().filter(|l| l.involves(&id)).cloned().collect();
        a.findings.extend(link_findings(&id, &links));

        let placeholder;
        let alignment = if a.semantic_crashed {
            placeholder = AlignmentReport {
                declared: CapabilitySet::new(&id, Origin::Declared),
                implemented: CapabilitySet::new(&id, Origin::Implemented),
                klass: AlignmentClass::Match,
                shadow: BTreeSet::new(),
                overclaimed: BTreeSet::new(),
                status: DimensionStatus::Confirmed,
            };
            Some(&placeholder)
        } else {
            a.alignment.as_ref()
        };
        let composition_evaluated = self.config.mode == AuditMode::Standard && !a.stopped();
        let flow = composition_evaluated.then_some((id.as_str(), links.as_slice()));
        let mut card = compute_scorecard(self.config.mode, &a.outcome, alignment, flow)?;
        if composition_failed {
            card = with_status(&card, ScoreDimension::CompositionSafety, DimensionStatus::Confirmed);
        }
        let verdict = decide_verdict(&card, &a.findings);
        let (findings, recommendations) = finalize_findings(a.findings);

        let pkg = &a.package;
        let report = AuditReport {
            schema_version: REPORT_SCHEMA_VERSION,
            skill: SkillIdentity {
                id: id.clone(),
                name: pkg.name.clone(),
                version: pkg.version.clone(),
                fingerprint: pkg.fingerprint.to_string(),
            },
            mode: self.config.mode,
            digests: Digests {
                rules: self.rules_digest.clone(),
                policies: self.policy_digest.clone(),
            },
            gate: GateSection {
                status: a.outcome.status,
                results: a.gate_results,
            },
            alignment: a.alignment,
            risk_fingerprint: a.fingerprint.clone(),
            risk_links: links,
            scorecard: card,
            verdict,
            findings,
            recommendations,
            notes: a.notes,
            meta: ReportMeta {
                cache_hit: false,
                timing_ms: a.started.elapsed().as_millis() as u64,
            },
        };
        let mut evidence_files = BTreeMap::new();
        if let Some(fp) = &a.fingerprint {
            let paths = fp
                .output_tags
                .iter()
                .map(|t| &t.evidence.path)
                .chain(fp.input_tags.iter().map(|t| &t.evidence.path));
            for path in paths {
                if let Some(bytes) = pkg.file_bytes(path) {
                    evidence_files.insert(path.clone(), String::from_utf8_lossy(bytes).into_owned());
                }
            }
        }
        let record = RegistryRecord {
            fingerprint: report.skill.fingerprint.clone(),
            skill_id: id,
            verdict: report.verdict.level,
            report_locator: "inline".into(),
            rules_digest: self.rules_digest.clone(),
            policy_digest: self.policy_digest.clone(),
            timestamp: now_secs(),
            download_count: pkg.download_count,
            report: report.normalized(),
            risk_fingerprint: a.fingerprint,
            evidence_files,
        };
        Ok((report, record))
    }

    /// Audit many sources. Every source is ingested and analysed afresh;
    /// in standard mode Phase 3 runs once over the batch plus the registry
    /// corpus. Failed sources become error entries.
    pub fn run_batch(&self, sources: Vec<BatchSource>) -> Result<BatchOutcome, AuditError> {
        if sources.is_empty() {
            return Err(AuditError::EmptyBatch);
        }
        let (entries, graph, simulation, records) = self.pool.install(|| self.batch_inner(sources))?;
        let mut registry = self.registry();
        for rec in records {
            registry.put(rec)?;
        }
        Ok(BatchOutcome {
            entries,
            graph,
            simulation,
        })
    }

    #[allow(clippy::type_complexity)]
    fn batch_inner(
        &self,
        sources: Vec<BatchSource>,
    ) -> Result<(Vec<BatchEntry>, RiskChainGraph, Option<SimulationStats>, Vec<RegistryRecord>), AuditError> {
        let started = Instant::now();
        let ingested: Vec<(BatchSource, Result<SkillPackage, String>)> = sources
            .into_par_iter()
            .map(|s| {
                let pkg = ingest_skill(&s.source).map_err(|e| e.to_string()).map(|p| {
                    let dc = s.download_count.or(p.download_count);
                    let p = p.with_download_count(dc);
                    match &s.id {
                        Some(id) => p.with_id(id.clone()),
                        None => p,
                    }
                });
                (s, pkg)
            })
            .collect();

        let mut failures = Vec::new();
        let mut packages = Vec::new();
        let mut origins = Vec::new();
        for (s, res) in ingested {
            match res {
                Ok(p) => {
                    packages.push(p);
                    origins.push(s.source.to_string());
                }
                Err(e) => failures.push(BatchEntry {
                    id: s.source.to_string(),
                    source: s.source.to_string(),
                    download_count: s.download_count,
                    outcome: Err(e),
                }),
            }
        }
        disambiguate_ids(&mut packages);
        let mut origin: BTreeMap<String, String> =
            packages.iter().map(|p| p.id.clone()).zip(origins).collect();

        let analyses: Vec<Result<Analysis, AuditError>> = packages
            .into_par_iter()
            .map(|p| self.analyse(p, started))
            .collect();
        let mut ok = Vec::new();
        for res in analyses {
            ok.push(res?);
        }

        let mut simulation = None;
        let mut all_links: Vec<RiskLinkFinding> = Vec::new();
        let mut failure = None;
        if self.config.mode == AuditMode::Standard {
            let registry = self.registry();
            let batch_ids: BTreeSet<String> = ok.iter().map(|a| a.package.id.clone()).collect();
            let batch_fps: BTreeSet<String> = ok.iter().map(|a| a.package.fingerprint.to_string()).collect();
            let stored = self.stored_corpus(&registry, &batch_ids, &batch_fps);
            let mut fingerprints = Vec::new();
            let mut files = CorpusFiles::default();
            for a in ok.iter().filter(|a| !a.stopped()) {
                if let Some(fp) = &a.fingerprint {
                    fingerprints.push(fp.clone());
                    files.packages.insert(a.package.id.clone(), &a.package);
                }
            }
            for rec in &stored {
                if let Some(rfp) = &rec.risk_fingerprint {
                    fingerprints.push(rfp.clone());
                    files.stored.insert(rfp.skill_id.clone(), &rec.evidence_files);
                }
            }
            fingerprints.sort_by(|x, y| x.skill_id.cmp(&y.skill_id));
            match self.simulate(&fingerprints, &files) {
                Ok(out) => {
                    simulation = Some(SimulationStats {
                        corpus: fingerprints.len(),
                        candidates: out.candidates,
                        evaluated: out.evaluated,
                        truncated: out.truncated,
                        links: out.findings.len(),
                    });
                    all_links = out.findings;
                }
                Err(why) => failure = Some(why),
            }
        }

        let mut counts: BTreeMap<String, Option<u64>> = self
            .registry()
            .records()
            .map(|r| (r.skill_id.clone(), r.download_count))
            .collect();
        let mut entries = failures;
        let mut records = Vec::new();
        for a in ok {
            counts.insert(a.package.id.clone(), a.package.download_count);
            let id = a.package.id.clone();
            let source_dc = a.package.download_count;
            let runs_flow = self.config.mode == AuditMode::Standard && !a.stopped();
            let (report, record) = if runs_flow {
                self.finish(a, Some(&all_links), failure.clone())?
            } else {
                self.finish(a, None, None)?
            };
            records.push(record);
            entries.push(BatchEntry {
                source: origin.remove(&id).unwrap_or_else(|| id.clone()),
                id,
                download_count: source_dc,
                outcome: Ok(report),
            });
        }
        entries.sort_by(|x, y| x.id.cmp(&y.id).then_with(|| x.source.cmp(&y.source)));
        let graph = build_risk_graph(&all_links).with_download_counts(&counts);
        Ok((entries, graph, simulation, records))
    }
}

/// Scorecard with one dimension replaced, keeping the not-evaluated marks.
fn with_status(card: &Scorecard, dim: ScoreDimension, status: DimensionStatus) -> Scorecard {
    let get = |d| if d == dim { status } else { card.status(d) };
    let mut next = Scorecard::new(
        get(ScoreDimension::MaliciousPatterns),
        get(ScoreDimension::SemanticConsistency),
        get(ScoreDimension::CompositionSafety),
    );
    next.not_evaluated = card.not_evaluated.clone();
    next.not_evaluated.remove(&dim);
    next
}

/// Give every package a unique id: colliding ids get `~<fingerprint prefix>`,
/// and identical content gets a further `~<n>` in input order.
fn disambiguate_ids(packages: &mut [SkillPackage]) {
    let mut by_id: BTreeMap<String, usize> = BTreeMap::new();
    for p in packages.iter() {
        *by_id.entry(p.id.clone()).or_default() += 1;
    }
    for p in packages.iter_mut() {
        if by_id[&p.id] > 1 {
            let short: String = p.fingerprint.to_string().chars().take(8).collect();
            p.id = format!("{}~{short}", p.id);
        }
    }
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for p in packages.iter_mut() {
        let n = seen.entry(p.id.clone()).or_default();
        *n += 1;
        if *n > 1 {
            p.id = format!("{}~{}", p.id, n);
        }
    }
}

/// Rules digest extended with everything else that changes results: mode,
/// gate roster and provider.
fn effective_rules_digest(rules: &RuleRepository, mode: AuditMode, roster: &[GateDescriptor], provider: &str) -> String {
    let mut h = Sha256::new();
    h.update(rules.rules_digest().as_bytes());
    h.update(b"\nmode=");
    h.update(mode.as_str().as_bytes());
    h.update(b"\ngates=");
    for g in roster {
        h.update(g.gate_id.as_bytes());
        h.update(b",");
    }
    h.update(b"\nprovider=");
    h.update(provider.as_bytes());
    hex::encode(h.finalize())
}

/// Graph over the Confirmed links stored in the registry, one record per
/// skill id (the latest).
pub fn registry_graph(registry: &Registry) -> RiskChainGraph {
    let mut latest: BTreeMap<&str, &RegistryRecord> = BTreeMap::new();
    for rec in registry.records_by_age() {
        latest.insert(&rec.skill_id, rec);
    }
    let mut links: Vec<RiskLinkFinding> = latest
        .values()
        .flat_map(|r| r.risk_links().iter().filter(|l| l.status == LinkStatus::Confirmed).cloned())
        .collect();
    links.sort_by(|x, y| {
        (&x.source_skill, &x.sink_skill, &x.policy_id).cmp(&(&y.source_skill, &y.sink_skill, &y.policy_id))
    });
    links.dedup_by(|x, y| x.source_skill == y.source_skill && x.sink_skill == y.sink_skill && x.policy_id == y.policy_id);
    let counts = latest
        .values()
        .map(|r| (r.skill_id.clone(), r.download_count))
        .collect();
    build_risk_graph(&links).with_download_counts(&counts)
}
