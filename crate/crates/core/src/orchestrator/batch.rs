//! Batch manifests and the batch summary table.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{BatchOutcome, BatchSource};
use crate::flow::AttackPattern;
use crate::skill::IngestSource;
use crate::verdict::VerdictLevel;

/// Number of download-rank bins.
pub const RANK_BINS: usize = 25;

/// Parse a batch manifest: one source per line, optionally followed by
/// `id=<id>` and `download_count=<n>`. Blank lines and `#` comments are
/// skipped; relative paths resolve against `base`.
pub fn parse_batch_manifest(text: &str, base: &Path) -> Result<Vec<BatchSource>, String> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let src = parts.next().expect("non-empty line has a first token");
        let source = if src.starts_with("http://") || src.starts_with("https://") || Path::new(src).is_absolute() {
            IngestSource::parse(src)
        } else {
            IngestSource::parse(&base.join(src).to_string_lossy())
        };
        let mut entry = BatchSource::new(source);
        for kv in parts {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key=value, got `{kv}`", n + 1))?;
            match k {
                "id" if !v.is_empty() => entry.id = Some(v.to_string()),
                "download_count" => {
                    entry.download_count = Some(
                        v.parse()
                            .map_err(|_| format!("line {}: download_count `{v}` is not a non-negative integer", n + 1))?,
                    )
                }
                _ => return Err(format!("line {}: unknown or empty field `{k}`", n + 1)),
            }
        }
        out.push(entry);
    }
    Ok(out)
}

/// Verdict bucket used by the summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryBucket {
    ApprovedClean,
    ApprovedWithFindings,
    Conditional,
    Rejected,
    Error,
}

impl SummaryBucket {
    pub const ALL: [SummaryBucket; 5] = [
        SummaryBucket::ApprovedClean,
        SummaryBucket::ApprovedWithFindings,
        SummaryBucket::Conditional,
        SummaryBucket::Rejected,
        SummaryBucket::Error,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SummaryBucket::ApprovedClean => "approved (no findings)",
            SummaryBucket::ApprovedWithFindings => "approved (with findings)",
            SummaryBucket::Conditional => "conditional",
            SummaryBucket::Rejected => "rejected",
            SummaryBucket::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RankBin {
    /// 1-based download ranks covered, inclusive.
    pub first_rank: usize,
    pub last_rank: usize,
    pub counts: BTreeMap<SummaryBucket, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchSummary {
    pub total: usize,
    pub counts: BTreeMap<SummaryBucket, usize>,
    /// Present only when some audited skill carries a download count.
    pub rank_bins: Option<Vec<RankBin>>,
    pub edge_counts: BTreeMap<AttackPattern, usize>,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub largest_component: usize,
    pub budget_truncated: bool,
}

fn bucket(outcome: &Result<crate::verdict::AuditReport, String>) -> SummaryBucket {
    match outcome {
        Err(_) => SummaryBucket::Error,
        Ok(r) => match r.verdict.level {
            VerdictLevel::Approved if r.findings.is_empty() => SummaryBucket::ApprovedClean,
            VerdictLevel::Approved => SummaryBucket::ApprovedWithFindings,
            VerdictLevel::Conditional => SummaryBucket::Conditional,
            VerdictLevel::Rejected => SummaryBucket::Rejected,
        },
    }
}

fn empty_counts() -> BTreeMap<SummaryBucket, usize> {
    SummaryBucket::ALL.iter().map(|b| (*b, 0)).collect()
}

/// Split `n` ranked items into `min(n, RANK_BINS)` contiguous bins whose
/// sizes differ by at most one. Returns half-open index ranges.
pub fn rank_bin_bounds(n: usize) -> Vec<(usize, usize)> {
    let k = n.min(RANK_BINS);
    (0..k).map(|i| (i * n / k, (i + 1) * n / k)).collect()
}

impl BatchSummary {
    pub fn from_outcome(outcome: &BatchOutcome) -> BatchSummary {
        let mut counts = empty_counts();
        for e in &outcome.entries {
            *counts.entry(bucket(&e.outcome)).or_default() += 1;
        }

        let mut ranked: Vec<(u64, &str, SummaryBucket)> = outcome
            .entries
            .iter()
            .filter_map(|e| e.download_count.map(|d| (d, e.id.as_str(), bucket(&e.outcome))))
            .collect();
        let rank_bins = (!ranked.is_empty()).then(|| {
            ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
            rank_bin_bounds(ranked.len())
                .into_iter()
                .map(|(lo, hi)| {
                    let mut c = empty_counts();
                    for item in &ranked[lo..hi] {
                        *c.entry(item.2).or_default() += 1;
                    }
                    RankBin {
                        first_rank: lo + 1,
                        last_rank: hi,
                        counts: c,
                    }
                })
                .collect()
        });

        let mut edge_counts: BTreeMap<AttackPattern, usize> = AttackPattern::ALL.iter().map(|p| (*p, 0)).collect();
        for (p, n) in &outcome.graph.type_edge_counts {
            edge_counts.insert(*p, *n);
        }
        BatchSummary {
            total: outcome.entries.len(),
            counts,
            rank_bins,
            edge_counts,
            graph_nodes: outcome.graph.nodes.len(),
            graph_edges: outcome.graph.edges.len(),
            largest_component: outcome.graph.largest_component(),
            budget_truncated: outcome.simulation.as_ref().is_some_and(|s| s.truncated),
        }
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Audited {} source(s)", self.total);
        for (b, n) in &self.counts {
            let pct = if self.total == 0 { 0.0 } else { 100.0 * *n as f64 / self.total as f64 };
            let _ = writeln!(s, "  {:<26}{n:>6}  {pct:5.1}%", b.label());
        }
        if let Some(bins) = &self.rank_bins {
            s.push_str("\nVerdicts by download rank\n");
            let _ = writeln!(s, "  {:<13}{:>7}{:>7}{:>7}{:>7}{:>7}", "ranks", "clean", "w/find", "cond", "rej", "err");
            for bin in bins {
                let c = |b| bin.counts.get(&b).copied().unwrap_or(0);
                let _ = writeln!(
                    s,
                    "  {:<13}{:>7}{:>7}{:>7}{:>7}{:>7}",
                    format!("{}-{}", bin.first_rank, bin.last_rank),
                    c(SummaryBucket::ApprovedClean),
                    c(SummaryBucket::ApprovedWithFindings),
                    c(SummaryBucket::Conditional),
                    c(SummaryBucket::Rejected),
                    c(SummaryBucket::Error),
                );
            }
        }
        let _ = writeln!(
            s,
            "\nRisk-chain graph: {} node(s), {} edge(s), largest component {}",
            self.graph_nodes, self.graph_edges, self.largest_component
        );
        for (p, n) in &self.edge_counts {
            let _ = writeln!(s, "  {:<26}{n:>6}", p.as_str());
        }
        if self.budget_truncated {
            s.push_str("\nwarning: pair budget reached; some skill pairs were not evaluated\n");
        }
        s
    }
}
