use std::fmt::Write as _;

use super::{dimension_label, AuditReport, VerdictError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

impl ReportFormat {
    pub fn parse(label: &str) -> Result<ReportFormat, VerdictError> {
        match label {
            "json" | "structured" => Ok(ReportFormat::Json),
            "text" | "human" => Ok(ReportFormat::Text),
            other => Err(VerdictError::UnsupportedFormat(other.to_string())),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Text => "txt",
        }
    }
}

pub fn render_report(report: &AuditReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s.into_bytes()
        }
        ReportFormat::Text => render_text(report).into_bytes(),
    }
}

fn render_text(r: &AuditReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "==== VERDICT: {} ====", r.verdict.level);
    let _ = writeln!(s, "skill:       {} ({})", r.skill.id, r.skill.name);
    if let Some(v) = &r.skill.version {
        let _ = writeln!(s, "version:     {v}");
    }
    let _ = writeln!(s, "fingerprint: {}", r.skill.fingerprint);
    let _ = writeln!(s, "mode:        {}", r.mode);
    let _ = writeln!(s, "gate:        {}", r.gate.status);
    if let Some(a) = &r.alignment {
        let _ = writeln!(s, "alignment:   {:?}", a.klass);
    }
    s.push('\n');

    let _ = writeln!(s, "Scorecard (risk score {}/6)", r.scorecard.risk_score);
    for (dim, status) in r.scorecard.dimensions() {
        let marker = if r.scorecard.evaluated(dim) { "" } else { " (not evaluated)" };
        let _ = writeln!(s, "  {:<22}{status}{marker}", dimension_label(dim));
    }
    s.push('\n');

    if !r.verdict.rationale.is_empty() {
        s.push_str("Rationale\n");
        for item in &r.verdict.rationale {
            let _ = writeln!(s, "  - {item}");
        }
        s.push('\n');
    }

    let _ = writeln!(s, "Findings ({})", r.findings.len());
    if r.findings.is_empty() {
        s.push_str("  none\n");
    }
    for f in &r.findings {
        let _ = writeln!(s, "  [{}] {} {}", f.severity, f.dimension.as_str(), f.finding_id);
        let _ = writeln!(s, "      {}", f.message);
        if let Some(ev) = &f.evidence {
            let _ = writeln!(s, "      at {}: {}", ev.location(), ev.snippet.replace('\n', "\\n"));
        }
    }
    s.push('\n');

    let _ = writeln!(s, "Recommendations ({})", r.recommendations.len());
    if r.recommendations.is_empty() {
        s.push_str("  none\n");
    }
    for rec in &r.recommendations {
        let _ = writeln!(s, "  - {rec}");
    }

    if !r.notes.is_empty() {
        s.push_str("\nNotes\n");
        for n in &r.notes {
            let _ = writeln!(s, "  - {n}");
        }
    }
    s
}
