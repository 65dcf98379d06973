use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use skillaudit::orchestrator::{
    parse_batch_manifest, registry_graph, AuditConfig, AuditError, Auditor, BatchSource, BatchSummary, ProviderKind,
    Registry,
};
use skillaudit::rules::{export_defaults, validate_dir};
use skillaudit::verdict::{render_report, ReportFormat};
use skillaudit::{AuditMode, IngestSource, VerdictLevel};

const EXIT_OK: u8 = 0;
const EXIT_CONDITIONAL: u8 = 2;
const EXIT_REJECTED: u8 = 3;
const EXIT_ERROR: u8 = 4;
const EXIT_USAGE: u8 = 5;

/// Static security audits for agent skill packages.
///
/// Exit codes: 0 APPROVED, 2 CONDITIONAL, 3 REJECTED, 4 audit or input
/// error, 5 usage error. `batch` exits 0 when every audit completed unless
/// --fail-on-verdict is given.
#[derive(Parser, Debug)]
#[command(name = "skillaudit", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Audit one skill (directory, .zip/.tar.gz archive or URL).
    Audit(AuditArgs),
    /// Audit many skills and build the cross-skill risk-chain graph.
    Batch(BatchArgs),
    /// Export the risk-chain graph from links stored in the registry.
    Graph(GraphArgs),
    /// Query the fingerprint registry.
    Registry {
        #[command(subcommand)]
        action: RegistryAction,
    },
    /// Validate or export rule files.
    Rules {
        #[command(subcommand)]
        action: RulesAction,
    },
}

#[derive(Args, Debug, Clone)]
struct EngineArgs {
    /// Config file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Rules directory overriding the embedded bundle.
    #[arg(long)]
    rules_dir: Option<PathBuf>,
    /// Registry file (JSONL).
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, value_parser = clap::value_parser!(u16).range(1..=256))]
    workers: Option<u16>,
    /// Maximum skill pairs evaluated by the composition simulation.
    #[arg(long)]
    budget: Option<usize>,
    /// Inference provider; `remote` needs --provider-endpoint or a config.
    #[arg(long, value_enum)]
    provider: Option<ProviderArg>,
    #[arg(long)]
    provider_endpoint: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Quick,
    Standard,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ProviderArg {
    Deterministic,
    Remote,
    None,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FormatArg {
    Json,
    Text,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> ReportFormat {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Text => ReportFormat::Text,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum GraphFormatArg {
    Graphml,
    Tsv,
}

#[derive(Args, Debug)]
struct AuditArgs {
    source: String,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Write the report here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args, Debug)]
struct BatchArgs {
    sources: Vec<String>,
    /// File listing one source per line, with optional `id=` and
    /// `download_count=` fields.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Directory for per-skill reports and graph files.
    #[arg(long, default_value = "skillaudit-out")]
    out_dir: PathBuf,
    /// Report format; `json` also makes the summary JSON.
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Exit with the worst verdict code instead of the completion code.
    #[arg(long)]
    fail_on_verdict: bool,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args, Debug)]
struct GraphArgs {
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "graphml")]
    format: GraphFormatArg,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum RegistryAction {
    /// One line per record: fingerprint, skill id, verdict, timestamp.
    List(RegistryArgs),
    /// Print the record(s) for a fingerprint or unique fingerprint prefix.
    Get {
        fingerprint: String,
        #[command(flatten)]
        args: RegistryArgs,
    },
}

#[derive(Args, Debug)]
struct RegistryArgs {
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum RulesAction {
    /// Check every rule file; files missing from DIR fall back to the
    /// embedded defaults.
    Validate { dir: Option<PathBuf> },
    /// Write the embedded rule bundle into DIR.
    Export { dir: PathBuf },
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn error(message: impl std::fmt::Display) -> Failure {
        Failure {
            code: EXIT_ERROR,
            message: message.to_string(),
        }
    }
}

impl From<AuditError> for Failure {
    fn from(e: AuditError) -> Failure {
        Failure::error(e)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Audit(a) => cmd_audit(a),
        Command::Batch(b) => cmd_batch(b),
        Command::Graph(g) => cmd_graph(g),
        Command::Registry { action } => cmd_registry(action),
        Command::Rules { action } => cmd_rules(action),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("skillaudit: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn verdict_code(level: VerdictLevel) -> u8 {
    match level {
        VerdictLevel::Approved => EXIT_OK,
        VerdictLevel::Conditional => EXIT_CONDITIONAL,
        VerdictLevel::Rejected => EXIT_REJECTED,
    }
}

fn load_config(path: Option<&Path>) -> Result<AuditConfig, Failure> {
    match path {
        Some(p) if !p.exists() => Err(Failure::usage(format!("config file {} not found", p.display()))),
        Some(p) => AuditConfig::load(p).map_err(Failure::error),
        None => Ok(AuditConfig::default()),
    }
}

fn build_config(e: &EngineArgs) -> Result<AuditConfig, Failure> {
    let mut c = load_config(e.config.as_deref())?;
    if let Some(m) = e.mode {
        c.mode = match m {
            ModeArg::Quick => AuditMode::Quick,
            ModeArg::Standard => AuditMode::Standard,
        };
    }
    if let Some(d) = &e.rules_dir {
        if !d.is_dir() {
            return Err(Failure::usage(format!("rules directory {} not found", d.display())));
        }
        c.rules_dir = Some(d.clone());
    }
    if let Some(r) = &e.registry {
        c.registry = Some(r.clone());
    }
    if let Some(w) = e.workers {
        c.workers = w as usize;
    }
    if let Some(b) = e.budget {
        c.budget = b;
    }
    if let Some(p) = e.provider {
        c.provider.kind = match p {
            ProviderArg::Deterministic => ProviderKind::Deterministic,
            ProviderArg::Remote => ProviderKind::Remote,
            ProviderArg::None => ProviderKind::None,
        };
    }
    if let Some(ep) = &e.provider_endpoint {
        c.provider.endpoint = Some(ep.clone());
    }
    c.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(c)
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Failure::error(format!("{}: {e}", parent.display())))?;
            }
            fs::write(p, bytes).map_err(|e| Failure::error(format!("{}: {e}", p.display())))
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| Failure::error(format!("stdout: {e}")))
        }
    }
}

fn cmd_audit(a: AuditArgs) -> Result<u8, Failure> {
    let source = IngestSource::parse(&a.source);
    if !source.exists() {
        return Err(Failure::usage(format!("source {} not found", a.source)));
    }
    let auditor = Auditor::new(build_config(&a.engine)?)?;
    let report = auditor.run_audit(&source)?;
    write_out(a.output.as_deref(), &render_report(&report, a.format.into()))?;
    Ok(verdict_code(report.verdict.level))
}

/// File-name-safe form of a skill id.
fn file_stem(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '~') { c } else { '_' })
        .collect();
    let s = s.trim_start_matches('.').to_string();
    if s.is_empty() {
        "skill".into()
    } else {
        s
    }
}

fn cmd_batch(b: BatchArgs) -> Result<u8, Failure> {
    let mut sources: Vec<BatchSource> = b.sources.iter().map(|s| BatchSource::new(IngestSource::parse(s))).collect();
    if let Some(m) = &b.manifest {
        let text = fs::read_to_string(m).map_err(|e| Failure::usage(format!("manifest {}: {e}", m.display())))?;
        let base = m.parent().unwrap_or(Path::new("."));
        sources.extend(parse_batch_manifest(&text, base).map_err(|e| Failure::usage(format!("manifest {}: {e}", m.display())))?);
    }
    if sources.is_empty() {
        return Err(Failure::usage("batch needs at least one source (positional or --manifest)"));
    }
    let auditor = Auditor::new(build_config(&b.engine)?)?;
    let outcome = auditor.run_batch(sources)?;

    let dir = &b.out_dir;
    fs::create_dir_all(dir).map_err(|e| Failure::error(format!("{}: {e}", dir.display())))?;
    let format: ReportFormat = b.format.into();
    let mut worst = EXIT_OK;
    for entry in &outcome.entries {
        let stem = file_stem(&entry.id);
        match &entry.outcome {
            Ok(report) => {
                worst = worst.max(verdict_code(report.verdict.level));
                let path = dir.join(format!("{stem}.{}", format.extension()));
                write_out(Some(&path), &render_report(report, format))?;
            }
            Err(message) => {
                let body = serde_json::json!({ "source": entry.source, "error": message });
                let mut text = serde_json::to_string_pretty(&body).expect("error report serializes");
                text.push('\n');
                write_out(Some(&dir.join(format!("{stem}.error.json"))), text.as_bytes())?;
            }
        }
    }
    write_out(Some(&dir.join("risk-graph.graphml")), outcome.graph.to_graphml().as_bytes())?;
    write_out(Some(&dir.join("risk-graph.tsv")), outcome.graph.to_edge_list().as_bytes())?;

    let summary = BatchSummary::from_outcome(&outcome);
    let rendered = match b.format {
        FormatArg::Json => {
            let mut s = serde_json::to_string_pretty(&summary).expect("summary serializes");
            s.push('\n');
            s
        }
        FormatArg::Text => summary.render_text(),
    };
    write_out(None, rendered.as_bytes())?;

    if !outcome.completed() {
        for e in outcome.entries.iter().filter(|e| e.outcome.is_err()) {
            eprintln!("skillaudit: {}: {}", e.source, e.outcome.as_ref().err().map_or("", String::as_str));
        }
        return Ok(EXIT_ERROR);
    }
    Ok(if b.fail_on_verdict { worst } else { EXIT_OK })
}

fn registry_path(registry: Option<&Path>, config: Option<&Path>) -> Result<PathBuf, Failure> {
    let path = match registry {
        Some(p) => p.to_path_buf(),
        None => load_config(config)?
            .registry
            .ok_or_else(|| Failure::usage("no registry: pass --registry or a config with `registry`"))?,
    };
    if !path.is_file() {
        return Err(Failure::error(format!("registry {} not found", path.display())));
    }
    Ok(path)
}

fn open_registry(registry: Option<&Path>, config: Option<&Path>) -> Result<Registry, Failure> {
    let path = registry_path(registry, config)?;
    Registry::open(&path).map_err(Failure::error)
}

fn cmd_graph(g: GraphArgs) -> Result<u8, Failure> {
    let registry = open_registry(g.registry.as_deref(), g.config.as_deref())?;
    let graph = registry_graph(&registry);
    let text = match g.format {
        GraphFormatArg::Graphml => graph.to_graphml(),
        GraphFormatArg::Tsv => graph.to_edge_list(),
    };
    write_out(g.output.as_deref(), text.as_bytes())?;
    Ok(EXIT_OK)
}

fn cmd_registry(action: RegistryAction) -> Result<u8, Failure> {
    match action {
        RegistryAction::List(args) => {
            let registry = open_registry(args.registry.as_deref(), args.config.as_deref())?;
            let mut out = String::new();
            for r in registry.records_by_age() {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    r.fingerprint, r.skill_id, r.verdict, r.report.mode, r.timestamp
                ));
            }
            write_out(None, out.as_bytes())?;
            Ok(EXIT_OK)
        }
        RegistryAction::Get { fingerprint, args } => {
            let registry = open_registry(args.registry.as_deref(), args.config.as_deref())?;
            let matches = registry.find(&fingerprint);
            if matches.is_empty() {
                return Err(Failure::error(format!("no registry record for fingerprint {fingerprint}")));
            }
            let mut text = if matches.len() == 1 {
                serde_json::to_string_pretty(matches[0])
            } else {
                serde_json::to_string_pretty(&matches)
            }
            .expect("record serializes");
            text.push('\n');
            write_out(None, text.as_bytes())?;
            Ok(EXIT_OK)
        }
    }
}

fn cmd_rules(action: RulesAction) -> Result<u8, Failure> {
    match action {
        RulesAction::Validate { dir } => {
            if let Some(d) = &dir {
                if !d.is_dir() {
                    return Err(Failure::error(format!("rules directory {} not found", d.display())));
                }
            }
            let results = validate_dir(dir.as_deref());
            let mut out = String::new();
            let mut ok = true;
            for v in &results {
                let origin = if v.present { "file" } else { "embedded" };
                match &v.result {
                    Ok(()) => out.push_str(&format!("{}\tvalid\t{origin}\n", v.file.file_name())),
                    Err(e) => {
                        ok = false;
                        out.push_str(&format!("{}\tinvalid\t{origin}\t{e}\n", v.file.file_name()));
                    }
                }
            }
            write_out(None, out.as_bytes())?;
            Ok(if ok { EXIT_OK } else { EXIT_ERROR })
        }
        RulesAction::Export { dir } => {
            let written = export_defaults(&dir).map_err(|e| Failure::error(format!("{}: {e}", dir.display())))?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(EXIT_OK)
        }
    }
}
