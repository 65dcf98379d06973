//! C ABI over the skillaudit engine.
//!
//! Engines and reports are opaque handles. Every fallible call returns an
//! [`SaStatus`]; on failure [`sa_last_error_message`] describes the error
//! for the calling thread. Strings returned through out-parameters are owned
//! by the caller and released with [`sa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use skillaudit::finding::DimensionStatus;
use skillaudit::gatekeeper::{aggregate_gates, GateDecision, GateDimension, GateResult};
use skillaudit::verdict::{render_report, ReportFormat, Scorecard};
use skillaudit::{AuditConfig, AuditReport, Auditor, IngestSource, VerdictLevel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ConfigError = 4,
    SourceNotFound = 5,
    AuditError = 6,
    Panic = 7,
}

/// Verdict levels, numbered like the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaVerdict {
    Approved = 0,
    Conditional = 2,
    Rejected = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaDecision {
    Pass = 0,
    Warn = 1,
    Block = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaDimensionStatus {
    Clean = 0,
    Suspected = 1,
    Confirmed = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SaFormat {
    Json = 0,
    Text = 1,
}

/// Opaque audit engine.
pub struct SaEngine {
    auditor: Auditor,
}

/// Opaque audit report.
pub struct SaReport {
    report: AuditReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

type Failure = (SaStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SaStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(&message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SaStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((SaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SaStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn report_ref<'a>(report: *const SaReport) -> Result<&'a AuditReport, Failure> {
    report
        .as_ref()
        .map(|r| &r.report)
        .ok_or((SaStatus::NullPointer, "report is null".to_string()))
}

fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err((SaStatus::NullPointer, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn sa_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Create an engine from a config file, or with defaults when
/// `config_path` is NULL.
///
/// # Safety
/// `config_path` must be NULL or a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_engine_new(config_path: *const c_char, out: *mut *mut SaEngine) -> SaStatus {
    guard(|| {
        check_out(out)?;
        let config = if config_path.is_null() {
            AuditConfig::default()
        } else {
            let path = read_str(config_path, "config_path")?;
            AuditConfig::load(Path::new(path)).map_err(|e| (SaStatus::ConfigError, e.to_string()))?
        };
        let auditor = Auditor::new(config).map_err(|e| (SaStatus::ConfigError, e.to_string()))?;
        *out = Box::into_raw(Box::new(SaEngine { auditor }));
        Ok(())
    })
}

/// # Safety
/// `engine` must be NULL or a handle from [`sa_engine_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sa_engine_free(engine: *mut SaEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Audit one source (directory, archive path or URL).
///
/// # Safety
/// `engine` must be a live engine, `source` a valid C string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn sa_engine_audit(engine: *const SaEngine, source: *const c_char, out: *mut *mut SaReport) -> SaStatus {
    guard(|| {
        check_out(out)?;
        let engine = engine
            .as_ref()
            .ok_or((SaStatus::NullPointer, "engine is null".to_string()))?;
        let src = IngestSource::parse(read_str(source, "source")?);
        if !src.exists() {
            return Err((SaStatus::SourceNotFound, format!("source {src} not found")));
        }
        let report = engine
            .auditor
            .run_audit(&src)
            .map_err(|e| (SaStatus::AuditError, e.to_string()))?;
        *out = Box::into_raw(Box::new(SaReport { report }));
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a handle from [`sa_engine_audit`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sa_report_free(report: *mut SaReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be a live report and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sa_report_verdict(report: *const SaReport, out: *mut SaVerdict) -> SaStatus {
    guard(|| {
        check_out(out)?;
        *out = match report_ref(report)?.verdict.level {
            VerdictLevel::Approved => SaVerdict::Approved,
            VerdictLevel::Conditional => SaVerdict::Conditional,
            VerdictLevel::Rejected => SaVerdict::Rejected,
        };
        Ok(())
    })
}

/// # Safety
/// `report` must be a live report and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sa_report_risk_score(report: *const SaReport, out: *mut u8) -> SaStatus {
    guard(|| {
        check_out(out)?;
        *out = report_ref(report)?.scorecard.risk_score;
        Ok(())
    })
}

/// Render a report; free the result with [`sa_string_free`].
///
/// # Safety
/// `report` must be a live report and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sa_report_render(report: *const SaReport, format: SaFormat, out: *mut *mut c_char) -> SaStatus {
    guard(|| {
        check_out(out)?;
        let format = match format {
            SaFormat::Json => ReportFormat::Json,
            SaFormat::Text => ReportFormat::Text,
        };
        let bytes = render_report(report_ref(report)?, format);
        let s = CString::new(bytes).map_err(|_| (SaStatus::AuditError, "report contains a NUL byte".to_string()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn decision_from(raw: u32) -> Result<GateDecision, Failure> {
    match raw {
        0 => Ok(GateDecision::Pass),
        1 => Ok(GateDecision::Warn),
        2 => Ok(GateDecision::Block),
        other => Err((SaStatus::InvalidArgument, format!("decision {other} out of range"))),
    }
}

/// Aggregate gate decisions (BLOCK dominates WARN dominates PASS). An empty
/// vector is an error.
///
/// # Safety
/// `decisions` must point to `len` readable values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_aggregate_decisions(decisions: *const u32, len: usize, out: *mut SaDecision) -> SaStatus {
    guard(|| {
        check_out(out)?;
        if decisions.is_null() {
            return Err((SaStatus::NullPointer, "decisions is null".into()));
        }
        let results = std::slice::from_raw_parts(decisions, len)
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                Ok(GateResult {
                    gate_id: format!("gate-{i}"),
                    dimension: GateDimension::Compliance,
                    decision: decision_from(d)?,
                    findings: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let outcome = aggregate_gates(&results).map_err(|e| (SaStatus::InvalidArgument, e.to_string()))?;
        *out = match outcome.status {
            GateDecision::Pass => SaDecision::Pass,
            GateDecision::Warn => SaDecision::Warn,
            GateDecision::Block => SaDecision::Block,
        };
        Ok(())
    })
}

fn status_from(raw: u32) -> Result<DimensionStatus, Failure> {
    match raw {
        0 => Ok(DimensionStatus::Clean),
        1 => Ok(DimensionStatus::Suspected),
        2 => Ok(DimensionStatus::Confirmed),
        other => Err((SaStatus::InvalidArgument, format!("dimension status {other} out of range"))),
    }
}

/// Risk score (0 to 6) of a scorecard given as three dimension statuses
/// (0 Clean, 1 Suspected, 2 Confirmed).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_risk_score(malicious: u32, semantic: u32, composition: u32, out: *mut u8) -> SaStatus {
    guard(|| {
        check_out(out)?;
        let card = Scorecard::new(status_from(malicious)?, status_from(semantic)?, status_from(composition)?);
        *out = card.risk_score;
        Ok(())
    })
}
