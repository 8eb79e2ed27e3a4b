//! C ABI over the warehouse store, the ingest/acknowledge layer, reports
//! and the load pipeline.
//!
//! Conventions:
//! - every fallible call returns a [`PdmStatus`]; on failure a message for
//!   the calling thread is available from [`pdm_last_error`]
//! - handles are opaque and released with their `_close` function
//! - strings handed out are NUL-terminated, owned by the caller and
//!   released with [`pdm_string_free`]
//! - times are Unix seconds
//! - calls that change the warehouse commit before returning
//!
//! A handle may be used from one thread at a time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pdm_warehouse::clock::Timestamp;
use pdm_warehouse::config::{Config, ConfigError};
use pdm_warehouse::etl::report::{aggregate, denormalize};
use pdm_warehouse::etl::{run_pipeline, write_quarantine, EtlState, PipelineContext};
use pdm_warehouse::events::EventLog;
use pdm_warehouse::pdl::{self, AckStatus, PdlError, EMPTY_INSTRUCTION};
use pdm_warehouse::schema::Relation;
use pdm_warehouse::security::{
    staff_for_login, Decision, PasswordPolicy, Permission, Security, SecurityError,
    DEFAULT_ITERATIONS, DEFAULT_SESSION_TTL,
};
use pdm_warehouse::store::{Database, StoreError};

/// Length of the digest written by [`pdm_warehouse_state_hash`].
pub const PDM_STATE_HASH_LEN: usize = 32;

const EVENTS_FILE: &str = "events.jsonl";

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    Constraint = 5,
    Io = 6,
    Corrupt = 7,
    Locked = 8,
    Occupied = 9,
    ReadOnly = 10,
    AuthFailed = 11,
    SessionInvalid = 12,
    PermissionDenied = 13,
    LoadAborted = 14,
    Panic = 15,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PdmAckStatus {
    Stored = 0,
    RejectedEmpty = 1,
    RejectedTokenTaken = 2,
}

/// Acknowledgement for one submitted instruction. A stored ack's id equals
/// the input id; rejected acks carry 0 in both.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PdmAck {
    pub ack_id: u64,
    pub input_id: u64,
    pub status: PdmAckStatus,
    pub ts: i64,
}

/// An open warehouse directory plus the sessions opened through it.
pub struct PdmWarehouse {
    db: Database,
    security: Security,
}

struct Failure(PdmStatus, String);

impl Failure {
    fn new(status: PdmStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::ValidationFailed(_)
            | StoreError::FkViolation { .. }
            | StoreError::UniqueViolation { .. }
            | StoreError::RestrictViolation { .. }
            | StoreError::ConstraintViolation { .. } => PdmStatus::Constraint,
            StoreError::NotFound { .. } => PdmStatus::NotFound,
            StoreError::Io(_) => PdmStatus::Io,
            StoreError::ChecksumMismatch { .. }
            | StoreError::UnsupportedFormatVersion(_)
            | StoreError::Corrupt(_) => PdmStatus::Corrupt,
            StoreError::Locked(_) => PdmStatus::Locked,
            StoreError::Occupied(_) => PdmStatus::Occupied,
            StoreError::ReadOnly => PdmStatus::ReadOnly,
        };
        Failure(status, e.to_string())
    }
}

impl From<SecurityError> for Failure {
    fn from(e: SecurityError) -> Self {
        let status = match e {
            SecurityError::EmptyPassword | SecurityError::AuthFailed => PdmStatus::AuthFailed,
            SecurityError::SessionUnknown | SecurityError::SessionExpired => {
                PdmStatus::SessionInvalid
            }
        };
        Failure(status, e.to_string())
    }
}

impl From<PdlError> for Failure {
    fn from(e: PdlError) -> Self {
        match e {
            PdlError::Session(e) => e.into(),
            PdlError::Store(e) => e.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        let status = match e {
            ConfigError::Read { .. } => PdmStatus::Io,
            _ => PdmStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure(PdmStatus::Io, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `body`, converting failures and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PdmStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PdmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .map(String::as_str)
                .or_else(|| p.downcast_ref::<&str>().copied())
                .unwrap_or("panic");
            set_last_error(&format!("internal panic: {msg}"));
            PdmStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(
            PdmStatus::NullArgument,
            format!("{what} is null"),
        ));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(PdmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a>(h: *mut PdmWarehouse) -> Result<&'a mut PdmWarehouse, Failure> {
    h.as_mut()
        .ok_or_else(|| Failure::new(PdmStatus::NullArgument, "warehouse handle is null"))
}

unsafe fn put_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::new(
            PdmStatus::NullArgument,
            format!("{what} is null"),
        ));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| Failure::new(PdmStatus::InvalidArgument, e.to_string()))?;
    put_out(out, c.into_raw(), "output string pointer")
}

fn json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string(value)
        .map_err(|e| Failure::new(PdmStatus::InvalidArgument, e.to_string()))
}

impl PdmWarehouse {
    fn new(db: Database) -> Result<Self, Failure> {
        let events = if db.is_read_only() {
            EventLog::in_memory()
        } else {
            EventLog::open(&db.dir().join(EVENTS_FILE))?
        };
        let policy = PasswordPolicy {
            iterations: DEFAULT_ITERATIONS,
        };
        Ok(PdmWarehouse {
            db,
            security: Security::new(policy, DEFAULT_SESSION_TTL, events),
        })
    }

    fn writable(&self) -> Result<(), Failure> {
        if self.db.is_read_only() {
            return Err(StoreError::ReadOnly.into());
        }
        Ok(())
    }

    /// Checks `wanted` for the session; returns its login id.
    fn require(
        &mut self,
        session: &str,
        wanted: Permission,
        now: Timestamp,
    ) -> Result<u64, Failure> {
        let w = self.db.warehouse();
        match self.security.authorize(w, session, wanted, now)? {
            Decision::Allow => Ok(self.security.session(session, now)?.login_id),
            Decision::Deny(reason) => Err(Failure::new(PdmStatus::PermissionDenied, reason)),
        }
    }
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn pdm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the calling thread's most recent failure, or null. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pdm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pdm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Initializes an empty warehouse in `dir` (absent or empty) and opens it.
///
/// # Safety
/// `dir` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdm_warehouse_create(
    dir: *const c_char,
    out: *mut *mut PdmWarehouse,
) -> PdmStatus {
    guard(|| {
        let dir = text(dir, "dir")?;
        let h = PdmWarehouse::new(Database::create(Path::new(dir))?)?;
        put_out(out, Box::into_raw(Box::new(h)), "out")
    })
}

/// Opens an existing warehouse. Read-only handles take no writer lock and
/// refuse every mutating call with `READ_ONLY`.
///
/// # Safety
/// `dir` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pdm_warehouse_open(
    dir: *const c_char,
    read_only: bool,
    out: *mut *mut PdmWarehouse,
) -> PdmStatus {
    guard(|| {
        let dir = Path::new(text(dir, "dir")?);
        let db = if read_only {
            Database::open_read_only(dir)?
        } else {
            Database::open(dir)?
        };
        put_out(out, Box::into_raw(Box::new(PdmWarehouse::new(db)?)), "out")
    })
}

/// Closes a handle and releases its lock. Null is ignored.
///
/// # Safety
/// `h` must come from `pdm_warehouse_create` or `pdm_warehouse_open` and
/// not have been closed.
#[no_mangle]
pub unsafe extern "C" fn pdm_warehouse_close(h: *mut PdmWarehouse) {
    if !h.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(h))));
    }
}

/// Writes a fresh snapshot and truncates the journal.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pdm_warehouse_checkpoint(h: *mut PdmWarehouse) -> PdmStatus {
    guard(|| {
        handle(h)?.db.checkpoint()?;
        Ok(())
    })
}

/// Row count of a relation given by its snake_case name.
///
/// # Safety
/// `h` must be a live handle, `relation` a valid C string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pdm_warehouse_count(
    h: *mut PdmWarehouse,
    relation: *const c_char,
    out: *mut u64,
) -> PdmStatus {
    guard(|| {
        let h = handle(h)?;
        let rel: Relation = text(relation, "relation")?
            .parse()
            .map_err(|e| Failure::new(PdmStatus::InvalidArgument, format!("{e}")))?;
        put_out(out, h.db.warehouse().count(rel) as u64, "out")
    })
}

/// SHA-256 of the canonical snapshot encoding, `PDM_STATE_HASH_LEN` bytes.
///
/// # Safety
/// `h` must be a live handle; `out` must have room for 32 bytes.
#[no_mangle]
pub unsafe extern "C" fn pdm_warehouse_state_hash(h: *mut PdmWarehouse, out: *mut u8) -> PdmStatus {
    guard(|| {
        let hash = handle(h)?.db.warehouse().state_hash();
        if out.is_null() {
            return Err(Failure::new(PdmStatus::NullArgument, "out is null"));
        }
        ptr::copy_nonoverlapping(hash.as_ptr(), out, PDM_STATE_HASH_LEN);
        Ok(())
    })
}

/// Checks a password and opens a session on this handle. Unknown users and
/// wrong passwords fail identically with `AUTH_FAILED`.
///
/// # Safety
/// `h` must be a live handle, strings valid, `out_session` writable.
#[no_mangle]
pub unsafe extern "C" fn pdm_authenticate(
    h: *mut PdmWarehouse,
    username: *const c_char,
    password: *const c_char,
    now: i64,
    out_session: *mut *mut c_char,
) -> PdmStatus {
    guard(|| {
        let h = handle(h)?;
        let username = text(username, "username")?;
        let password = text(password, "password")?;
        let session = h.security.authenticate(
            h.db.warehouse(),
            username,
            password,
            Timestamp::from_unix(now),
        )?;
        put_string(out_session, session.session_id)
    })
}

/// Stores an instruction for the session's login. `token` may be null; a
/// token seen before returns the original ack without writing.
///
/// # Safety
/// `h` must be a live handle, strings valid (`token` may be null), `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn pdm_submit(
    h: *mut PdmWarehouse,
    session: *const c_char,
    instruction: *const c_char,
    token: *const c_char,
    now: i64,
    out: *mut PdmAck,
) -> PdmStatus {
    guard(|| {
        let h = handle(h)?;
        h.writable()?;
        let session = text(session, "session")?;
        let instruction = text(instruction, "instruction")?;
        let token = if token.is_null() {
            None
        } else {
            Some(text(token, "token")?)
        };
        let ack = pdl::submit(
            h.db.warehouse_mut(),
            &h.security,
            session,
            instruction,
            token,
            Timestamp::from_unix(now),
        )?;
        h.db.commit()?;
        let status = match ack.status {
            AckStatus::Stored => PdmAckStatus::Stored,
            AckStatus::Rejected if ack.detail == EMPTY_INSTRUCTION => PdmAckStatus::RejectedEmpty,
            AckStatus::Rejected => PdmAckStatus::RejectedTokenTaken,
        };
        put_out(
            out,
            PdmAck {
                ack_id: ack.ack_id,
                input_id: ack.input_id,
                status,
                ts: ack.ts.unix(),
            },
            "out",
        )
    })
}

/// The input a stored ack refers to, as a JSON object.
///
/// # Safety
/// `h` must be a live handle; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn pdm_resolve(
    h: *mut PdmWarehouse,
    ack_id: u64,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    guard(|| {
        let h = handle(h)?;
        let input = pdl::resolve(h.db.warehouse(), ack_id).ok_or_else(|| {
            Failure::new(PdmStatus::NotFound, format!("no input for ack {ack_id}"))
        })?;
        put_string(out_json, json(input)?)
    })
}

/// Records an output against an input. The stored time is never earlier
/// than the input's.
///
/// # Safety
/// `h` must be a live handle, strings valid, `out_id` writable or null.
#[no_mangle]
pub unsafe extern "C" fn pdm_record_output(
    h: *mut PdmWarehouse,
    session: *const c_char,
    input_id: u64,
    payload: *const c_char,
    now: i64,
    out_id: *mut u64,
) -> PdmStatus {
    guard(|| {
        let h = handle(h)?;
        h.writable()?;
        let now = Timestamp::from_unix(now);
        h.security.session(text(session, "session")?, now)?;
        let id = pdl::record_output(
            h.db.warehouse_mut(),
            input_id,
            text(payload, "payload")?,
            now,
        )?;
        h.db.commit()?;
        if !out_id.is_null() {
            out_id.write(id);
        }
        Ok(())
    })
}

/// The session login's inputs newest first with their outputs, as JSON.
///
/// # Safety
/// `h` must be a live handle, `session` valid, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn pdm_history_json(
    h: *mut PdmWarehouse,
    session: *const c_char,
    limit: u64,
    now: i64,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    guard(|| {
        let h = handle(h)?;
        let login = h
            .security
            .session(text(session, "session")?, Timestamp::from_unix(now))?
            .login_id;
        let limit = usize::try_from(limit).unwrap_or(usize::MAX);
        put_string(
            out_json,
            json(&pdl::history(h.db.warehouse(), login, limit))?,
        )
    })
}

/// Renders `projects` or `aggregates` as a JSON array. Needs
/// `read_project`.
///
/// # Safety
/// `h` must be a live handle, strings valid, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn pdm_report_json(
    h: *mut PdmWarehouse,
    session: *const c_char,
    report: *const c_char,
    now: i64,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    guard(|| {
        let h = handle(h)?;
        let report = text(report, "report")?;
        h.require(
            text(session, "session")?,
            Permission::ReadProject,
            Timestamp::from_unix(now),
        )?;
        let w = h.db.warehouse();
        let body = match report {
            "projects" => json(&denormalize(w))?,
            "aggregates" => json(&aggregate(w))?,
            other => {
                return Err(Failure::new(
                    PdmStatus::InvalidArgument,
                    format!("unknown report {other:?}"),
                ))
            }
        };
        put_string(out_json, body)
    })
}

/// Runs the load pipeline over the enabled sources of a config file and
/// commits. Needs `run_etl`. Watermarks and quarantined rows are kept in the
/// warehouse directory, as the command-line tool does. `out_json` receives
/// one object per source. Returns `LOAD_ABORTED` if any source failed; the
/// report is still written.
///
/// # Safety
/// `h` must be a live handle, strings valid, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn pdm_etl_run(
    h: *mut PdmWarehouse,
    session: *const c_char,
    config_path: *const c_char,
    full: bool,
    now: i64,
    out_json: *mut *mut c_char,
) -> PdmStatus {
    guard(|| {
        let h = handle(h)?;
        h.writable()?;
        let now = Timestamp::from_unix(now);
        let login = h.require(text(session, "session")?, Permission::RunEtl, now)?;
        let config = Config::load(Path::new(text(config_path, "config_path")?))?;
        let actor = staff_for_login(h.db.warehouse(), login).map(|s| s.staff_id);
        let dir = h.db.dir().to_path_buf();

        let mut state = EtlState::load(&dir)?;
        let mut sources = config.default_sources();
        if !full {
            state.apply_to(&mut sources);
        }
        state.cycle += 1;
        let ctx = PipelineContext {
            cycle_number: state.cycle,
            now,
            actor,
        };
        let run = run_pipeline(&mut sources, h.db.warehouse_mut(), ctx);
        h.db.commit()?;
        let ok: Vec<_> = sources
            .into_iter()
            .filter(|s| {
                run.results
                    .iter()
                    .any(|(id, r)| id == &s.source_id && r.is_ok())
            })
            .collect();
        state.record(&ok);
        state.save(&dir)?;
        let quarantined: Vec<_> = run
            .reports()
            .flat_map(|r| r.quarantine.iter().cloned())
            .collect();
        write_quarantine(&dir, &quarantined)?;

        let summary: Vec<serde_json::Value> = run
            .results
            .iter()
            .map(|(id, r)| match r {
                Ok(rep) => serde_json::json!({
                    "source": id,
                    "cycle": rep.cycle_number,
                    "inserted": rep.inserted,
                    "updated": rep.updated,
                    "unchanged": rep.unchanged,
                    "quarantined": rep.quarantine.len(),
                    "watermark": rep.watermark,
                }),
                Err(e) => serde_json::json!({ "source": id, "error": e.to_string() }),
            })
            .collect();
        put_string(out_json, json(&summary)?)?;
        if let Some((id, e)) = run.failures().next() {
            return Err(Failure::new(PdmStatus::LoadAborted, format!("{id}: {e}")));
        }
        Ok(())
    })
}
