//! Credential intake and the on-disk session registry.
//!
//! Session ids are bearer secrets, so only their SHA-256 is written to
//! `sessions.json`; the registry hands [`Security`] the hashed form and the
//! caller's id is hashed the same way before lookup.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use pdm_warehouse::clock::Timestamp;
use pdm_warehouse::security::{Permission, Security, SecurityError, Session};
use pdm_warehouse::store::Warehouse;

use crate::CliError;

pub const SESSIONS_FILE: &str = "sessions.json";
pub const PASSWORD_ENV: &str = "PDMW_PASSWORD";
pub const NEW_PASSWORD_ENV: &str = "PDMW_NEW_PASSWORD";
pub const SESSION_ENV: &str = "PDMW_SESSION";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredSession {
    id_sha256: String,
    login_id: u64,
    issued_ts: Timestamp,
    expires_ts: Timestamp,
}

pub fn hash_session_id(id: &str) -> String {
    hex::encode(Sha256::digest(id.as_bytes()))
}

fn load_sessions(dir: &Path) -> Result<Vec<StoredSession>, CliError> {
    match fs::read(dir.join(SESSIONS_FILE)) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Runtime(format!("{SESSIONS_FILE}: {e}"))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(e) => Err(e.into()),
    }
}

/// Adopts every stored session into `security`, keyed by hashed id.
pub fn restore_sessions(dir: &Path, security: &mut Security) -> Result<(), CliError> {
    for s in load_sessions(dir)? {
        security.adopt(Session {
            session_id: s.id_sha256,
            login_id: s.login_id,
            issued_ts: s.issued_ts,
            expires_ts: s.expires_ts,
        });
    }
    Ok(())
}

/// Persists `session` and drops entries that have expired by `now`.
pub fn store_session(dir: &Path, session: &Session, now: Timestamp) -> Result<(), CliError> {
    let mut all: Vec<StoredSession> = load_sessions(dir)?
        .into_iter()
        .filter(|s| now < s.expires_ts)
        .collect();
    all.push(StoredSession {
        id_sha256: hash_session_id(&session.session_id),
        login_id: session.login_id,
        issued_ts: session.issued_ts,
        expires_ts: session.expires_ts,
    });
    let path = dir.join(SESSIONS_FILE);
    let tmp = path.with_extension("json.tmp");
    fs::write(
        &tmp,
        serde_json::to_vec_pretty(&all).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Reads a secret from `env` or, failing that, prompts without echo.
pub fn read_secret(env: &str, prompt: &str) -> Result<String, CliError> {
    if let Ok(v) = std::env::var(env) {
        return Ok(v);
    }
    rpassword::prompt_password(prompt)
        .map_err(|e| CliError::Auth(format!("cannot read password: {e}")))
}

pub fn read_new_password() -> Result<String, CliError> {
    if let Ok(v) = std::env::var(NEW_PASSWORD_ENV) {
        return Ok(v);
    }
    let first = rpassword::prompt_password("New password: ")
        .map_err(|e| CliError::Auth(format!("cannot read password: {e}")))?;
    let again = rpassword::prompt_password("Repeat password: ")
        .map_err(|e| CliError::Auth(format!("cannot read password: {e}")))?;
    if first != again {
        return Err(CliError::Usage("passwords do not match".into()));
    }
    Ok(first)
}

fn auth_error(e: SecurityError) -> CliError {
    CliError::Auth(e.to_string())
}

/// Resolves the caller to a session id known to `security`: a fresh one
/// for `--user`, or the hashed `PDMW_SESSION`.
pub fn caller(
    security: &mut Security,
    w: &Warehouse,
    user: Option<&str>,
    now: Timestamp,
) -> Result<String, CliError> {
    match user {
        Some(username) => {
            let password = read_secret(PASSWORD_ENV, "Password: ")?;
            let session = security
                .authenticate(w, username, &password, now)
                .map_err(auth_error)?;
            Ok(session.session_id)
        }
        None => {
            let raw = std::env::var(SESSION_ENV).map_err(|_| {
                CliError::Auth(format!("not logged in: pass --user or set {SESSION_ENV}"))
            })?;
            let id = hash_session_id(raw.trim());
            security.session(&id, now).map_err(auth_error)?;
            Ok(id)
        }
    }
}

/// Requires `wanted` for the session; returns its login id.
pub fn require(
    security: &mut Security,
    w: &Warehouse,
    session_id: &str,
    wanted: Permission,
    now: Timestamp,
) -> Result<u64, CliError> {
    let decision = security
        .authorize(w, session_id, wanted, now)
        .map_err(auth_error)?;
    if let pdm_warehouse::security::Decision::Deny(reason) = decision {
        return Err(CliError::Auth(format!("permission denied: {reason}")));
    }
    Ok(security
        .session(session_id, now)
        .map_err(auth_error)?
        .login_id)
}
