//! Credential checks against the `Login` relation and rights-based
//! authorization for staff.
//!
//! Passwords are stored as PBKDF2-HMAC-SHA256 digests encoded as
//! `pbkdf2-sha256$<iterations>$<salt hex>$<hash hex>`. The iteration count
//! travels with the digest, so verification never depends on the current
//! policy.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::clock::Timestamp;
use crate::events::{EventKind, EventLog};
use crate::schema::{KeyTuple, Login, Staff};
use crate::store::Warehouse;

pub const DIGEST_LEN: usize = 32;
pub const SALT_LEN: usize = 16;
pub const DEFAULT_ITERATIONS: u32 = 600_000;
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(8 * 3600);
const DIGEST_SCHEME: &str = "pbkdf2-sha256";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Permission {
    ReadOrg,
    WriteOrg,
    ReadProject,
    WriteProject,
    ReadProduct,
    WriteProduct,
    RunEtl,
    Admin,
}

impl Permission {
    pub const ALL: [Permission; 8] = [
        Permission::ReadOrg,
        Permission::WriteOrg,
        Permission::ReadProject,
        Permission::WriteProject,
        Permission::ReadProduct,
        Permission::WriteProduct,
        Permission::RunEtl,
        Permission::Admin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Permission::ReadOrg => "read_org",
            Permission::WriteOrg => "write_org",
            Permission::ReadProject => "read_project",
            Permission::WriteProject => "write_project",
            Permission::ReadProduct => "read_product",
            Permission::WriteProduct => "write_product",
            Permission::RunEtl => "run_etl",
            Permission::Admin => "admin",
        }
    }

    /// Parses a comma- or whitespace-separated list. Empty input is the
    /// empty set.
    pub fn parse_set(s: &str) -> Result<BTreeSet<Permission>, UnknownPermission> {
        s.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }

    pub fn format_set(set: &BTreeSet<Permission>) -> String {
        set.iter().map(|p| p.as_str()).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown permission {0:?}")]
pub struct UnknownPermission(pub String);

impl FromStr for Permission {
    type Err = UnknownPermission;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        Permission::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or(UnknownPermission(s))
    }
}

/// `admin` implies every other permission.
pub fn grants(rights: &BTreeSet<Permission>, wanted: Permission) -> bool {
    rights.contains(&Permission::Admin) || rights.contains(&wanted)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SecurityError {
    #[error("password must not be empty")]
    EmptyPassword,
    #[error("authentication failed")]
    AuthFailed,
    #[error("unknown session")]
    SessionUnknown,
    #[error("session expired")]
    SessionExpired,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed password digest: {0}")]
pub struct DigestFormatError(&'static str);

/// A decoded password digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PasswordDigest {
    pub iterations: u32,
    pub salt: Vec<u8>,
    pub hash: [u8; DIGEST_LEN],
}

impl PasswordDigest {
    pub fn parse(encoded: &str) -> Result<Self, DigestFormatError> {
        let mut parts = encoded.split('$');
        if parts.next() != Some(DIGEST_SCHEME) {
            return Err(DigestFormatError("unknown scheme"));
        }
        let iterations = parts
            .next()
            .and_then(|s| s.parse::<u32>().ok())
            .filter(|n| *n > 0)
            .ok_or(DigestFormatError("bad iteration count"))?;
        let salt = parts
            .next()
            .and_then(|s| hex::decode(s).ok())
            .filter(|s| !s.is_empty())
            .ok_or(DigestFormatError("bad salt"))?;
        let hash = parts
            .next()
            .and_then(|s| hex::decode(s).ok())
            .and_then(|h| <[u8; DIGEST_LEN]>::try_from(h).ok())
            .ok_or(DigestFormatError("bad hash length"))?;
        if parts.next().is_some() {
            return Err(DigestFormatError("trailing fields"));
        }
        Ok(PasswordDigest {
            iterations,
            salt,
            hash,
        })
    }

    pub fn encode(&self) -> String {
        format!(
            "{DIGEST_SCHEME}${}${}${}",
            self.iterations,
            hex::encode(&self.salt),
            hex::encode(self.hash)
        )
    }

    pub fn verify(&self, password: &str) -> bool {
        let candidate = derive(password, &self.salt, self.iterations);
        // constant-time comparison
        candidate
            .iter()
            .zip(self.hash.iter())
            .fold(0u8, |acc, (a, b)| acc | (a ^ b))
            == 0
    }
}

impl fmt::Display for PasswordDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

fn derive(password: &str, salt: &[u8], iterations: u32) -> [u8; DIGEST_LEN] {
    let mut out = [0u8; DIGEST_LEN];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, iterations, &mut out);
    out
}

pub fn random_salt() -> [u8; SALT_LEN] {
    let mut salt = [0u8; SALT_LEN];
    rand::rng().fill_bytes(&mut salt);
    salt
}

/// Work factor for new digests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PasswordPolicy {
    pub iterations: u32,
}

impl Default for PasswordPolicy {
    fn default() -> Self {
        PasswordPolicy {
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

impl PasswordPolicy {
    pub fn hash(&self, password: &str, salt: &[u8]) -> Result<PasswordDigest, SecurityError> {
        if password.is_empty() {
            return Err(SecurityError::EmptyPassword);
        }
        Ok(PasswordDigest {
            iterations: self.iterations,
            salt: salt.to_vec(),
            hash: derive(password, salt, self.iterations),
        })
    }

    pub fn hash_random(&self, password: &str) -> Result<PasswordDigest, SecurityError> {
        self.hash(password, &random_salt())
    }
}

/// Hashes with the default work factor.
pub fn hash_password(password: &str, salt: &[u8]) -> Result<PasswordDigest, SecurityError> {
    PasswordPolicy::default().hash(password, salt)
}

/// Checks `password` against an encoded digest. Malformed digests never
/// verify.
pub fn verify_password(password: &str, encoded: &str) -> bool {
    PasswordDigest::parse(encoded).is_ok_and(|d| d.verify(password))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub login_id: u64,
    pub issued_ts: Timestamp,
    pub expires_ts: Timestamp,
}

impl Session {
    pub fn is_live(&self, now: Timestamp) -> bool {
        now < self.expires_ts
    }
}

fn new_session_id() -> String {
    let mut bytes = [0u8; 16];
    rand::rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(String),
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

/// Session registry plus the event log every decision is written to.
pub struct Security {
    policy: PasswordPolicy,
    ttl: Duration,
    sessions: HashMap<String, Session>,
    events: EventLog,
    decoy: PasswordDigest,
}

impl Security {
    pub fn new(policy: PasswordPolicy, ttl: Duration, events: EventLog) -> Self {
        // Only its verification cost matters, so random bytes stand in
        // for a derived hash and construction stays cheap.
        let mut hash = [0u8; DIGEST_LEN];
        rand::rng().fill_bytes(&mut hash);
        let decoy = PasswordDigest {
            iterations: policy.iterations,
            salt: random_salt().to_vec(),
            hash,
        };
        Security {
            policy,
            ttl,
            sessions: HashMap::new(),
            events,
            decoy,
        }
    }

    pub fn policy(&self) -> PasswordPolicy {
        self.policy
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn events(&self) -> &EventLog {
        &self.events
    }

    /// Registers a session issued elsewhere (e.g. restored from disk).
    pub fn adopt(&mut self, session: Session) {
        self.sessions.insert(session.session_id.clone(), session);
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    /// Verifies credentials and issues a session.
    ///
    /// Unknown usernames are checked against a decoy digest of the same
    /// work factor and fail with the same error as a wrong password.
    pub fn authenticate(
        &mut self,
        warehouse: &Warehouse,
        username: &str,
        password: &str,
        now: Timestamp,
    ) -> Result<Session, SecurityError> {
        let login = find_login(warehouse, username);
        let ok = match login {
            Some(l) => verify_password(password, &l.password_hash),
            None => {
                let _ = self.decoy.verify(password);
                false
            }
        };
        let Some(login) = login.filter(|_| ok) else {
            self.events
                .record(now, EventKind::Authenticate, username, "failure", "");
            return Err(SecurityError::AuthFailed);
        };
        let session = Session {
            session_id: new_session_id(),
            login_id: login.login_id,
            issued_ts: now,
            expires_ts: now.saturating_add(self.ttl),
        };
        self.events.record(
            now,
            EventKind::Authenticate,
            username,
            "success",
            format!("login:{}", login.login_id),
        );
        self.sessions
            .insert(session.session_id.clone(), session.clone());
        Ok(session)
    }

    /// Looks up a live session without logging.
    pub fn session(&self, session_id: &str, now: Timestamp) -> Result<&Session, SecurityError> {
        let session = self
            .sessions
            .get(session_id)
            .ok_or(SecurityError::SessionUnknown)?;
        if !session.is_live(now) {
            return Err(SecurityError::SessionExpired);
        }
        Ok(session)
    }

    pub fn authorize(
        &mut self,
        warehouse: &Warehouse,
        session_id: &str,
        wanted: Permission,
        now: Timestamp,
    ) -> Result<Decision, SecurityError> {
        let session = match self.session(session_id, now) {
            Ok(s) => s.clone(),
            Err(e) => {
                self.events.record(
                    now,
                    EventKind::Authorize,
                    "session:?",
                    "error",
                    format!("{wanted}: {e}"),
                );
                return Err(e);
            }
        };
        let decision = match staff_for_login(warehouse, session.login_id) {
            Some(staff) if grants(&staff.rights, wanted) => Decision::Allow,
            Some(_) => Decision::Deny(format!("missing permission {wanted}")),
            None => Decision::Deny("login has no staff record".to_string()),
        };
        let (outcome, detail) = match &decision {
            Decision::Allow => ("allow", wanted.to_string()),
            Decision::Deny(reason) => ("deny", reason.clone()),
        };
        self.events.record(
            now,
            EventKind::Authorize,
            format!("login:{}", session.login_id),
            outcome,
            detail,
        );
        Ok(decision)
    }
}

pub fn find_login<'w>(warehouse: &'w Warehouse, username: &str) -> Option<&'w Login> {
    let id = warehouse.lookup_unique("login.username", &KeyTuple::of([username]))?;
    warehouse.row::<Login>(id)
}

pub fn staff_for_login(warehouse: &Warehouse, login_id: u64) -> Option<&Staff> {
    let login = warehouse.row::<Login>(login_id)?;
    warehouse.row::<Staff>(login.staff_id)
}
