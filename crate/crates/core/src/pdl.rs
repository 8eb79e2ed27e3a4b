//! Store-and-acknowledge boundary for system data.
//!
//! An upstream caller submits an instruction under a session and gets an
//! [`Ack`] back synchronously. Stored acks use the new input's id as their
//! own id, so any ack can be resolved again from the warehouse alone,
//! including after a snapshot reload. Outputs are recorded against inputs.

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::schema::{KeyTuple, SystemInput, SystemOutput, Table};
use crate::security::{Security, SecurityError};
use crate::store::{StoreError, Warehouse};

pub const EMPTY_INSTRUCTION: &str = "empty instruction";
pub const TOKEN_TAKEN: &str = "idempotency token belongs to another login";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Stored,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    /// Equal to `input_id` when stored, 0 when rejected.
    pub ack_id: u64,
    pub input_id: u64,
    pub status: AckStatus,
    pub detail: String,
    pub ts: Timestamp,
}

impl Ack {
    fn stored(input: &SystemInput) -> Self {
        Ack {
            ack_id: input.input_id,
            input_id: input.input_id,
            status: AckStatus::Stored,
            detail: "stored".into(),
            ts: input.ts,
        }
    }

    fn rejected(detail: &str, ts: Timestamp) -> Self {
        Ack {
            ack_id: 0,
            input_id: 0,
            status: AckStatus::Rejected,
            detail: detail.into(),
            ts,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PdlError {
    #[error(transparent)]
    Session(#[from] SecurityError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

fn by_token<'w>(w: &'w Warehouse, token: &str) -> Option<&'w SystemInput> {
    let id = w.lookup_unique("system_input.idempotency_token", &KeyTuple::of([token]))?;
    w.row::<SystemInput>(id)
}

/// Records `instruction` for the session's login. A token seen before
/// returns the original ack and writes nothing. A blank instruction is
/// rejected without writing.
pub fn submit(
    w: &mut Warehouse,
    security: &Security,
    session_id: &str,
    instruction: &str,
    token: Option<&str>,
    now: Timestamp,
) -> Result<Ack, PdlError> {
    let login_id = security.session(session_id, now)?.login_id;
    let token = token.map(str::trim).filter(|t| !t.is_empty());
    if let Some(prior) = token.and_then(|t| by_token(w, t)) {
        if prior.login_id != login_id {
            return Ok(Ack::rejected(TOKEN_TAKEN, now));
        }
        return Ok(Ack::stored(prior));
    }
    if instruction.trim().is_empty() {
        return Ok(Ack::rejected(EMPTY_INSTRUCTION, now));
    }
    let mut input = SystemInput {
        input_id: 0,
        login_id,
        instruction: instruction.to_string(),
        ts: now,
        idempotency_token: token.map(str::to_string),
    };
    input.input_id = w.put(input.clone())?;
    Ok(Ack::stored(&input))
}

/// Finds the input a stored ack refers to.
pub fn resolve(w: &Warehouse, ack_id: u64) -> Option<&SystemInput> {
    w.row::<SystemInput>(ack_id)
}

/// Records an output for an existing input. The output's time is never
/// earlier than its input's.
pub fn record_output(
    w: &mut Warehouse,
    input_id: u64,
    payload: &str,
    now: Timestamp,
) -> Result<u64, PdlError> {
    let input = w
        .row::<SystemInput>(input_id)
        .ok_or_else(|| StoreError::FkViolation {
            relation: Table::SystemOutput,
            field: "input_id".into(),
            id: input_id,
        })?;
    let ts = now.max(input.ts);
    Ok(w.put(SystemOutput {
        output_id: 0,
        input_id,
        payload: payload.to_string(),
        ts,
    })?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub input: SystemInput,
    pub outputs: Vec<SystemOutput>,
}

/// The login's inputs newest first, at most `limit`, each with its
/// outputs oldest first.
pub fn history(w: &Warehouse, login_id: u64, limit: usize) -> Vec<HistoryEntry> {
    let mut inputs: Vec<&SystemInput> = w
        .rows::<SystemInput>()
        .filter(|i| i.login_id == login_id)
        .collect();
    inputs.sort_by_key(|i| std::cmp::Reverse((i.ts, i.input_id)));
    inputs.truncate(limit);
    let mut entries: Vec<HistoryEntry> = inputs
        .into_iter()
        .map(|i| HistoryEntry {
            input: i.clone(),
            outputs: Vec::new(),
        })
        .collect();
    for o in w.rows::<SystemOutput>() {
        if let Some(e) = entries.iter_mut().find(|e| e.input.input_id == o.input_id) {
            e.outputs.push(o.clone());
        }
    }
    for e in &mut entries {
        e.outputs.sort_by_key(|o| (o.ts, o.output_id));
    }
    entries
}
