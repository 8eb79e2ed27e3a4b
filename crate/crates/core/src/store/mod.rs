//! Embedded relational store for the warehouse catalog.
//!
//! [`Warehouse`] is the in-memory state: one ordered table per row type,
//! unique-key, natural-key and reverse-reference indexes, and a journal
//! sequence number. Every successful mutation bumps `journal_seq` by one and
//! queues a [`JournalEntry`]; [`Database`] drains that queue to the journal
//! file and writes snapshots.
//!
//! Writes take `&mut Warehouse`, reads take `&Warehouse`: one writer at a
//! time, any number of readers between writes.

mod codec;
mod database;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::schema::{
    natural_key, validate_record, KeyTuple, Record, Relation, Row, Table, Violation,
};

pub use codec::{
    decode_snapshot, encode_snapshot, load_snapshot, read_journal, save_snapshot, JournalReader,
    SnapshotHeader, FORMAT_VERSION, JOURNAL_MAGIC, SNAPSHOT_MAGIC,
};
pub use database::{Database, WriterLock, JOURNAL_FILE, LOCK_FILE, SNAPSHOT_FILE};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("validation failed: {}", join_violations(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("foreign key violation: {relation}.{field} references missing id {id}")]
    FkViolation {
        relation: Table,
        field: String,
        id: u64,
    },
    #[error("unique violation on {constraint}: key {key} already used in {relation}")]
    UniqueViolation {
        relation: Table,
        constraint: String,
        key: KeyTuple,
    },
    #[error("{relation} {id} is still referenced by {}", format_refs(.referrers))]
    RestrictViolation {
        relation: Table,
        id: u64,
        referrers: Vec<(Table, u64)>,
    },
    #[error("{relation} {id} not found")]
    NotFound { relation: Relation, id: u64 },
    #[error("constraint violation in {relation}: {detail}")]
    ConstraintViolation { relation: Table, detail: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("checksum mismatch: header {expected:016x}, body {actual:016x}")]
    ChecksumMismatch { expected: u64, actual: u64 },
    #[error("unsupported format version {0}")]
    UnsupportedFormatVersion(u16),
    #[error("corrupt store file: {0}")]
    Corrupt(String),
    #[error("warehouse is locked by another writer ({})", .0.display())]
    Locked(PathBuf),
    #[error("warehouse directory {} is not empty", .0.display())]
    Occupied(PathBuf),
    #[error("warehouse opened read-only")]
    ReadOnly,
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

fn format_refs(refs: &[(Table, u64)]) -> String {
    refs.iter()
        .map(|(t, id)| format!("{t} {id}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// One committed mutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    #[serde(flatten)]
    pub op: JournalOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum JournalOp {
    Put { record: Record },
    Delete { table: Table, id: u64 },
}

/// Reference to a stored row in the logical catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordRef {
    pub relation: Relation,
    pub id: u64,
}

#[derive(Debug, Clone)]
struct UndoLog {
    steps: Vec<(Table, u64, Option<Record>)>,
    next_ids: [u64; 18],
    journal_seq: u64,
    pending_len: usize,
}

#[derive(Debug, Clone)]
pub struct Warehouse {
    tables: [BTreeMap<u64, Record>; 18],
    next_ids: [u64; 18],
    unique: HashMap<(&'static str, KeyTuple), u64>,
    natural: HashMap<(Table, KeyTuple), BTreeSet<u64>>,
    referrers: HashMap<(Table, u64), BTreeSet<(Table, u64)>>,
    journal_seq: u64,
    pending: Vec<JournalEntry>,
    undo: Option<UndoLog>,
}

impl Default for Warehouse {
    fn default() -> Self {
        Warehouse::new()
    }
}

/// Equality of committed state: rows, id counters and journal position.
impl PartialEq for Warehouse {
    fn eq(&self, other: &Self) -> bool {
        self.tables == other.tables
            && self.next_ids == other.next_ids
            && self.journal_seq == other.journal_seq
    }
}

impl Eq for Warehouse {}

impl Warehouse {
    pub fn new() -> Self {
        Warehouse {
            tables: std::array::from_fn(|_| BTreeMap::new()),
            next_ids: [1; 18],
            unique: HashMap::new(),
            natural: HashMap::new(),
            referrers: HashMap::new(),
            journal_seq: 0,
            pending: Vec::new(),
            undo: None,
        }
    }

    pub fn journal_seq(&self) -> u64 {
        self.journal_seq
    }

    /// Id the next insert into `table` will receive.
    pub fn next_id(&self, table: Table) -> u64 {
        self.next_ids[table.index()]
    }

    fn table(&self, table: Table) -> &BTreeMap<u64, Record> {
        &self.tables[table.index()]
    }

    /// Inserts (`id == 0`) or updates (`id` of an existing row) a record.
    ///
    /// All checks run before anything changes, so a rejected put leaves the
    /// warehouse untouched. Re-putting an identical row is a no-op and does
    /// not advance the journal.
    pub fn put(&mut self, record: impl Into<Record>) -> Result<u64, StoreError> {
        let record = record.into();
        let table = record.table();
        let id = record.id();
        if id != 0 && !self.table(table).contains_key(&id) {
            return Err(StoreError::NotFound {
                relation: relation_of(&record),
                id,
            });
        }
        self.put_checked(record)
    }

    fn put_checked(&mut self, mut record: Record) -> Result<u64, StoreError> {
        let violations = validate_record(&record);
        if !violations.is_empty() {
            return Err(StoreError::ValidationFailed(violations));
        }
        let table = record.table();
        let is_new = record.id() == 0 || !self.table(table).contains_key(&record.id());
        if record.id() == 0 {
            record.set_id(self.next_ids[table.index()]);
        }
        let id = record.id();
        if !is_new && self.table(table).get(&id) == Some(&record) {
            return Ok(id);
        }

        self.check_references(&record, None)?;
        if !is_new {
            // rows pointing at this one must still satisfy their own rules
            let refs = self
                .referrers
                .get(&(table, id))
                .cloned()
                .unwrap_or_default();
            for (rt, rid) in refs {
                if let Some(referrer) = self.table(rt).get(&rid) {
                    self.check_references(referrer, Some(&record))?;
                }
            }
        }
        for (constraint, key) in record.unique_keys() {
            if let Some(&owner) = self.unique.get(&(constraint, key.clone())) {
                if owner != id {
                    return Err(StoreError::UniqueViolation {
                        relation: table,
                        constraint: constraint.to_string(),
                        key,
                    });
                }
            }
        }

        self.note_undo(table, id);
        if !is_new {
            self.raw_remove(table, id);
        }
        let slot = &mut self.next_ids[table.index()];
        *slot = (*slot).max(id + 1);
        self.raw_insert(record.clone());
        self.journal(JournalOp::Put { record });
        Ok(id)
    }

    /// Checks outgoing references of `record`. `overlay` substitutes a
    /// pending new version of one row when validating its referrers.
    fn check_references(
        &self,
        record: &Record,
        overlay: Option<&Record>,
    ) -> Result<(), StoreError> {
        let table = record.table();
        let lookup = |t: Table, id: u64| -> Option<&Record> {
            match overlay {
                Some(o) if o.table() == t && o.id() == id => Some(o),
                _ => self.table(t).get(&id),
            }
        };
        for fk in record.foreign_keys() {
            let Some(target) = lookup(fk.target, fk.id) else {
                return Err(StoreError::FkViolation {
                    relation: table,
                    field: fk.field.to_string(),
                    id: fk.id,
                });
            };
            if let (Some(domain), Record::TypeCode(tc)) = (fk.type_domain, target) {
                if tc.domain != domain {
                    return Err(StoreError::ConstraintViolation {
                        relation: table,
                        detail: format!(
                            "{} {} has domain {}, expected {}",
                            fk.field,
                            fk.id,
                            tc.domain.as_str(),
                            domain.as_str()
                        ),
                    });
                }
            }
        }
        let violation = |detail: String| StoreError::ConstraintViolation {
            relation: table,
            detail,
        };
        match record {
            Record::Contact(c) => {
                if let Some(city) = &c.city {
                    if let Some(state_id) = city.state_id {
                        if let Some(Record::CityState(state)) = lookup(Table::CityState, state_id) {
                            if state.country_id != city.country_id {
                                return Err(violation(format!(
                                    "city state {state_id} belongs to country {}, not {}",
                                    state.country_id, city.country_id
                                )));
                            }
                        }
                    }
                }
            }
            Record::Project(p) => {
                if let (Some(deadline), Some(Record::StartEndDate(sed))) =
                    (p.deadline, lookup(Table::StartEndDate, p.sed_id))
                {
                    if deadline < sed.start_ts.date() {
                        return Err(violation(format!(
                            "deadline {deadline} precedes start {}",
                            sed.start_ts
                        )));
                    }
                }
            }
            Record::SystemOutput(o) => {
                if let Some(Record::SystemInput(input)) = lookup(Table::SystemInput, o.input_id) {
                    if o.ts < input.ts {
                        return Err(violation(format!(
                            "output ts {} precedes input ts {}",
                            o.ts, input.ts
                        )));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn get(&self, relation: Relation, id: u64) -> Option<&Record> {
        self.table(relation.table())
            .get(&id)
            .filter(|r| relation.admits(r))
    }

    /// Typed lookup by primary key.
    pub fn row<T: Row>(&self, id: u64) -> Option<&T> {
        self.table(T::TABLE).get(&id).and_then(T::from_record)
    }

    /// All rows of a table in primary-key order.
    pub fn rows<T: Row + 'static>(&self) -> impl Iterator<Item = &T> + '_ {
        self.table(T::TABLE).values().filter_map(T::from_record)
    }

    pub fn records(&self, table: Table) -> impl Iterator<Item = &Record> + '_ {
        self.table(table).values()
    }

    /// Removes a row that nothing references.
    pub fn delete(&mut self, relation: Relation, id: u64) -> Result<(), StoreError> {
        if self.get(relation, id).is_none() {
            return Err(StoreError::NotFound { relation, id });
        }
        self.delete_row(relation.table(), id)
    }

    fn delete_row(&mut self, table: Table, id: u64) -> Result<(), StoreError> {
        if !self.table(table).contains_key(&id) {
            return Err(StoreError::NotFound {
                relation: primary_relation(table),
                id,
            });
        }
        if let Some(refs) = self.referrers.get(&(table, id)).filter(|r| !r.is_empty()) {
            return Err(StoreError::RestrictViolation {
                relation: table,
                id,
                referrers: refs.iter().copied().collect(),
            });
        }
        self.note_undo(table, id);
        self.raw_remove(table, id);
        self.journal(JournalOp::Delete { table, id });
        Ok(())
    }

    /// Matching rows of `relation` in primary-key order.
    pub fn scan<F>(&self, relation: Relation, predicate: F) -> Vec<&Record>
    where
        F: Fn(&Record) -> bool,
    {
        self.table(relation.table())
            .values()
            .filter(|r| relation.admits(r) && predicate(r))
            .collect()
    }

    pub fn count(&self, relation: Relation) -> usize {
        let table = self.table(relation.table());
        match relation {
            Relation::ContactsWeb
            | Relation::ContactTelephone
            | Relation::ContactCity
            | Relation::ProjectTeam
            | Relation::StaffMeeting
            | Relation::StaffDocument
            | Relation::OrganisationDocument
            | Relation::ProjectDocument => table.values().filter(|r| relation.admits(r)).count(),
            _ => table.len(),
        }
    }

    pub fn counts(&self) -> Vec<(Relation, usize)> {
        Relation::ALL.iter().map(|&r| (r, self.count(r))).collect()
    }

    /// Owner of a unique-constraint key, e.g. `("login.username", (name))`.
    pub fn lookup_unique(&self, constraint: &str, key: &KeyTuple) -> Option<u64> {
        let name = UNIQUE_CONSTRAINTS.iter().find(|c| **c == constraint)?;
        self.unique.get(&(*name, key.clone())).copied()
    }

    /// Rows of `table` whose natural key equals `key`, lowest id first.
    pub fn lookup_natural(&self, table: Table, key: &KeyTuple) -> Vec<u64> {
        self.natural
            .get(&(table, key.clone()))
            .map(|ids| ids.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Rows holding a foreign key to `(table, id)`.
    pub fn referrers(&self, table: Table, id: u64) -> Vec<(Table, u64)> {
        self.referrers
            .get(&(table, id))
            .map(|r| r.iter().copied().collect())
            .unwrap_or_default()
    }

    /// Runs `f` as one unit: if it returns `Err`, every mutation it made is
    /// rolled back, including journal entries and id counters. Nested calls
    /// join the outermost unit.
    pub fn atomic<T, E>(&mut self, f: impl FnOnce(&mut Warehouse) -> Result<T, E>) -> Result<T, E> {
        if self.undo.is_some() {
            return f(self);
        }
        self.undo = Some(UndoLog {
            steps: Vec::new(),
            next_ids: self.next_ids,
            journal_seq: self.journal_seq,
            pending_len: self.pending.len(),
        });
        let result = f(self);
        let log = self.undo.take().expect("undo log present");
        if result.is_err() {
            self.rollback(log);
        }
        result
    }

    fn rollback(&mut self, log: UndoLog) {
        for (table, id, prior) in log.steps.into_iter().rev() {
            self.raw_remove(table, id);
            if let Some(prior) = prior {
                self.raw_insert(prior);
            }
        }
        self.next_ids = log.next_ids;
        self.journal_seq = log.journal_seq;
        self.pending.truncate(log.pending_len);
    }

    fn note_undo(&mut self, table: Table, id: u64) {
        let prior = self.table(table).get(&id).cloned();
        if let Some(log) = self.undo.as_mut() {
            log.steps.push((table, id, prior));
        }
    }

    fn journal(&mut self, op: JournalOp) {
        self.journal_seq += 1;
        self.pending.push(JournalEntry {
            seq: self.journal_seq,
            op,
        });
    }

    /// Drains journal entries committed since the last call.
    pub fn take_journal(&mut self) -> Vec<JournalEntry> {
        std::mem::take(&mut self.pending)
    }

    pub fn pending_journal(&self) -> &[JournalEntry] {
        &self.pending
    }

    /// Re-applies a journal entry. Sequence numbers must be contiguous.
    pub fn apply_journal(&mut self, entry: &JournalEntry) -> Result<(), StoreError> {
        if entry.seq != self.journal_seq + 1 {
            return Err(StoreError::Corrupt(format!(
                "journal entry {} does not follow {}",
                entry.seq, self.journal_seq
            )));
        }
        match &entry.op {
            JournalOp::Put { record } => {
                if record.id() == 0 {
                    return Err(StoreError::Corrupt("journal put without id".into()));
                }
                let before = self.journal_seq;
                self.put_checked(record.clone())?;
                if self.journal_seq == before {
                    // identical re-put: still consumes the sequence number
                    self.journal_seq += 1;
                }
            }
            JournalOp::Delete { table, id } => self.delete_row(*table, *id)?,
        }
        Ok(())
    }

    fn raw_insert(&mut self, record: Record) {
        let table = record.table();
        let id = record.id();
        for (constraint, key) in record.unique_keys() {
            self.unique.insert((constraint, key), id);
        }
        self.natural
            .entry((table, natural_key(&record)))
            .or_default()
            .insert(id);
        for fk in record.foreign_keys() {
            self.referrers
                .entry((fk.target, fk.id))
                .or_default()
                .insert((table, id));
        }
        self.tables[table.index()].insert(id, record);
    }

    fn raw_remove(&mut self, table: Table, id: u64) -> Option<Record> {
        let record = self.tables[table.index()].remove(&id)?;
        for (constraint, key) in record.unique_keys() {
            if self.unique.get(&(constraint, key.clone())) == Some(&id) {
                self.unique.remove(&(constraint, key));
            }
        }
        let nk = (table, natural_key(&record));
        if let Some(ids) = self.natural.get_mut(&nk) {
            ids.remove(&id);
            if ids.is_empty() {
                self.natural.remove(&nk);
            }
        }
        for fk in record.foreign_keys() {
            if let Some(refs) = self.referrers.get_mut(&(fk.target, fk.id)) {
                refs.remove(&(table, id));
                if refs.is_empty() {
                    self.referrers.remove(&(fk.target, fk.id));
                }
            }
        }
        Some(record)
    }

    /// Builds a warehouse from decoded rows, checking every constraint.
    pub(crate) fn from_rows(
        rows: Vec<Record>,
        next_ids: [u64; 18],
        journal_seq: u64,
    ) -> Result<Self, StoreError> {
        let mut w = Warehouse::new();
        for record in rows {
            if record.id() == 0 || w.table(record.table()).contains_key(&record.id()) {
                return Err(StoreError::Corrupt(format!(
                    "duplicate or unassigned id {} in {}",
                    record.id(),
                    record.table()
                )));
            }
            w.raw_insert(record);
        }
        for table in Table::ALL {
            let max = w.table(table).keys().next_back().copied().unwrap_or(0);
            if next_ids[table.index()] <= max {
                return Err(StoreError::Corrupt(format!(
                    "id counter of {table} behind its rows"
                )));
            }
        }
        w.next_ids = next_ids;
        w.journal_seq = journal_seq;
        let problems = w.verify_integrity();
        if !problems.is_empty() {
            return Err(StoreError::Corrupt(problems.join("; ")));
        }
        Ok(w)
    }

    /// Full-scan check of referential closure, unique keys, and field and
    /// cross-row rules. Recomputes everything from the rows, independent of
    /// the maintained indexes. Returns one message per problem.
    pub fn verify_integrity(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut seen: HashMap<(&'static str, KeyTuple), (Table, u64)> = HashMap::new();
        for table in Table::ALL {
            for (id, record) in self.table(table) {
                if *id != record.id() {
                    problems.push(format!("{table} row keyed {id} carries id {}", record.id()));
                }
                for v in validate_record(record) {
                    problems.push(format!("{table} {id}: {v}"));
                }
                if let Err(e) = self.check_references(record, None) {
                    problems.push(format!("{table} {id}: {e}"));
                }
                for (constraint, key) in record.unique_keys() {
                    if let Some(prev) = seen.insert((constraint, key.clone()), (table, *id)) {
                        problems.push(format!(
                            "{constraint} key {key} used by {} {} and {table} {id}",
                            prev.0, prev.1
                        ));
                    }
                }
            }
        }
        problems
    }

    /// SHA-256 of the canonical snapshot encoding.
    pub fn state_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        Sha256::digest(encode_snapshot(self)).into()
    }
}

const UNIQUE_CONSTRAINTS: [&str; 6] = [
    "staff.person_id",
    "association.link",
    "type.domain_code",
    "login.staff_id",
    "login.username",
    "system_input.idempotency_token",
];

/// The logical relation that covers every row of a table.
pub fn primary_relation(table: Table) -> Relation {
    match table {
        Table::Activity => Relation::Activity,
        Table::Association => Relation::ProjectTeam,
        Table::CityCountry => Relation::CityCountry,
        Table::CityState => Relation::CityState,
        Table::Contact => Relation::Contacts,
        Table::Document => Relation::Document,
        Table::Login => Relation::Login,
        Table::Meeting => Relation::Meeting,
        Table::Name => Relation::Name,
        Table::Organisation => Relation::Organisation,
        Table::Person => Relation::Person,
        Table::Product => Relation::Product,
        Table::Project => Relation::Project,
        Table::Staff => Relation::Staff,
        Table::StartEndDate => Relation::StartEndDate,
        Table::SystemInput => Relation::SystemInput,
        Table::SystemOutput => Relation::SystemOutput,
        Table::TypeCode => Relation::Type,
    }
}

/// Logical relation a specific row belongs to (association rows by kind).
pub fn relation_of(record: &Record) -> Relation {
    match record {
        Record::Association(a) => a.kind.relation(),
        other => primary_relation(other.table()),
    }
}
