use std::collections::{BTreeMap, BTreeSet};

use pdm_warehouse::clock::Timestamp;
use pdm_warehouse::sample;
use pdm_warehouse::schema::*;
use pdm_warehouse::security::Permission;
use pdm_warehouse::store::{decode_snapshot, encode_snapshot, Database, Warehouse};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::{ensure, Verdict};

pub fn schema_completeness() -> Verdict {
    let mut w = Warehouse::new();
    sample::populate(&mut w, &digest()).map_err(|e| e.to_string())?;
    let empty: Vec<Relation> = Relation::ALL
        .into_iter()
        .filter(|r| w.count(*r) == 0)
        .collect();
    ensure!(empty.is_empty(), "relations without rows: {empty:?}");
    let organizational = Relation::ALL.iter().filter(|r| !r.is_system()).count();
    ensure!(
        (organizational, Relation::ALL.len() - organizational) == (22, 3),
        "catalog split is {organizational} + {}",
        Relation::ALL.len() - organizational
    );
    let problems = w.verify_integrity();
    ensure!(
        problems.is_empty(),
        "sample violates integrity: {problems:?}"
    );

    let bytes = encode_snapshot(&w);
    let (header, back) = decode_snapshot(&bytes).map_err(|e| e.to_string())?;
    ensure!(
        encode_snapshot(&back) == bytes,
        "re-encoded snapshot differs"
    );
    for r in Relation::ALL {
        let a: Vec<&Record> = w.scan(r, |_| true);
        let b: Vec<&Record> = back.scan(r, |_| true);
        ensure!(a == b, "{r} rows differ after round trip");
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut db = Database::create(dir.path()).map_err(|e| e.to_string())?;
    sample::populate(db.warehouse_mut(), &digest()).map_err(|e| e.to_string())?;
    db.checkpoint().map_err(|e| e.to_string())?;
    drop(db);
    let reopened = Database::open_read_only(dir.path()).map_err(|e| e.to_string())?;
    ensure!(
        encode_snapshot(reopened.warehouse()) == bytes,
        "snapshot file does not reproduce the warehouse"
    );
    Ok(format!(
        "25 relations populated, {} rows, {} snapshot bytes identical",
        header.total_rows(),
        bytes.len()
    ))
}

fn digest() -> String {
    // salt and hash lengths are not checked beyond being hex
    format!("pbkdf2-sha256$1${}${}", "ab".repeat(16), "cd".repeat(32))
}

// ---------------------------------------------------------------------------
// Integrity fuzzing against an independent model of a slice of the schema.

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Country,
    State,
    Type,
    Name,
    Org,
    Person,
    Staff,
    Login,
    Doc,
    Link,
}

const KINDS: [Kind; 10] = [
    Kind::Country,
    Kind::State,
    Kind::Type,
    Kind::Name,
    Kind::Org,
    Kind::Person,
    Kind::Staff,
    Kind::Login,
    Kind::Doc,
    Kind::Link,
];

impl Kind {
    fn relation(self) -> Relation {
        match self {
            Kind::Country => Relation::CityCountry,
            Kind::State => Relation::CityState,
            Kind::Type => Relation::Type,
            Kind::Name => Relation::Name,
            Kind::Org => Relation::Organisation,
            Kind::Person => Relation::Person,
            Kind::Staff => Relation::Staff,
            Kind::Login => Relation::Login,
            Kind::Doc => Relation::Document,
            Kind::Link => Relation::StaffDocument,
        }
    }
}

/// The model's view of a row: plain fields, references as (kind, id).
#[derive(Debug, Clone, PartialEq, Eq)]
enum Row {
    Country(String),
    State(String, u64),
    Type(TypeDomain, String),
    Name(String),
    Org(u64, u64),
    Person(u64, u64),
    Staff(u64, String),
    Login(u64, String),
    Doc(u64, String),
    Link(u64, u64),
}

impl Row {
    fn kind(&self) -> Kind {
        match self {
            Row::Country(_) => Kind::Country,
            Row::State(..) => Kind::State,
            Row::Type(..) => Kind::Type,
            Row::Name(_) => Kind::Name,
            Row::Org(..) => Kind::Org,
            Row::Person(..) => Kind::Person,
            Row::Staff(..) => Kind::Staff,
            Row::Login(..) => Kind::Login,
            Row::Doc(..) => Kind::Doc,
            Row::Link(..) => Kind::Link,
        }
    }

    fn refs(&self) -> Vec<(Kind, u64)> {
        match self {
            Row::State(_, c) => vec![(Kind::Country, *c)],
            Row::Org(n, t) => vec![(Kind::Name, *n), (Kind::Type, *t)],
            Row::Person(n, o) => vec![(Kind::Name, *n), (Kind::Org, *o)],
            Row::Staff(p, _) => vec![(Kind::Person, *p)],
            Row::Login(s, _) => vec![(Kind::Staff, *s)],
            Row::Doc(t, _) => vec![(Kind::Type, *t)],
            Row::Link(s, d) => vec![(Kind::Staff, *s), (Kind::Doc, *d)],
            _ => vec![],
        }
    }

    /// Type domain a referencing row demands of its type.
    fn wants_domain(&self) -> Option<(u64, TypeDomain)> {
        match self {
            Row::Org(_, t) => Some((*t, TypeDomain::Organization)),
            Row::Doc(t, _) => Some((*t, TypeDomain::Document)),
            _ => None,
        }
    }

    fn unique(&self) -> Vec<String> {
        match self {
            Row::Type(d, c) => vec![format!("type {d:?} {c}")],
            Row::Staff(p, _) => vec![format!("staff person {p}")],
            Row::Login(s, u) => vec![format!("login staff {s}"), format!("login user {u}")],
            Row::Link(s, d) => vec![format!("link {s} {d}")],
            _ => vec![],
        }
    }

    fn to_record(&self, id: u64) -> Record {
        let t0 = Timestamp::from_unix(1_220_000_000);
        match self.clone() {
            Row::Country(name) => CityCountry {
                country_id: id,
                country_name: name,
                iso_code: None,
            }
            .into(),
            Row::State(name, country_id) => CityState {
                state_id: id,
                state_name: name,
                country_id,
            }
            .into(),
            Row::Type(domain, code) => TypeCode {
                type_id: id,
                domain,
                code,
                label: String::new(),
            }
            .into(),
            Row::Name(text) => Name { name_id: id, text }.into(),
            Row::Org(name_id, type_id) => Organisation {
                org_id: id,
                name_id,
                type_id,
                contact_id: None,
            }
            .into(),
            Row::Person(name_id, org_id) => Person {
                person_id: id,
                name_id,
                contact_id: None,
                org_id,
            }
            .into(),
            Row::Staff(person_id, role) => Staff {
                staff_id: id,
                person_id,
                role,
                responsibilities: String::new(),
                group_name: String::new(),
                rights: BTreeSet::from([Permission::ReadOrg]),
            }
            .into(),
            Row::Login(staff_id, username) => Login {
                login_id: id,
                staff_id,
                username,
                password_hash: digest(),
                created_ts: t0,
            }
            .into(),
            Row::Doc(type_id, title) => Document {
                doc_id: id,
                type_id,
                title,
                created_ts: t0,
                content_ref: format!("doc/{id}"),
            }
            .into(),
            Row::Link(left_id, right_id) => Association {
                assoc_id: id,
                kind: AssociationKind::StaffDocument,
                left_id,
                right_id,
                role_note: None,
            }
            .into(),
        }
    }
}

/// Reads the model's view back out of a stored record.
fn model_row(r: &Record) -> Option<(Kind, u64, Row)> {
    Some(match r {
        Record::CityCountry(x) => (
            Kind::Country,
            x.country_id,
            Row::Country(x.country_name.clone()),
        ),
        Record::CityState(x) => (
            Kind::State,
            x.state_id,
            Row::State(x.state_name.clone(), x.country_id),
        ),
        Record::TypeCode(x) => (Kind::Type, x.type_id, Row::Type(x.domain, x.code.clone())),
        Record::Name(x) => (Kind::Name, x.name_id, Row::Name(x.text.clone())),
        Record::Organisation(x) => (Kind::Org, x.org_id, Row::Org(x.name_id, x.type_id)),
        Record::Person(x) => (Kind::Person, x.person_id, Row::Person(x.name_id, x.org_id)),
        Record::Staff(x) => (
            Kind::Staff,
            x.staff_id,
            Row::Staff(x.person_id, x.role.clone()),
        ),
        Record::Login(x) => (
            Kind::Login,
            x.login_id,
            Row::Login(x.staff_id, x.username.clone()),
        ),
        Record::Document(x) => (Kind::Doc, x.doc_id, Row::Doc(x.type_id, x.title.clone())),
        Record::Association(x) => (Kind::Link, x.assoc_id, Row::Link(x.left_id, x.right_id)),
        _ => return None,
    })
}

#[derive(Default)]
struct Model {
    rows: BTreeMap<(Kind, u64), Row>,
    next: BTreeMap<Kind, u64>,
}

impl Model {
    fn ids(&self, kind: Kind) -> Vec<u64> {
        self.rows
            .range((kind, 0)..=(kind, u64::MAX))
            .map(|((_, id), _)| *id)
            .collect()
    }

    fn referenced(&self, kind: Kind, id: u64) -> bool {
        self.rows.values().any(|r| r.refs().contains(&(kind, id)))
    }

    /// Whether `row` may be stored as `id`, given every other row.
    fn admits(&self, id: u64, row: &Row) -> bool {
        let kind = row.kind();
        if !row.refs().iter().all(|k| self.rows.contains_key(k)) {
            return false;
        }
        let domain_ok =
            |want: Option<(u64, TypeDomain)>, override_type: Option<(u64, &Row)>| match want {
                Some((t, d)) => {
                    let ty = match override_type {
                        Some((oid, r)) if oid == t => Some(r),
                        _ => self.rows.get(&(Kind::Type, t)),
                    };
                    matches!(ty, Some(Row::Type(have, _)) if *have == d)
                }
                None => true,
            };
        if !domain_ok(row.wants_domain(), None) {
            return false;
        }
        if kind == Kind::Type {
            // rows typed by this one must still get the domain they need
            if !self
                .rows
                .values()
                .all(|r| domain_ok(r.wants_domain().filter(|(t, _)| *t == id), Some((id, row))))
            {
                return false;
            }
        }
        let mine = row.unique();
        self.rows
            .iter()
            .filter(|((k, i), _)| *k == kind && *i != id)
            .all(|(_, other)| other.unique().iter().all(|u| !mine.contains(u)))
    }

    fn insert(&mut self, row: Row) -> Option<u64> {
        let kind = row.kind();
        let id = *self.next.get(&kind).unwrap_or(&1);
        if !self.admits(id, &row) {
            return None;
        }
        self.next.insert(kind, id + 1);
        self.rows.insert((kind, id), row);
        Some(id)
    }

    fn update(&mut self, id: u64, row: Row) -> bool {
        let key = (row.kind(), id);
        if !self.rows.contains_key(&key) || !self.admits(id, &row) {
            return false;
        }
        self.rows.insert(key, row);
        true
    }

    fn delete(&mut self, kind: Kind, id: u64) -> bool {
        if !self.rows.contains_key(&(kind, id)) || self.referenced(kind, id) {
            return false;
        }
        self.rows.remove(&(kind, id));
        true
    }
}

fn random_row(rng: &mut StdRng, m: &Model, kind: Kind) -> Row {
    // references mostly hit live rows, sometimes dangle
    let mut pick = |k: Kind| -> u64 {
        let ids = m.ids(k);
        if ids.is_empty() || rng.random_bool(0.1) {
            rng.random_range(1..40)
        } else {
            ids[rng.random_range(0..ids.len())]
        }
    };
    let a = pick(Kind::Country);
    let n = pick(Kind::Name);
    let t = pick(Kind::Type);
    let o = pick(Kind::Org);
    let p = pick(Kind::Person);
    let s = pick(Kind::Staff);
    let d = pick(Kind::Doc);
    let word = format!("w{}", rng.random_range(0..12));
    match kind {
        Kind::Country => Row::Country(word),
        Kind::State => Row::State(word, a),
        Kind::Type => {
            let domain = if rng.random_bool(0.5) {
                TypeDomain::Organization
            } else {
                TypeDomain::Document
            };
            Row::Type(domain, word)
        }
        Kind::Name => Row::Name(word),
        Kind::Org => Row::Org(n, t),
        Kind::Person => Row::Person(n, o),
        Kind::Staff => Row::Staff(p, word),
        Kind::Login => Row::Login(s, word),
        Kind::Doc => Row::Doc(t, word),
        Kind::Link => Row::Link(s, d),
    }
}

/// Referential closure, recomputed from the stored rows alone.
fn closure_problems(w: &Warehouse) -> Vec<String> {
    let mut present: BTreeSet<(Kind, u64)> = BTreeSet::new();
    let mut rows = Vec::new();
    for t in Table::ALL {
        for r in w.records(t) {
            if let Some((k, id, row)) = model_row(r) {
                present.insert((k, id));
                rows.push((k, id, row));
            }
        }
    }
    let mut out = Vec::new();
    for (k, id, row) in &rows {
        for target in row.refs() {
            if !present.contains(&target) {
                out.push(format!("{k:?} {id} -> {target:?} dangles"));
            }
        }
    }
    out
}

fn snapshot_model(w: &Warehouse) -> BTreeMap<(Kind, u64), Row> {
    Table::ALL
        .into_iter()
        .flat_map(|t| w.records(t))
        .filter_map(model_row)
        .map(|(k, id, row)| ((k, id), row))
        .collect()
}

pub fn integrity_fuzzing() -> Verdict {
    const OPS: usize = 10_000;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut db = Database::create(dir.path()).map_err(|e| e.to_string())?;
    let mut model = Model::default();
    let mut rng = StdRng::seed_from_u64(0x5eed_f00d);
    let (mut accepted, mut rejected) = (0usize, 0usize);

    for op in 0..OPS {
        let kind = KINDS[rng.random_range(0..KINDS.len())];
        let roll: f64 = rng.random();
        // keep the live set around a few hundred rows so deletes bite
        let insert_share = if model.rows.len() < 400 { 0.55 } else { 0.3 };
        let w = db.warehouse_mut();
        let (expect, got) = if roll < insert_share {
            let row = random_row(&mut rng, &model, kind);
            let expect = model.insert(row.clone());
            let got = w.put(row.to_record(0)).ok();
            ensure!(
                expect == got,
                "op {op}: insert {row:?}: model {expect:?}, store {got:?}"
            );
            (expect.is_some(), got.is_some())
        } else if roll < insert_share + 0.25 {
            let ids = model.ids(kind);
            let id = if ids.is_empty() || rng.random_bool(0.1) {
                rng.random_range(1..60)
            } else {
                ids[rng.random_range(0..ids.len())]
            };
            let row = random_row(&mut rng, &model, kind);
            let expect = model.update(id, row.clone());
            let got = w.put(row.to_record(id)).is_ok();
            (expect, got)
        } else {
            let ids = model.ids(kind);
            let id = if ids.is_empty() || rng.random_bool(0.1) {
                rng.random_range(1..60)
            } else {
                ids[rng.random_range(0..ids.len())]
            };
            (
                model.delete(kind, id),
                w.delete(kind.relation(), id).is_ok(),
            )
        };
        ensure!(
            expect == got,
            "op {op} on {kind:?}: model says {expect}, store says {got}"
        );
        if got {
            accepted += 1;
        } else {
            rejected += 1;
        }
        let dangling = closure_problems(db.warehouse());
        ensure!(dangling.is_empty(), "op {op}: {dangling:?}");
        if op % 500 == 499 {
            db.commit().map_err(|e| e.to_string())?;
            let problems = db.warehouse().verify_integrity();
            ensure!(problems.is_empty(), "op {op}: {problems:?}");
        }
    }
    db.commit().map_err(|e| e.to_string())?;
    ensure!(
        snapshot_model(db.warehouse()) == model.rows,
        "final store state differs from the model"
    );
    drop(db);
    let reopened = Database::open_read_only(dir.path()).map_err(|e| e.to_string())?;
    ensure!(
        snapshot_model(reopened.warehouse()) == model.rows,
        "state replayed from disk differs from the model"
    );
    ensure!(
        accepted > OPS / 4 && rejected > OPS / 10,
        "degenerate mix: {accepted} accepted, {rejected} rejected"
    );
    Ok(format!(
        "{OPS} ops ({accepted} accepted, {rejected} rejected), {} live rows match the model",
        model.rows.len()
    ))
}
