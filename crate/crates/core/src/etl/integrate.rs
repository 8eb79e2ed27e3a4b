//! Deduplication, reference resolution and merge against stored rows.

use std::collections::{BTreeMap, HashMap};

use super::convert::ContactParts;
use super::shapes::{shape, Shape};
use super::{ConvertedBatch, EtlError, Quarantined, Stage, StageCounts, Staged};
use crate::clock::Timestamp;
use crate::schema::*;
use crate::security::{find_login, Permission};
use crate::store::Warehouse;

pub type Fields = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Insert,
    Update,
    Unchanged,
}

/// One entity to write: the merged fields of every row sharing its key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub key: KeyTuple,
    pub lines: Vec<usize>,
    pub fields: Fields,
    /// Primary id of the stored entity with the same key.
    pub existing: Option<u64>,
    pub changed: Vec<String>,
    pub action: Action,
}

#[derive(Debug, Clone)]
pub struct Integration {
    pub source_id: String,
    pub target: Relation,
    pub extracted_at: Timestamp,
    pub plans: Vec<Plan>,
    pub counts: StageCounts,
}

impl Integration {
    pub fn inserts(&self) -> impl Iterator<Item = &Plan> {
        self.plans.iter().filter(|p| p.action == Action::Insert)
    }

    pub fn updates(&self) -> impl Iterator<Item = &Plan> {
        self.plans.iter().filter(|p| p.action == Action::Update)
    }
}

fn get<'a>(fields: &'a Fields, name: &str) -> &'a str {
    fields.get(name).map(String::as_str).unwrap_or("")
}

pub fn key_of(shape: &Shape, fields: &Fields) -> KeyTuple {
    KeyTuple::of(shape.key.iter().map(|k| get(fields, k).to_string()))
}

/// Merges `incoming` into `base`: non-empty incoming values win, empty ones
/// keep the base value. Differing non-empty values of an immutable field
/// are a conflict.
pub fn merge_fields(
    shape: &Shape,
    key: &KeyTuple,
    base: &mut Fields,
    incoming: &Fields,
) -> Result<(), EtlError> {
    for (field, value) in incoming {
        if value.is_empty() {
            continue;
        }
        let current = base.entry(field.clone()).or_default();
        if !current.is_empty() && current != value && shape.immutable.contains(&field.as_str()) {
            return Err(EtlError::MergeConflict {
                key: key.to_string(),
                field: field.clone(),
                existing: redact(field, current),
                incoming: redact(field, value),
            });
        }
        *current = value.clone();
    }
    Ok(())
}

fn redact(field: &str, value: &str) -> String {
    if field == "password_hash" {
        "<digest>".to_string()
    } else {
        value.to_string()
    }
}

/// Groups rows by natural key, merges each group, resolves references
/// against the warehouse (unresolved groups are quarantined) and compares
/// each entity with its stored counterpart.
pub fn integrate(
    batch: ConvertedBatch,
    warehouse: &Warehouse,
) -> Result<(Integration, Vec<Quarantined>), EtlError> {
    let shape = shape(batch.target).expect("loadable target");
    let input = batch.rows.len();

    let mut order: Vec<KeyTuple> = Vec::new();
    let mut groups: HashMap<KeyTuple, (Fields, Vec<Staged>)> = HashMap::new();
    for row in batch.rows {
        let key = key_of(shape, &row.fields);
        match groups.get_mut(&key) {
            Some((merged, rows)) => {
                merge_fields(shape, &key, merged, &row.fields)?;
                rows.push(row);
            }
            None => {
                order.push(key.clone());
                groups.insert(key, (row.fields.clone(), vec![row]));
            }
        }
    }

    let mut plans = Vec::new();
    let mut quarantine = Vec::new();
    let mut passed = 0;
    for key in order {
        let (mut fields, rows) = groups.remove(&key).expect("grouped");
        if let Err(reason) = check_references(warehouse, batch.target, &fields) {
            for row in rows {
                quarantine.push(Quarantined {
                    source_id: batch.source_id.clone(),
                    stage: Stage::Integrate,
                    line: row.lines[0],
                    reason: reason.clone(),
                    row: row.fields,
                });
            }
            continue;
        }
        passed += rows.len();
        for spec in shape.fields {
            fields.entry(spec.name.to_string()).or_default();
        }
        let lines = rows.iter().flat_map(|r| r.lines.iter().copied()).collect();
        let existing = find_existing(warehouse, batch.target, &fields);
        let plan = match existing {
            None => Plan {
                key,
                lines,
                fields,
                existing,
                changed: Vec::new(),
                action: Action::Insert,
            },
            Some(id) => {
                let stored = stored_fields(warehouse, batch.target, id);
                let mut merged = stored.clone();
                merge_fields(shape, &key, &mut merged, &fields)?;
                let changed: Vec<String> = merged
                    .iter()
                    .filter(|(k, v)| stored.get(*k) != Some(*v))
                    .map(|(k, _)| k.clone())
                    .collect();
                let action = if changed.is_empty() {
                    Action::Unchanged
                } else {
                    Action::Update
                };
                Plan {
                    key,
                    lines,
                    fields: merged,
                    existing,
                    changed,
                    action,
                }
            }
        };
        plans.push(plan);
    }

    let mut counts = StageCounts::new(Stage::Integrate, input, passed, quarantine.len());
    counts.merged = passed - plans.len();
    let integration = Integration {
        source_id: batch.source_id,
        target: batch.target,
        extracted_at: batch.extracted_at,
        plans,
        counts,
    };
    Ok((integration, quarantine))
}

// Lookups by business identity. Where duplicates exist the lowest id wins.

fn name_ids(w: &Warehouse, text: &str) -> Vec<u64> {
    w.lookup_natural(Table::Name, &KeyTuple::of([text]))
}

pub(crate) fn org_id(w: &Warehouse, name: &str) -> Option<u64> {
    name_ids(w, name)
        .into_iter()
        .filter_map(|n| {
            w.lookup_natural(Table::Organisation, &KeyTuple::of([n.to_string()]))
                .first()
                .copied()
        })
        .min()
}

pub(crate) fn type_id(w: &Warehouse, domain: TypeDomain, code: &str) -> Option<u64> {
    w.lookup_unique("type.domain_code", &KeyTuple::of([domain.as_str(), code]))
}

pub(crate) fn staff_id(w: &Warehouse, username: &str) -> Option<u64> {
    find_login(w, username).map(|l| l.staff_id)
}

fn scoped(w: &Warehouse, table: Table, org: &str, name: &str) -> Option<u64> {
    let org_id = org_id(w, org)?;
    name_ids(w, name)
        .into_iter()
        .filter_map(|n| {
            w.lookup_natural(table, &KeyTuple::of([org_id.to_string(), n.to_string()]))
                .first()
                .copied()
        })
        .min()
}

pub(crate) fn project_id(w: &Warehouse, org: &str, name: &str) -> Option<u64> {
    scoped(w, Table::Project, org, name)
}

pub(crate) fn meeting_id(w: &Warehouse, subject: &str, start: &str) -> Option<u64> {
    w.rows::<Meeting>()
        .find(|m| {
            m.subject == subject
                && w.row::<StartEndDate>(m.sed_id)
                    .is_some_and(|s| s.start_ts.to_string() == start)
        })
        .map(|m| m.meeting_id)
}

fn check_references(w: &Warehouse, target: Relation, f: &Fields) -> Result<(), String> {
    let need_org = |name: &str| -> Result<u64, String> {
        org_id(w, name).ok_or_else(|| format!("unknown organisation {name:?}"))
    };
    let need_type = |domain: TypeDomain, code: &str| -> Result<u64, String> {
        type_id(w, domain, code).ok_or_else(|| format!("unknown {} type {code:?}", domain.as_str()))
    };
    let need_staff = |username: &str| -> Result<u64, String> {
        staff_id(w, username).ok_or_else(|| format!("unknown staff {username:?}"))
    };
    let need_project = |org: &str, name: &str| -> Result<u64, String> {
        need_org(org)?;
        project_id(w, org, name)
            .ok_or_else(|| format!("unknown project {name:?} in organisation {org:?}"))
    };
    let present = |name: &str| !get(f, name).is_empty();
    match target {
        Relation::Type => {}
        Relation::Organisation => {
            need_type(TypeDomain::Organization, get(f, "type"))?;
        }
        Relation::Staff => {
            need_org(get(f, "org"))?;
        }
        Relation::Project => {
            need_org(get(f, "org"))?;
            need_type(TypeDomain::Project, get(f, "type"))?;
            need_staff(get(f, "owner"))?;
        }
        Relation::Product => {
            need_org(get(f, "org"))?;
            need_type(TypeDomain::Product, get(f, "type"))?;
            if present("project") {
                need_project(get(f, "org"), get(f, "project"))?;
            }
        }
        Relation::Document => {
            need_type(TypeDomain::Document, get(f, "type"))?;
            if present("org") {
                need_org(get(f, "org"))?;
            }
            if present("project") {
                need_project(get(f, "org"), get(f, "project"))?;
            }
            if present("owner") {
                need_staff(get(f, "owner"))?;
            }
        }
        Relation::ProjectTeam => {
            need_project(get(f, "org"), get(f, "project"))?;
            need_staff(get(f, "username"))?;
        }
        Relation::Meeting => {
            if present("project") {
                need_project(get(f, "org"), get(f, "project"))?;
            }
        }
        other => unreachable!("{other} is not loadable"),
    }
    Ok(())
}

/// Primary id of the stored entity matching the row's natural key.
pub(crate) fn find_existing(w: &Warehouse, target: Relation, f: &Fields) -> Option<u64> {
    match target {
        Relation::Type => type_id(w, TypeDomain::parse(get(f, "domain"))?, get(f, "code")),
        Relation::Organisation => org_id(w, get(f, "name")),
        Relation::Staff => staff_id(w, get(f, "username")),
        Relation::Project => project_id(w, get(f, "org"), get(f, "name")),
        Relation::Product => scoped(w, Table::Product, get(f, "org"), get(f, "name")),
        Relation::Document => w
            .lookup_natural(Table::Document, &KeyTuple::of([get(f, "content_ref")]))
            .first()
            .copied(),
        Relation::ProjectTeam => {
            let project = project_id(w, get(f, "org"), get(f, "project"))?;
            let staff = staff_id(w, get(f, "username"))?;
            w.lookup_unique(
                "association.link",
                &KeyTuple::of([
                    AssociationKind::ProjectTeam.as_str().to_string(),
                    project.to_string(),
                    staff.to_string(),
                ]),
            )
        }
        Relation::Meeting => meeting_id(w, get(f, "subject"), get(f, "start")),
        _ => None,
    }
}

fn name_text(w: &Warehouse, id: u64) -> String {
    w.row::<Name>(id)
        .map(|n| n.text.clone())
        .unwrap_or_default()
}

fn org_name(w: &Warehouse, id: u64) -> String {
    w.row::<Organisation>(id)
        .map(|o| name_text(w, o.name_id))
        .unwrap_or_default()
}

fn type_code(w: &Warehouse, id: u64) -> String {
    w.row::<TypeCode>(id)
        .map(|t| t.code.clone())
        .unwrap_or_default()
}

fn username_of_staff(w: &Warehouse, staff_id: u64) -> String {
    w.lookup_unique("login.staff_id", &KeyTuple::of([staff_id.to_string()]))
        .and_then(|id| w.row::<Login>(id))
        .map(|l| l.username.clone())
        .unwrap_or_default()
}

fn contact_fields(w: &Warehouse, contact_id: Option<u64>, out: &mut Fields) {
    let contact = contact_id.and_then(|id| w.row::<Contact>(id));
    let mut set = |k: &str, v: String| {
        out.insert(k.to_string(), v);
    };
    let web = contact.and_then(|c| c.web.clone()).unwrap_or_default();
    set("email", web.email);
    set("url", web.url);
    let tel = contact
        .and_then(|c| c.telephone.clone())
        .unwrap_or_default();
    set("mobile", tel.mobile);
    set("fax", tel.fax);
    set("telephone", tel.telephone);
    let city = contact.and_then(|c| c.city.clone());
    set(
        "city",
        city.as_ref()
            .map(|c| c.city_name.clone())
            .unwrap_or_default(),
    );
    set(
        "city_code",
        city.as_ref().map(|c| c.code.clone()).unwrap_or_default(),
    );
    set(
        "state",
        city.as_ref()
            .and_then(|c| c.state_id)
            .and_then(|id| w.row::<CityState>(id))
            .map(|s| s.state_name.clone())
            .unwrap_or_default(),
    );
    set(
        "country",
        city.as_ref()
            .and_then(|c| w.row::<CityCountry>(c.country_id))
            .map(|c| c.country_name.clone())
            .unwrap_or_default(),
    );
}

pub(crate) fn project_label(w: &Warehouse, project_id: u64) -> (String, String) {
    match w.row::<Project>(project_id) {
        Some(p) => (org_name(w, p.org_id), name_text(w, p.name_id)),
        None => Default::default(),
    }
}

/// Lowest-id link of `kind` pointing at `right`, as `(assoc_id, left_id)`.
pub(crate) fn link_into(
    w: &Warehouse,
    kind: AssociationKind,
    right: (Table, u64),
) -> Option<(u64, u64)> {
    w.referrers(right.0, right.1)
        .into_iter()
        .filter(|(t, _)| *t == Table::Association)
        .filter_map(|(_, id)| w.row::<Association>(id))
        .find(|a| a.kind == kind && a.right_id == right.1)
        .map(|a| (a.assoc_id, a.left_id))
}

/// The stored entity rendered in the source vocabulary, every shape field
/// present (empty when unset).
pub(crate) fn stored_fields(w: &Warehouse, target: Relation, id: u64) -> Fields {
    let mut f = Fields::new();
    let set = |f: &mut Fields, k: &str, v: String| {
        f.insert(k.to_string(), v);
    };
    match target {
        Relation::Type => {
            if let Some(t) = w.row::<TypeCode>(id) {
                set(&mut f, "domain", t.domain.as_str().to_string());
                set(&mut f, "code", t.code.clone());
                set(&mut f, "label", t.label.clone());
            }
        }
        Relation::Organisation => {
            if let Some(o) = w.row::<Organisation>(id) {
                set(&mut f, "name", name_text(w, o.name_id));
                set(&mut f, "type", type_code(w, o.type_id));
                contact_fields(w, o.contact_id, &mut f);
            }
        }
        Relation::Staff => {
            if let Some(s) = w.row::<Staff>(id) {
                let login = w
                    .lookup_unique("login.staff_id", &KeyTuple::of([id.to_string()]))
                    .and_then(|l| w.row::<Login>(l));
                set(
                    &mut f,
                    "username",
                    login.map(|l| l.username.clone()).unwrap_or_default(),
                );
                set(
                    &mut f,
                    "password_hash",
                    login.map(|l| l.password_hash.clone()).unwrap_or_default(),
                );
                set(&mut f, "role", s.role.clone());
                set(&mut f, "responsibilities", s.responsibilities.clone());
                set(&mut f, "group", s.group_name.clone());
                set(&mut f, "rights", Permission::format_set(&s.rights));
                let person = w.row::<Person>(s.person_id);
                set(
                    &mut f,
                    "name",
                    person.map(|p| name_text(w, p.name_id)).unwrap_or_default(),
                );
                set(
                    &mut f,
                    "org",
                    person.map(|p| org_name(w, p.org_id)).unwrap_or_default(),
                );
                contact_fields(w, person.and_then(|p| p.contact_id), &mut f);
            }
        }
        Relation::Project => {
            if let Some(p) = w.row::<Project>(id) {
                set(&mut f, "name", name_text(w, p.name_id));
                set(&mut f, "org", org_name(w, p.org_id));
                set(&mut f, "type", type_code(w, p.type_id));
                set(&mut f, "owner", username_of_staff(w, p.owner_staff_id));
                set(&mut f, "category", p.category.clone());
                set(&mut f, "state", p.state.as_str().to_string());
                set(&mut f, "status", p.status.clone());
                let sed = w.row::<StartEndDate>(p.sed_id);
                set(
                    &mut f,
                    "start",
                    sed.map(|s| s.start_ts.to_string()).unwrap_or_default(),
                );
                set(
                    &mut f,
                    "end",
                    sed.and_then(|s| s.end_ts)
                        .map(|t| t.to_string())
                        .unwrap_or_default(),
                );
                set(
                    &mut f,
                    "deadline",
                    p.deadline.map(|d| d.to_string()).unwrap_or_default(),
                );
            }
        }
        Relation::Product => {
            if let Some(p) = w.row::<Product>(id) {
                set(&mut f, "name", name_text(w, p.name_id));
                set(&mut f, "org", org_name(w, p.org_id));
                set(&mut f, "type", type_code(w, p.type_id));
                set(
                    &mut f,
                    "project",
                    p.project_id
                        .map(|pid| project_label(w, pid).1)
                        .unwrap_or_default(),
                );
                set(
                    &mut f,
                    "release_date",
                    p.release_date.map(|d| d.to_string()).unwrap_or_default(),
                );
                set(&mut f, "notes", p.notes.clone());
            }
        }
        Relation::Document => {
            if let Some(d) = w.row::<Document>(id) {
                set(&mut f, "content_ref", d.content_ref.clone());
                set(&mut f, "title", d.title.clone());
                set(&mut f, "type", type_code(w, d.type_id));
                set(&mut f, "created", d.created_ts.to_string());
                let right = (Table::Document, id);
                let org = link_into(w, AssociationKind::OrganisationDocument, right)
                    .map(|(_, org)| org_name(w, org))
                    .unwrap_or_default();
                let project = link_into(w, AssociationKind::ProjectDocument, right)
                    .map(|(_, p)| project_label(w, p).1)
                    .unwrap_or_default();
                let owner = link_into(w, AssociationKind::StaffDocument, right)
                    .map(|(_, s)| username_of_staff(w, s))
                    .unwrap_or_default();
                set(&mut f, "org", org);
                set(&mut f, "project", project);
                set(&mut f, "owner", owner);
            }
        }
        Relation::ProjectTeam => {
            if let Some(a) = w.row::<Association>(id) {
                let (org, project) = project_label(w, a.left_id);
                set(&mut f, "org", org);
                set(&mut f, "project", project);
                set(&mut f, "username", username_of_staff(w, a.right_id));
                set(&mut f, "role_note", a.role_note.clone().unwrap_or_default());
            }
        }
        Relation::Meeting => {
            if let Some(m) = w.row::<Meeting>(id) {
                set(&mut f, "subject", m.subject.clone());
                let sed = w.row::<StartEndDate>(m.sed_id);
                set(
                    &mut f,
                    "start",
                    sed.map(|s| s.start_ts.to_string()).unwrap_or_default(),
                );
                set(
                    &mut f,
                    "end",
                    sed.and_then(|s| s.end_ts)
                        .map(|t| t.to_string())
                        .unwrap_or_default(),
                );
                let (org, project) = m
                    .project_id
                    .map(|p| project_label(w, p))
                    .unwrap_or_default();
                set(&mut f, "org", org);
                set(&mut f, "project", project);
            }
        }
        _ => {}
    }
    f
}

/// Contact parts of a merged row; shared with the load stage.
pub(crate) fn contact_parts(fields: &Fields) -> ContactParts {
    ContactParts::from_fields(fields)
}
