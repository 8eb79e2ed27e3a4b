//! Applying integrated entities to the warehouse as one atomic unit.

use chrono::NaiveDate;

use super::cleanse::parse_timestamp;
use super::integrate::{
    contact_parts, link_into, org_id, project_id, staff_id, type_id, Action, Fields, Integration,
    Plan,
};
use super::{EtlError, FieldChange, LoadReport, Stage, StageCounts};
use crate::clock::Timestamp;
use crate::schema::*;
use crate::security::Permission;
use crate::store::{StoreError, Warehouse};

/// Writes every insert and update through [`Warehouse::put`] inside one
/// atomic unit. If any write fails the warehouse is left exactly as it was
/// and the whole batch is reported as [`EtlError::LoadAborted`].
pub fn load(
    warehouse: &mut Warehouse,
    integration: Integration,
    cycle_number: u64,
) -> Result<LoadReport, EtlError> {
    let target = integration.target;
    let at = integration.extracted_at;
    let source_id = integration.source_id.clone();
    let loaded_ids = warehouse
        .atomic(|w| {
            let mut ids = Vec::new();
            for plan in &integration.plans {
                if plan.action == Action::Unchanged {
                    continue;
                }
                let id = apply(w, target, plan, at).map_err(|e| (plan, e))?;
                ids.push(id);
            }
            Ok(ids)
        })
        .map_err(|(plan, cause): (&Plan, StoreError)| EtlError::LoadAborted {
            source_id: source_id.clone(),
            line: plan.lines.first().copied(),
            cause: cause.to_string(),
        })?;

    let rows = integration.counts.passed;
    let mut report = LoadReport {
        source_id,
        target,
        cycle_number,
        stages: vec![
            integration.counts,
            StageCounts::new(Stage::Load, rows, rows, 0),
        ],
        quarantine: Vec::new(),
        loaded_ids,
        inserted: 0,
        updated: 0,
        unchanged: 0,
        changed_fields: Vec::new(),
        watermark: 0,
    };
    for plan in &integration.plans {
        match plan.action {
            Action::Insert => report.inserted += 1,
            Action::Update => report.updated += 1,
            Action::Unchanged => report.unchanged += 1,
        }
        for field in &plan.changed {
            report.changed_fields.push(FieldChange {
                key: plan.key.to_string(),
                field: field.clone(),
            });
        }
    }
    Ok(report)
}

fn get<'a>(f: &'a Fields, name: &str) -> &'a str {
    f.get(name).map(String::as_str).unwrap_or("")
}

fn non_empty(f: &Fields, name: &str) -> Option<String> {
    Some(get(f, name).to_string()).filter(|v| !v.is_empty())
}

fn ts(f: &Fields, name: &str) -> Option<Timestamp> {
    non_empty(f, name).and_then(|v| parse_timestamp(&v))
}

fn date(f: &Fields, name: &str) -> Option<NaiveDate> {
    non_empty(f, name).and_then(|v| NaiveDate::parse_from_str(&v, "%Y-%m-%d").ok())
}

/// A reference integrate promised would resolve but no longer does.
fn missing(what: &str, value: &str) -> StoreError {
    let relation = match what {
        "type" | "domain" => Table::TypeCode,
        "organisation" => Table::Organisation,
        "staff" => Table::Staff,
        "project" | "state" => Table::Project,
        _ => Table::StartEndDate,
    };
    StoreError::ConstraintViolation {
        relation,
        detail: format!("unresolved {what} {value:?}"),
    }
}

fn name(w: &mut Warehouse, text: &str) -> Result<u64, StoreError> {
    match w.lookup_natural(Table::Name, &KeyTuple::of([text])).first() {
        Some(id) => Ok(*id),
        None => w.put(Name {
            name_id: 0,
            text: text.to_string(),
        }),
    }
}

fn country(w: &mut Warehouse, country_name: &str) -> Result<u64, StoreError> {
    match w
        .lookup_natural(Table::CityCountry, &KeyTuple::of([country_name]))
        .first()
    {
        Some(id) => Ok(*id),
        None => w.put(CityCountry {
            country_id: 0,
            country_name: country_name.to_string(),
            iso_code: None,
        }),
    }
}

fn state(w: &mut Warehouse, country_id: u64, state_name: &str) -> Result<u64, StoreError> {
    let key = KeyTuple::of([country_id.to_string(), state_name.to_string()]);
    match w.lookup_natural(Table::CityState, &key).first() {
        Some(id) => Ok(*id),
        None => w.put(CityState {
            state_id: 0,
            state_name: state_name.to_string(),
            country_id,
        }),
    }
}

/// Writes the row's contact into `existing` (or a new row). Returns the
/// contact id, or `existing` unchanged when the row carries no contact.
fn contact(
    w: &mut Warehouse,
    existing: Option<u64>,
    f: &Fields,
) -> Result<Option<u64>, StoreError> {
    let parts = contact_parts(f);
    if parts.is_empty() {
        return Ok(existing);
    }
    let city = match parts.city {
        Some((city_name, code, state_name, country_name)) => {
            let country_id = country(w, &country_name)?;
            let state_id = if state_name.is_empty() {
                None
            } else {
                Some(state(w, country_id, &state_name)?)
            };
            Some(CityContact {
                city_name,
                code,
                state_id,
                country_id,
            })
        }
        None => None,
    };
    let record = Contact {
        contact_id: existing.unwrap_or(0),
        web: parts.web,
        telephone: parts.telephone,
        city,
    };
    w.put(record).map(Some)
}

fn need_type(w: &Warehouse, domain: TypeDomain, code: &str) -> Result<u64, StoreError> {
    type_id(w, domain, code).ok_or_else(|| missing("type", code))
}

fn need_org(w: &Warehouse, org: &str) -> Result<u64, StoreError> {
    org_id(w, org).ok_or_else(|| missing("organisation", org))
}

fn need_staff(w: &Warehouse, username: &str) -> Result<u64, StoreError> {
    staff_id(w, username).ok_or_else(|| missing("staff", username))
}

fn need_project(w: &Warehouse, org: &str, project: &str) -> Result<u64, StoreError> {
    project_id(w, org, project).ok_or_else(|| missing("project", project))
}

/// Start/end row shared by projects and meetings: updated in place when
/// the owner already has one.
fn start_end(f: &Fields, existing: Option<u64>) -> Result<StartEndDate, StoreError> {
    Ok(StartEndDate {
        sed_id: existing.unwrap_or(0),
        start_ts: ts(f, "start").ok_or_else(|| missing("start", get(f, "start")))?,
        end_ts: ts(f, "end"),
    })
}

fn apply(
    w: &mut Warehouse,
    target: Relation,
    plan: &Plan,
    at: Timestamp,
) -> Result<u64, StoreError> {
    let f = &plan.fields;
    let existing = plan.existing;
    match target {
        Relation::Type => w.put(TypeCode {
            type_id: existing.unwrap_or(0),
            domain: TypeDomain::parse(get(f, "domain"))
                .ok_or_else(|| missing("domain", get(f, "domain")))?,
            code: get(f, "code").to_string(),
            label: get(f, "label").to_string(),
        }),
        Relation::Organisation => {
            let prior = existing.and_then(|id| w.row::<Organisation>(id)).cloned();
            let name_id = name(w, get(f, "name"))?;
            let type_id = need_type(w, TypeDomain::Organization, get(f, "type"))?;
            let contact_id = contact(w, prior.as_ref().and_then(|o| o.contact_id), f)?;
            w.put(Organisation {
                org_id: existing.unwrap_or(0),
                name_id,
                type_id,
                contact_id,
            })
        }
        Relation::Staff => apply_staff(w, plan, at),
        Relation::Project => apply_project(w, plan),
        Relation::Product => {
            let name_id = name(w, get(f, "name"))?;
            let org_id = need_org(w, get(f, "org"))?;
            let type_id = need_type(w, TypeDomain::Product, get(f, "type"))?;
            let project_id = match non_empty(f, "project") {
                Some(p) => Some(need_project(w, get(f, "org"), &p)?),
                None => None,
            };
            w.put(Product {
                product_id: existing.unwrap_or(0),
                name_id,
                org_id,
                type_id,
                project_id,
                release_date: date(f, "release_date"),
                notes: get(f, "notes").to_string(),
            })
        }
        Relation::Document => apply_document(w, plan),
        Relation::ProjectTeam => {
            let project = need_project(w, get(f, "org"), get(f, "project"))?;
            let staff = need_staff(w, get(f, "username"))?;
            w.put(Association {
                assoc_id: existing.unwrap_or(0),
                kind: AssociationKind::ProjectTeam,
                left_id: project,
                right_id: staff,
                role_note: non_empty(f, "role_note"),
            })
        }
        Relation::Meeting => {
            let prior = existing.and_then(|id| w.row::<Meeting>(id)).cloned();
            let project_id = match non_empty(f, "project") {
                Some(p) => Some(need_project(w, get(f, "org"), &p)?),
                None => None,
            };
            let sed_id = w.put(start_end(f, prior.as_ref().map(|m| m.sed_id))?)?;
            w.put(Meeting {
                meeting_id: existing.unwrap_or(0),
                project_id,
                sed_id,
                subject: get(f, "subject").to_string(),
            })
        }
        other => unreachable!("{other} is not loadable"),
    }
}

fn apply_staff(w: &mut Warehouse, plan: &Plan, at: Timestamp) -> Result<u64, StoreError> {
    let f = &plan.fields;
    let prior_staff = plan.existing.and_then(|id| w.row::<Staff>(id)).cloned();
    let prior_person = prior_staff
        .as_ref()
        .and_then(|s| w.row::<Person>(s.person_id))
        .cloned();
    let prior_login = plan
        .existing
        .and_then(|id| w.lookup_unique("login.staff_id", &KeyTuple::of([id.to_string()])))
        .and_then(|id| w.row::<Login>(id))
        .cloned();

    let name_id = name(w, get(f, "name"))?;
    let org_id = need_org(w, get(f, "org"))?;
    let contact_id = contact(w, prior_person.as_ref().and_then(|p| p.contact_id), f)?;
    let person_id = w.put(Person {
        person_id: prior_person.as_ref().map_or(0, |p| p.person_id),
        name_id,
        contact_id,
        org_id,
    })?;
    let rights =
        Permission::parse_set(get(f, "rights")).map_err(|e| StoreError::ConstraintViolation {
            relation: Table::Staff,
            detail: e.to_string(),
        })?;
    let staff_id = w.put(Staff {
        staff_id: plan.existing.unwrap_or(0),
        person_id,
        role: get(f, "role").to_string(),
        responsibilities: get(f, "responsibilities").to_string(),
        group_name: get(f, "group").to_string(),
        rights,
    })?;
    w.put(Login {
        login_id: prior_login.as_ref().map_or(0, |l| l.login_id),
        staff_id,
        username: get(f, "username").to_string(),
        password_hash: get(f, "password_hash").to_string(),
        created_ts: prior_login.as_ref().map_or(at, |l| l.created_ts),
    })?;
    Ok(staff_id)
}

fn apply_project(w: &mut Warehouse, plan: &Plan) -> Result<u64, StoreError> {
    let f = &plan.fields;
    let prior = plan.existing.and_then(|id| w.row::<Project>(id)).cloned();
    let name_id = name(w, get(f, "name"))?;
    let org_id = need_org(w, get(f, "org"))?;
    let type_id = need_type(w, TypeDomain::Project, get(f, "type"))?;
    let owner_staff_id = need_staff(w, get(f, "owner"))?;
    let state =
        ProjectState::parse(get(f, "state")).ok_or_else(|| missing("state", get(f, "state")))?;
    let deadline = date(f, "deadline");
    let sed = start_end(f, prior.as_ref().map(|p| p.sed_id))?;
    let project = |sed_id| Project {
        project_id: plan.existing.unwrap_or(0),
        name_id,
        org_id,
        type_id,
        sed_id,
        owner_staff_id,
        category: get(f, "category").to_string(),
        state,
        status: get(f, "status").to_string(),
        deadline,
    };
    let Some(prior) = prior else {
        let sed_id = w.put(sed)?;
        return w.put(project(sed_id));
    };
    // The deadline rule spans both rows, so write them in the order that
    // keeps every intermediate state valid.
    let old_start = w
        .row::<StartEndDate>(prior.sed_id)
        .map(|s| s.start_ts.date());
    let project_first = match (deadline, old_start) {
        (Some(d), Some(start)) => d >= start,
        _ => true,
    };
    if project_first {
        let id = w.put(project(prior.sed_id))?;
        w.put(sed)?;
        Ok(id)
    } else {
        w.put(sed)?;
        w.put(project(prior.sed_id))
    }
}

fn apply_document(w: &mut Warehouse, plan: &Plan) -> Result<u64, StoreError> {
    let f = &plan.fields;
    let type_id = need_type(w, TypeDomain::Document, get(f, "type"))?;
    let doc_id = w.put(Document {
        doc_id: plan.existing.unwrap_or(0),
        type_id,
        title: get(f, "title").to_string(),
        created_ts: ts(f, "created").ok_or_else(|| missing("created", get(f, "created")))?,
        content_ref: get(f, "content_ref").to_string(),
    })?;
    let mut links = Vec::new();
    if let Some(org) = non_empty(f, "org") {
        links.push((AssociationKind::OrganisationDocument, need_org(w, &org)?));
    }
    if let Some(project) = non_empty(f, "project") {
        links.push((
            AssociationKind::ProjectDocument,
            need_project(w, get(f, "org"), &project)?,
        ));
    }
    if let Some(owner) = non_empty(f, "owner") {
        links.push((AssociationKind::StaffDocument, need_staff(w, &owner)?));
    }
    for (kind, left_id) in links {
        // a document has at most one link of each kind from a source: a
        // changed value replaces the old link
        match link_into(w, kind, (Table::Document, doc_id)) {
            Some((_, current)) if current == left_id => continue,
            Some((assoc_id, _)) => w.delete(kind.relation(), assoc_id)?,
            None => {}
        }
        w.put(Association {
            assoc_id: 0,
            kind,
            left_id,
            right_id: doc_id,
            role_note: None,
        })?;
    }
    Ok(doc_id)
}
