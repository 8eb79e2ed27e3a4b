//! Type-checking cleansed rows against the schema.

use std::collections::BTreeMap;

use super::cleanse::parse_timestamp;
use super::shapes::{shape, FieldKind};
use super::{CleanBatch, ConvertedBatch, Quarantined, Stage, StageCounts};
use crate::clock::Timestamp;
use crate::schema::*;
use crate::security::{PasswordDigest, Permission};

/// Maps each cleansed row to schema records and keeps it iff every record
/// passes [`validate_record`]. Passing rows come back with canonical values
/// (timestamps, dates, rights); failing rows are quarantined with the
/// violations as the reason.
pub fn convert(batch: CleanBatch) -> (ConvertedBatch, Vec<Quarantined>) {
    let input = batch.rows.len();
    let mut rows = Vec::with_capacity(input);
    let mut quarantine = Vec::new();
    for mut staged in batch.rows {
        match check_row(batch.target, &mut staged.fields, batch.extracted_at) {
            Ok(()) => rows.push(staged),
            Err(problems) => quarantine.push(Quarantined {
                source_id: batch.source_id.clone(),
                stage: Stage::Convert,
                line: staged.lines[0],
                reason: problems.join("; "),
                row: staged.fields,
            }),
        }
    }
    let counts = StageCounts::new(Stage::Convert, input, rows.len(), quarantine.len());
    let converted = ConvertedBatch {
        source_id: batch.source_id,
        target: batch.target,
        extracted_at: batch.extracted_at,
        rows,
        counts,
    };
    (converted, quarantine)
}

fn get<'a>(fields: &'a BTreeMap<String, String>, name: &str) -> &'a str {
    fields.get(name).map(String::as_str).unwrap_or("")
}

fn check_row(
    target: Relation,
    fields: &mut BTreeMap<String, String>,
    at: Timestamp,
) -> Result<(), Vec<String>> {
    let shape = shape(target).expect("loadable target");
    let mut problems = Vec::new();

    // scalar kinds first, rewriting values into canonical form
    for spec in shape.fields {
        let Some(value) = fields.get_mut(spec.name) else {
            continue;
        };
        if value.is_empty() {
            continue;
        }
        let result = match spec.kind {
            FieldKind::Date => chrono::NaiveDate::parse_from_str(value, "%Y-%m-%d")
                .map(|_| ())
                .map_err(|_| format!("{}: {value:?} is not a valid date", spec.name)),
            FieldKind::Timestamp => match parse_timestamp(value) {
                Some(t) => {
                    *value = t.to_string();
                    Ok(())
                }
                None => Err(format!("{}: {value:?} is not a valid timestamp", spec.name)),
            },
            FieldKind::Rights => match Permission::parse_set(value) {
                Ok(set) => {
                    *value = Permission::format_set(&set);
                    Ok(())
                }
                Err(e) => Err(format!("{}: {e}", spec.name)),
            },
            FieldKind::Digest => PasswordDigest::parse(value)
                .map(|_| ())
                .map_err(|e| format!("{}: {e}", spec.name)),
            FieldKind::Enum => check_enum(target, spec.name, value),
            _ => Ok(()),
        };
        if let Err(p) = result {
            problems.push(p);
        }
    }
    if !problems.is_empty() {
        return Err(problems);
    }

    let records = match records_for(target, fields, at) {
        Ok(records) => records,
        Err(p) => return Err(vec![p]),
    };
    for record in &records {
        problems.extend(validate_record(record).into_iter().map(|v| v.to_string()));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}

fn check_enum(target: Relation, field: &str, value: &str) -> Result<(), String> {
    let ok = match (target, field) {
        (Relation::Type, "domain") => TypeDomain::parse(value).is_some(),
        (Relation::Project, "state") => ProjectState::parse(value).is_some(),
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("{field}: {value:?} is not an allowed value"))
    }
}

/// Contact fields of a row, before lookup rows are resolved.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub(crate) struct ContactParts {
    pub web: Option<WebContact>,
    pub telephone: Option<TelephoneContact>,
    /// `(city name, code, state name, country name)`
    pub city: Option<(String, String, String, String)>,
}

impl ContactParts {
    pub fn from_fields(fields: &BTreeMap<String, String>) -> Self {
        let g = |n| get(fields, n).to_string();
        let web = WebContact {
            email: g("email"),
            url: g("url"),
        };
        let tel = TelephoneContact {
            mobile: g("mobile"),
            fax: g("fax"),
            telephone: g("telephone"),
        };
        let city = (g("city"), g("city_code"), g("state"), g("country"));
        ContactParts {
            web: (web != WebContact::default()).then_some(web),
            telephone: (tel != TelephoneContact::default()).then_some(tel),
            city: (!(city.0.is_empty()
                && city.1.is_empty()
                && city.2.is_empty()
                && city.3.is_empty()))
            .then_some(city),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.web.is_none() && self.telephone.is_none() && self.city.is_none()
    }

    /// The contact with placeholder lookup ids, for field validation.
    fn draft(&self) -> Result<Option<Contact>, String> {
        if self.is_empty() {
            return Ok(None);
        }
        let city = match &self.city {
            Some((name, code, _, country)) => {
                if country.is_empty() {
                    return Err("contact_city.country: required when a city is given".into());
                }
                Some(CityContact {
                    city_name: name.clone(),
                    code: code.clone(),
                    state_id: None,
                    country_id: 0,
                })
            }
            None => None,
        };
        Ok(Some(Contact {
            contact_id: 0,
            web: self.web.clone(),
            telephone: self.telephone.clone(),
            city,
        }))
    }
}

fn ts(fields: &BTreeMap<String, String>, name: &str) -> Option<Timestamp> {
    let v = get(fields, name);
    if v.is_empty() {
        None
    } else {
        parse_timestamp(v)
    }
}

/// Schema records a row expands to, with unresolved references left 0.
fn records_for(
    target: Relation,
    fields: &BTreeMap<String, String>,
    at: Timestamp,
) -> Result<Vec<Record>, String> {
    let name = |text: &str| -> Record {
        Name {
            name_id: 0,
            text: text.to_string(),
        }
        .into()
    };
    let mut out = Vec::new();
    match target {
        Relation::Type => out.push(
            TypeCode {
                type_id: 0,
                domain: TypeDomain::parse(get(fields, "domain")).expect("checked"),
                code: get(fields, "code").into(),
                label: get(fields, "label").into(),
            }
            .into(),
        ),
        Relation::Organisation => {
            out.push(name(get(fields, "name")));
            out.extend(ContactParts::from_fields(fields).draft()?.map(Record::from));
        }
        Relation::Staff => {
            out.push(name(get(fields, "name")));
            out.extend(ContactParts::from_fields(fields).draft()?.map(Record::from));
            out.push(
                Login {
                    login_id: 0,
                    staff_id: 0,
                    username: get(fields, "username").into(),
                    password_hash: get(fields, "password_hash").into(),
                    created_ts: at,
                }
                .into(),
            );
        }
        Relation::Project => {
            out.push(name(get(fields, "name")));
            let start = ts(fields, "start").expect("required and checked");
            out.push(
                StartEndDate {
                    sed_id: 0,
                    start_ts: start,
                    end_ts: ts(fields, "end"),
                }
                .into(),
            );
            if let Some(deadline) = fields.get("deadline").filter(|d| !d.is_empty()) {
                if deadline.as_str() < start.date().format("%Y-%m-%d").to_string().as_str() {
                    return Err(format!(
                        "project.deadline: {deadline} precedes start {start}"
                    ));
                }
            }
        }
        Relation::Product => out.push(name(get(fields, "name"))),
        Relation::Document => out.push(
            Document {
                doc_id: 0,
                type_id: 0,
                title: get(fields, "title").into(),
                created_ts: ts(fields, "created").expect("required and checked"),
                content_ref: get(fields, "content_ref").into(),
            }
            .into(),
        ),
        Relation::ProjectTeam => {}
        Relation::Meeting => {
            let start = ts(fields, "start").expect("required and checked");
            out.push(
                StartEndDate {
                    sed_id: 0,
                    start_ts: start,
                    end_ts: ts(fields, "end"),
                }
                .into(),
            );
            if !get(fields, "project").is_empty() && get(fields, "org").is_empty() {
                return Err("meeting.org: required when a project is given".into());
            }
            if get(fields, "project").is_empty() && !get(fields, "org").is_empty() {
                return Err("meeting.project: required when an organisation is given".into());
            }
        }
        other => unreachable!("{other} is not loadable"),
    }
    if target == Relation::Document
        && !get(fields, "project").is_empty()
        && get(fields, "org").is_empty()
    {
        return Err("document.org: required when a project is given".into());
    }
    Ok(out)
}
