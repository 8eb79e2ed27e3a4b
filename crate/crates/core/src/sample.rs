//! A small catalog with at least one row in every relation.

use chrono::NaiveDate;

use crate::clock::Timestamp;
use crate::schema::*;
use crate::security::Permission;
use crate::store::{StoreError, Warehouse};

/// Ids of the rows [`populate`] inserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleIds {
    pub org: u64,
    pub person: u64,
    pub staff: u64,
    pub project: u64,
    pub product: u64,
    pub document: u64,
    pub meeting: u64,
    pub login: u64,
    pub input: u64,
    pub output: u64,
}

/// Inserts one connected example of every relation. `password_hash` must
/// be an encoded digest; it becomes the login's stored credential.
pub fn populate(w: &mut Warehouse, password_hash: &str) -> Result<SampleIds, StoreError> {
    w.atomic(|w| {
        let t0 = Timestamp::parse_lenient("2008-08-06T09:00:00Z").expect("literal");
        let t1 = Timestamp::parse_lenient("2008-08-06T10:00:00Z").expect("literal");

        let country = w.put(CityCountry {
            country_id: 0,
            country_name: "Austria".into(),
            iso_code: Some("AT".into()),
        })?;
        let state = w.put(CityState {
            state_id: 0,
            state_name: "Wien".into(),
            country_id: country,
        })?;
        let org_contact = w.put(Contact {
            contact_id: 0,
            web: Some(WebContact {
                email: "office@tuwien.ac.at".into(),
                url: "https://tuwien.ac.at".into(),
            }),
            telephone: Some(TelephoneContact {
                mobile: String::new(),
                fax: "+43 1 58801 99".into(),
                telephone: "+43 1 58801".into(),
            }),
            city: Some(CityContact {
                city_name: "Vienna".into(),
                code: "1040".into(),
                state_id: Some(state),
                country_id: country,
            }),
        })?;
        let person_contact = w.put(Contact {
            contact_id: 0,
            web: Some(WebContact {
                email: "zahmed@tuwien.ac.at".into(),
                url: String::new(),
            }),
            telephone: None,
            city: None,
        })?;

        let mut ty = |domain: TypeDomain, code: &str, label: &str| {
            w.put(TypeCode {
                type_id: 0,
                domain,
                code: code.into(),
                label: label.into(),
            })
        };
        let org_type = ty(TypeDomain::Organization, "UNI", "University")?;
        let project_type = ty(TypeDomain::Project, "RES", "Research")?;
        let product_type = ty(TypeDomain::Product, "SW", "Software")?;
        let doc_type = ty(TypeDomain::Document, "SPEC", "Specification")?;
        ty(TypeDomain::SystemInput, "QUERY", "Query")?;
        ty(TypeDomain::SystemOutput, "ANSWER", "Answer")?;

        let mut name = |text: &str| {
            w.put(Name {
                name_id: 0,
                text: text.into(),
            })
        };
        let org_name = name("TU Wien")?;
        let person_name = name("Zeeshan Ahmed")?;
        let project_name = name("I-SOAS")?;
        let product_name = name("Semantic Search Agent")?;

        let org = w.put(Organisation {
            org_id: 0,
            name_id: org_name,
            type_id: org_type,
            contact_id: Some(org_contact),
        })?;
        let person = w.put(Person {
            person_id: 0,
            name_id: person_name,
            contact_id: Some(person_contact),
            org_id: org,
        })?;
        let staff = w.put(Staff {
            staff_id: 0,
            person_id: person,
            role: "researcher".into(),
            responsibilities: "warehouse design".into(),
            group_name: "pdm".into(),
            rights: [Permission::Admin].into(),
        })?;
        let project_sed = w.put(StartEndDate {
            sed_id: 0,
            start_ts: t0,
            end_ts: None,
        })?;
        let project = w.put(Project {
            project_id: 0,
            name_id: project_name,
            org_id: org,
            type_id: project_type,
            sed_id: project_sed,
            owner_staff_id: staff,
            category: "research".into(),
            state: ProjectState::Active,
            status: "in progress".into(),
            deadline: NaiveDate::from_ymd_opt(2009, 6, 30),
        })?;
        let product = w.put(Product {
            product_id: 0,
            name_id: product_name,
            org_id: org,
            type_id: product_type,
            project_id: Some(project),
            release_date: NaiveDate::from_ymd_opt(2009, 3, 1),
            notes: "prototype".into(),
        })?;
        let document = w.put(Document {
            doc_id: 0,
            type_id: doc_type,
            title: "Warehouse design".into(),
            created_ts: t0,
            content_ref: "docs/warehouse-design.pdf".into(),
        })?;
        let meeting_sed = w.put(StartEndDate {
            sed_id: 0,
            start_ts: t0,
            end_ts: Some(t1),
        })?;
        let meeting = w.put(Meeting {
            meeting_id: 0,
            project_id: Some(project),
            sed_id: meeting_sed,
            subject: "Kick-off".into(),
        })?;
        w.put(Activity {
            activity_id: 0,
            project_id: Some(project),
            staff_id: staff,
            description: "drafted the schema".into(),
            ts: t1,
        })?;
        let links = [
            (AssociationKind::StaffDocument, staff, document),
            (AssociationKind::OrganisationDocument, org, document),
            (AssociationKind::ProjectDocument, project, document),
            (AssociationKind::StaffMeeting, staff, meeting),
            (AssociationKind::ProjectTeam, project, staff),
        ];
        for (kind, left_id, right_id) in links {
            w.put(Association {
                assoc_id: 0,
                kind,
                left_id,
                right_id,
                role_note: None,
            })?;
        }
        let login = w.put(Login {
            login_id: 0,
            staff_id: staff,
            username: "zahmed".into(),
            password_hash: password_hash.into(),
            created_ts: t0,
        })?;
        let input = w.put(SystemInput {
            input_id: 0,
            login_id: login,
            instruction: "list projects".into(),
            ts: t1,
            idempotency_token: Some("sample-1".into()),
        })?;
        let output = w.put(SystemOutput {
            output_id: 0,
            input_id: input,
            payload: "I-SOAS".into(),
            ts: t1,
        })?;
        Ok(SampleIds {
            org,
            person,
            staff,
            project,
            product,
            document,
            meeting,
            login,
            input,
            output,
        })
    })
}
