//! Row types for the organizational and system relations.
//!
//! Surrogate ids are `u64`; `0` means "not yet assigned" and is replaced by
//! the store on insert. Optional foreign keys are `Option<u64>`.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::security::Permission;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Organisation {
    pub org_id: u64,
    pub name_id: u64,
    pub type_id: u64,
    pub contact_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Person {
    pub person_id: u64,
    pub name_id: u64,
    pub contact_id: Option<u64>,
    pub org_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Staff {
    pub staff_id: u64,
    pub person_id: u64,
    pub role: String,
    pub responsibilities: String,
    pub group_name: String,
    pub rights: BTreeSet<Permission>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectState {
    Planned,
    Active,
    Suspended,
    Closed,
}

impl ProjectState {
    pub const ALL: [ProjectState; 4] = [
        ProjectState::Planned,
        ProjectState::Active,
        ProjectState::Suspended,
        ProjectState::Closed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProjectState::Planned => "planned",
            ProjectState::Active => "active",
            ProjectState::Suspended => "suspended",
            ProjectState::Closed => "closed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: u64,
    pub name_id: u64,
    pub org_id: u64,
    pub type_id: u64,
    pub sed_id: u64,
    pub owner_staff_id: u64,
    pub category: String,
    pub state: ProjectState,
    pub status: String,
    pub deadline: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub product_id: u64,
    pub name_id: u64,
    pub org_id: u64,
    pub type_id: u64,
    pub project_id: Option<u64>,
    pub release_date: Option<NaiveDate>,
    pub notes: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: u64,
    pub type_id: u64,
    pub title: String,
    pub created_ts: Timestamp,
    pub content_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationKind {
    StaffDocument,
    OrganisationDocument,
    ProjectDocument,
    StaffMeeting,
    ProjectTeam,
}

impl AssociationKind {
    pub const ALL: [AssociationKind; 5] = [
        AssociationKind::StaffDocument,
        AssociationKind::OrganisationDocument,
        AssociationKind::ProjectDocument,
        AssociationKind::StaffMeeting,
        AssociationKind::ProjectTeam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AssociationKind::StaffDocument => "staff_document",
            AssociationKind::OrganisationDocument => "organisation_document",
            AssociationKind::ProjectDocument => "project_document",
            AssociationKind::StaffMeeting => "staff_meeting",
            AssociationKind::ProjectTeam => "project_team",
        }
    }
}

/// Link row standing in for the five join relations; `kind` fixes which
/// tables `left_id` and `right_id` point into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Association {
    pub assoc_id: u64,
    pub kind: AssociationKind,
    pub left_id: u64,
    pub right_id: u64,
    pub role_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Name {
    pub name_id: u64,
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WebContact {
    pub email: String,
    pub url: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TelephoneContact {
    pub mobile: String,
    pub fax: String,
    pub telephone: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CityContact {
    pub city_name: String,
    pub code: String,
    pub state_id: Option<u64>,
    pub country_id: u64,
}

/// A contact row with its web, telephone and city sub-records inline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contact {
    pub contact_id: u64,
    pub web: Option<WebContact>,
    pub telephone: Option<TelephoneContact>,
    pub city: Option<CityContact>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CityState {
    pub state_id: u64,
    pub state_name: String,
    pub country_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CityCountry {
    pub country_id: u64,
    pub country_name: String,
    pub iso_code: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartEndDate {
    pub sed_id: u64,
    pub start_ts: Timestamp,
    pub end_ts: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meeting {
    pub meeting_id: u64,
    pub project_id: Option<u64>,
    pub sed_id: u64,
    pub subject: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub activity_id: u64,
    pub project_id: Option<u64>,
    pub staff_id: u64,
    pub description: String,
    pub ts: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeDomain {
    Organization,
    Document,
    Project,
    Product,
    SystemInput,
    SystemOutput,
}

impl TypeDomain {
    pub const ALL: [TypeDomain; 6] = [
        TypeDomain::Organization,
        TypeDomain::Document,
        TypeDomain::Project,
        TypeDomain::Product,
        TypeDomain::SystemInput,
        TypeDomain::SystemOutput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TypeDomain::Organization => "organization",
            TypeDomain::Document => "document",
            TypeDomain::Project => "project",
            TypeDomain::Product => "product",
            TypeDomain::SystemInput => "system_input",
            TypeDomain::SystemOutput => "system_output",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCode {
    pub type_id: u64,
    pub domain: TypeDomain,
    pub code: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Login {
    pub login_id: u64,
    pub staff_id: u64,
    pub username: String,
    /// Encoded salted digest, see [`crate::security::hash_password`].
    pub password_hash: String,
    pub created_ts: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemInput {
    pub input_id: u64,
    pub login_id: u64,
    pub instruction: String,
    pub ts: Timestamp,
    pub idempotency_token: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemOutput {
    pub output_id: u64,
    pub input_id: u64,
    pub payload: String,
    pub ts: Timestamp,
}
