//! Typed relations of the organizational and system data model.
//!
//! There are two views of the catalog. [`Table`] is the physical layout: one
//! row type per table, 18 in total. [`Relation`] is the logical catalog of 25
//! relations (22 organizational, 3 system). The five link relations are
//! partitions of [`Table::Association`] by kind, and the three contact
//! sub-relations are views of [`Table::Contact`] rows that carry the
//! matching sub-record.

mod records;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use records::*;

/// Physical tables, one per row type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    Activity,
    Association,
    CityCountry,
    CityState,
    Contact,
    Document,
    Login,
    Meeting,
    Name,
    Organisation,
    Person,
    Product,
    Project,
    Staff,
    StartEndDate,
    SystemInput,
    SystemOutput,
    TypeCode,
}

impl Table {
    /// Alphabetical, which is also snapshot body order.
    pub const ALL: [Table; 18] = [
        Table::Activity,
        Table::Association,
        Table::CityCountry,
        Table::CityState,
        Table::Contact,
        Table::Document,
        Table::Login,
        Table::Meeting,
        Table::Name,
        Table::Organisation,
        Table::Person,
        Table::Product,
        Table::Project,
        Table::Staff,
        Table::StartEndDate,
        Table::SystemInput,
        Table::SystemOutput,
        Table::TypeCode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Table::Activity => "activity",
            Table::Association => "association",
            Table::CityCountry => "city_country",
            Table::CityState => "city_state",
            Table::Contact => "contact",
            Table::Document => "document",
            Table::Login => "login",
            Table::Meeting => "meeting",
            Table::Name => "name",
            Table::Organisation => "organisation",
            Table::Person => "person",
            Table::Product => "product",
            Table::Project => "project",
            Table::Staff => "staff",
            Table::StartEndDate => "start_end_date",
            Table::SystemInput => "system_input",
            Table::SystemOutput => "system_output",
            Table::TypeCode => "type_code",
        }
    }

    pub fn index(self) -> usize {
        Table::ALL
            .iter()
            .position(|t| *t == self)
            .expect("table listed in ALL")
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The logical relation catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    // main organizational relations
    Organisation,
    Person,
    Staff,
    Project,
    Product,
    // supportive organizational relations
    Name,
    Contacts,
    ContactsWeb,
    ContactTelephone,
    ContactCity,
    CityCountry,
    CityState,
    StartEndDate,
    ProjectTeam,
    Meeting,
    Activity,
    StaffMeeting,
    Document,
    Type,
    StaffDocument,
    OrganisationDocument,
    ProjectDocument,
    // system data
    Login,
    SystemInput,
    SystemOutput,
}

impl Relation {
    pub const ALL: [Relation; 25] = [
        Relation::Organisation,
        Relation::Person,
        Relation::Staff,
        Relation::Project,
        Relation::Product,
        Relation::Name,
        Relation::Contacts,
        Relation::ContactsWeb,
        Relation::ContactTelephone,
        Relation::ContactCity,
        Relation::CityCountry,
        Relation::CityState,
        Relation::StartEndDate,
        Relation::ProjectTeam,
        Relation::Meeting,
        Relation::Activity,
        Relation::StaffMeeting,
        Relation::Document,
        Relation::Type,
        Relation::StaffDocument,
        Relation::OrganisationDocument,
        Relation::ProjectDocument,
        Relation::Login,
        Relation::SystemInput,
        Relation::SystemOutput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Organisation => "organisation",
            Relation::Person => "person",
            Relation::Staff => "staff",
            Relation::Project => "project",
            Relation::Product => "product",
            Relation::Name => "name",
            Relation::Contacts => "contacts",
            Relation::ContactsWeb => "contacts_web",
            Relation::ContactTelephone => "contact_telephone",
            Relation::ContactCity => "contact_city",
            Relation::CityCountry => "city_country",
            Relation::CityState => "city_state",
            Relation::StartEndDate => "start_end_date",
            Relation::ProjectTeam => "project_team",
            Relation::Meeting => "meeting",
            Relation::Activity => "activity",
            Relation::StaffMeeting => "staff_meeting",
            Relation::Document => "document",
            Relation::Type => "type",
            Relation::StaffDocument => "staff_document",
            Relation::OrganisationDocument => "organisation_document",
            Relation::ProjectDocument => "project_document",
            Relation::Login => "login",
            Relation::SystemInput => "system_input",
            Relation::SystemOutput => "system_output",
        }
    }

    pub fn is_system(self) -> bool {
        matches!(
            self,
            Relation::Login | Relation::SystemInput | Relation::SystemOutput
        )
    }

    pub fn table(self) -> Table {
        match self {
            Relation::Organisation => Table::Organisation,
            Relation::Person => Table::Person,
            Relation::Staff => Table::Staff,
            Relation::Project => Table::Project,
            Relation::Product => Table::Product,
            Relation::Name => Table::Name,
            Relation::Contacts
            | Relation::ContactsWeb
            | Relation::ContactTelephone
            | Relation::ContactCity => Table::Contact,
            Relation::CityCountry => Table::CityCountry,
            Relation::CityState => Table::CityState,
            Relation::StartEndDate => Table::StartEndDate,
            Relation::ProjectTeam
            | Relation::StaffMeeting
            | Relation::StaffDocument
            | Relation::OrganisationDocument
            | Relation::ProjectDocument => Table::Association,
            Relation::Meeting => Table::Meeting,
            Relation::Activity => Table::Activity,
            Relation::Document => Table::Document,
            Relation::Type => Table::TypeCode,
            Relation::Login => Table::Login,
            Relation::SystemInput => Table::SystemInput,
            Relation::SystemOutput => Table::SystemOutput,
        }
    }

    pub fn association_kind(self) -> Option<AssociationKind> {
        match self {
            Relation::StaffDocument => Some(AssociationKind::StaffDocument),
            Relation::OrganisationDocument => Some(AssociationKind::OrganisationDocument),
            Relation::ProjectDocument => Some(AssociationKind::ProjectDocument),
            Relation::StaffMeeting => Some(AssociationKind::StaffMeeting),
            Relation::ProjectTeam => Some(AssociationKind::ProjectTeam),
            _ => None,
        }
    }

    /// Whether a row of `self.table()` belongs to this logical relation.
    pub fn admits(self, record: &Record) -> bool {
        if record.table() != self.table() {
            return false;
        }
        match (self, record) {
            (Relation::ContactsWeb, Record::Contact(c)) => c.web.is_some(),
            (Relation::ContactTelephone, Record::Contact(c)) => c.telephone.is_some(),
            (Relation::ContactCity, Record::Contact(c)) => c.city.is_some(),
            (_, Record::Association(a)) => self.association_kind() == Some(a.kind),
            _ => true,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown relation {0:?}")]
pub struct UnknownRelation(pub String);

impl FromStr for Relation {
    type Err = UnknownRelation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let alias = match s.as_str() {
            "organization" => "organisation",
            "type_code" | "types" => "type",
            "contact" => "contacts",
            other => other,
        };
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == alias)
            .ok_or(UnknownRelation(s))
    }
}

/// A row of any table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "table", rename_all = "snake_case")]
pub enum Record {
    Activity(Activity),
    Association(Association),
    CityCountry(CityCountry),
    CityState(CityState),
    Contact(Contact),
    Document(Document),
    Login(Login),
    Meeting(Meeting),
    Name(Name),
    Organisation(Organisation),
    Person(Person),
    Product(Product),
    Project(Project),
    Staff(Staff),
    StartEndDate(StartEndDate),
    SystemInput(SystemInput),
    SystemOutput(SystemOutput),
    TypeCode(TypeCode),
}

/// Typed access to one table's rows.
pub trait Row: Sized + Into<Record> {
    const TABLE: Table;
    fn from_record(record: &Record) -> Option<&Self>;
}

macro_rules! record_dispatch {
    ($($variant:ident => $id:ident),* $(,)?) => {
        impl Record {
            pub fn table(&self) -> Table {
                match self { $(Record::$variant(_) => Table::$variant,)* }
            }

            /// The surrogate key; `0` when unassigned.
            pub fn id(&self) -> u64 {
                match self { $(Record::$variant(r) => r.$id,)* }
            }

            pub fn set_id(&mut self, id: u64) {
                match self { $(Record::$variant(r) => r.$id = id,)* }
            }
        }

        $(
            impl From<$variant> for Record {
                fn from(r: $variant) -> Self {
                    Record::$variant(r)
                }
            }

            impl Row for $variant {
                const TABLE: Table = Table::$variant;

                fn from_record(record: &Record) -> Option<&Self> {
                    match record {
                        Record::$variant(r) => Some(r),
                        _ => None,
                    }
                }
            }
        )*
    };
}

record_dispatch! {
    Activity => activity_id,
    Association => assoc_id,
    CityCountry => country_id,
    CityState => state_id,
    Contact => contact_id,
    Document => doc_id,
    Login => login_id,
    Meeting => meeting_id,
    Name => name_id,
    Organisation => org_id,
    Person => person_id,
    Product => product_id,
    Project => project_id,
    Staff => staff_id,
    StartEndDate => sed_id,
    SystemInput => input_id,
    SystemOutput => output_id,
    TypeCode => type_id,
}

/// One outgoing reference of a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForeignKey {
    pub field: &'static str,
    pub target: Table,
    pub id: u64,
    /// Set when the target must be a `TypeCode` of this domain.
    pub type_domain: Option<TypeDomain>,
}

impl ForeignKey {
    fn to(field: &'static str, target: Table, id: u64) -> Self {
        ForeignKey {
            field,
            target,
            id,
            type_domain: None,
        }
    }

    fn typed(field: &'static str, id: u64, domain: TypeDomain) -> Self {
        ForeignKey {
            field,
            target: Table::TypeCode,
            id,
            type_domain: Some(domain),
        }
    }
}

impl AssociationKind {
    /// The link relation holding rows of this kind.
    pub fn relation(self) -> Relation {
        match self {
            AssociationKind::StaffDocument => Relation::StaffDocument,
            AssociationKind::OrganisationDocument => Relation::OrganisationDocument,
            AssociationKind::ProjectDocument => Relation::ProjectDocument,
            AssociationKind::StaffMeeting => Relation::StaffMeeting,
            AssociationKind::ProjectTeam => Relation::ProjectTeam,
        }
    }

    /// Target tables of `(left_id, right_id)`.
    pub fn endpoints(self) -> (Table, Table) {
        match self {
            AssociationKind::StaffDocument => (Table::Staff, Table::Document),
            AssociationKind::OrganisationDocument => (Table::Organisation, Table::Document),
            AssociationKind::ProjectDocument => (Table::Project, Table::Document),
            AssociationKind::StaffMeeting => (Table::Staff, Table::Meeting),
            AssociationKind::ProjectTeam => (Table::Project, Table::Staff),
        }
    }
}

impl Record {
    /// Every non-null foreign key carried by the record.
    pub fn foreign_keys(&self) -> Vec<ForeignKey> {
        let mut out = Vec::new();
        let mut opt = |field, target, id: Option<u64>| {
            if let Some(id) = id {
                out.push(ForeignKey::to(field, target, id));
            }
        };
        match self {
            Record::Organisation(r) => {
                opt("contact_id", Table::Contact, r.contact_id);
                out.push(ForeignKey::to("name_id", Table::Name, r.name_id));
                out.push(ForeignKey::typed(
                    "type_id",
                    r.type_id,
                    TypeDomain::Organization,
                ));
            }
            Record::Person(r) => {
                opt("contact_id", Table::Contact, r.contact_id);
                out.push(ForeignKey::to("name_id", Table::Name, r.name_id));
                out.push(ForeignKey::to("org_id", Table::Organisation, r.org_id));
            }
            Record::Staff(r) => out.push(ForeignKey::to("person_id", Table::Person, r.person_id)),
            Record::Project(r) => {
                out.push(ForeignKey::to("name_id", Table::Name, r.name_id));
                out.push(ForeignKey::to("org_id", Table::Organisation, r.org_id));
                out.push(ForeignKey::typed("type_id", r.type_id, TypeDomain::Project));
                out.push(ForeignKey::to("sed_id", Table::StartEndDate, r.sed_id));
                out.push(ForeignKey::to(
                    "owner_staff_id",
                    Table::Staff,
                    r.owner_staff_id,
                ));
            }
            Record::Product(r) => {
                opt("project_id", Table::Project, r.project_id);
                out.push(ForeignKey::to("name_id", Table::Name, r.name_id));
                out.push(ForeignKey::to("org_id", Table::Organisation, r.org_id));
                out.push(ForeignKey::typed("type_id", r.type_id, TypeDomain::Product));
            }
            Record::Document(r) => out.push(ForeignKey::typed(
                "type_id",
                r.type_id,
                TypeDomain::Document,
            )),
            Record::Association(r) => {
                let (left, right) = r.kind.endpoints();
                out.push(ForeignKey::to("left_id", left, r.left_id));
                out.push(ForeignKey::to("right_id", right, r.right_id));
            }
            Record::Contact(r) => {
                if let Some(city) = &r.city {
                    opt("city.state_id", Table::CityState, city.state_id);
                    out.push(ForeignKey::to(
                        "city.country_id",
                        Table::CityCountry,
                        city.country_id,
                    ));
                }
            }
            Record::CityState(r) => out.push(ForeignKey::to(
                "country_id",
                Table::CityCountry,
                r.country_id,
            )),
            Record::Meeting(r) => {
                opt("project_id", Table::Project, r.project_id);
                out.push(ForeignKey::to("sed_id", Table::StartEndDate, r.sed_id));
            }
            Record::Activity(r) => {
                opt("project_id", Table::Project, r.project_id);
                out.push(ForeignKey::to("staff_id", Table::Staff, r.staff_id));
            }
            Record::Login(r) => out.push(ForeignKey::to("staff_id", Table::Staff, r.staff_id)),
            Record::SystemInput(r) => {
                out.push(ForeignKey::to("login_id", Table::Login, r.login_id))
            }
            Record::SystemOutput(r) => {
                out.push(ForeignKey::to("input_id", Table::SystemInput, r.input_id))
            }
            Record::Name(_)
            | Record::CityCountry(_)
            | Record::StartEndDate(_)
            | Record::TypeCode(_) => {}
        }
        out
    }

    /// Declared unique constraints as `(constraint name, key)` pairs.
    pub fn unique_keys(&self) -> Vec<(&'static str, KeyTuple)> {
        match self {
            Record::Staff(r) => vec![("staff.person_id", KeyTuple::of([r.person_id.to_string()]))],
            Record::Association(r) => vec![(
                "association.link",
                KeyTuple::of([
                    r.kind.as_str().to_string(),
                    r.left_id.to_string(),
                    r.right_id.to_string(),
                ]),
            )],
            Record::TypeCode(r) => vec![(
                "type.domain_code",
                KeyTuple::of([r.domain.as_str().to_string(), r.code.clone()]),
            )],
            Record::Login(r) => vec![
                ("login.staff_id", KeyTuple::of([r.staff_id.to_string()])),
                ("login.username", KeyTuple::of([r.username.clone()])),
            ],
            Record::SystemInput(r) => match &r.idempotency_token {
                Some(token) => vec![(
                    "system_input.idempotency_token",
                    KeyTuple::of([token.clone()]),
                )],
                None => vec![],
            },
            _ => vec![],
        }
    }
}

/// Ordered tuple of key components.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KeyTuple(pub Vec<String>);

impl KeyTuple {
    pub fn of<I, S>(parts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        KeyTuple(parts.into_iter().map(Into::into).collect())
    }
}

impl fmt::Display for KeyTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, part) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{part:?}")?;
        }
        write!(f, ")")
    }
}

fn opt_id(id: Option<u64>) -> String {
    id.map(|v| v.to_string()).unwrap_or_default()
}

/// Business identity used for deduplication, independent of the surrogate
/// id. Lookup rows are referenced by id: `Name` rows are shared per text, so
/// `name_id` stands for the name text and `contact_id` for the contact.
pub fn natural_key(record: &Record) -> KeyTuple {
    match record {
        Record::Organisation(r) => KeyTuple::of([r.name_id.to_string()]),
        Record::Person(r) => KeyTuple::of([
            r.org_id.to_string(),
            r.name_id.to_string(),
            opt_id(r.contact_id),
        ]),
        Record::Staff(r) => KeyTuple::of([r.person_id.to_string()]),
        Record::Project(r) => KeyTuple::of([r.org_id.to_string(), r.name_id.to_string()]),
        Record::Product(r) => KeyTuple::of([r.org_id.to_string(), r.name_id.to_string()]),
        Record::Document(r) => KeyTuple::of([r.content_ref.clone()]),
        Record::Association(r) => KeyTuple::of([
            r.kind.as_str().to_string(),
            r.left_id.to_string(),
            r.right_id.to_string(),
        ]),
        Record::Name(r) => KeyTuple::of([r.text.clone()]),
        Record::Contact(r) => contact_key(r),
        Record::CityState(r) => KeyTuple::of([r.country_id.to_string(), r.state_name.clone()]),
        Record::CityCountry(r) => KeyTuple::of([r.country_name.clone()]),
        Record::StartEndDate(r) => KeyTuple::of([
            r.start_ts.to_string(),
            r.end_ts.map(|t| t.to_string()).unwrap_or_default(),
        ]),
        Record::Meeting(r) => KeyTuple::of([r.sed_id.to_string(), r.subject.clone()]),
        Record::Activity(r) => KeyTuple::of([
            r.staff_id.to_string(),
            r.ts.to_string(),
            r.description.clone(),
        ]),
        Record::TypeCode(r) => KeyTuple::of([r.domain.as_str().to_string(), r.code.clone()]),
        Record::Login(r) => KeyTuple::of([r.username.clone()]),
        Record::SystemInput(r) => match &r.idempotency_token {
            Some(token) => KeyTuple::of([token.clone()]),
            None => KeyTuple::of([
                r.login_id.to_string(),
                r.ts.to_string(),
                r.instruction.clone(),
            ]),
        },
        Record::SystemOutput(r) => {
            KeyTuple::of([r.input_id.to_string(), r.ts.to_string(), r.payload.clone()])
        }
    }
}

fn contact_key(c: &Contact) -> KeyTuple {
    if let Some(web) = c.web.as_ref().filter(|w| !w.email.is_empty()) {
        return KeyTuple::of(["email".to_string(), web.email.to_lowercase()]);
    }
    let web = c.web.clone().unwrap_or_default();
    let tel = c.telephone.clone().unwrap_or_default();
    let (city, code, state, country) = match &c.city {
        Some(city) => (
            city.city_name.clone(),
            city.code.clone(),
            opt_id(city.state_id),
            city.country_id.to_string(),
        ),
        None => Default::default(),
    };
    KeyTuple::of([
        "contact".to_string(),
        web.url,
        tel.mobile,
        tel.fax,
        tel.telephone,
        city,
        code,
        state,
        country,
    ])
}

/// A field-level invariant a record failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub relation: Table,
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(relation: Table, field: &str, message: impl Into<String>) -> Self {
        Violation {
            relation,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}: {}", self.relation, self.field, self.message)
    }
}

/// Local part, `@`, then a domain of at least two dot-separated labels.
/// No part may be empty or contain whitespace or a second `@`.
pub fn is_valid_email(s: &str) -> bool {
    let bad = |c: char| c.is_whitespace() || c == '@';
    let Some((local, domain)) = s.split_once('@') else {
        return false;
    };
    if local.is_empty() || local.chars().any(bad) {
        return false;
    }
    let labels: Vec<&str> = domain.split('.').collect();
    labels.len() >= 2 && labels.iter().all(|l| !l.is_empty() && !l.chars().any(bad))
}

/// Checks every field-level invariant of the record's relation.
///
/// Cross-row rules (foreign keys, uniqueness, type-code domains, date
/// ordering against referenced rows) are enforced by the store on write.
/// An empty vector means the record is valid.
pub fn validate_record(record: &Record) -> Vec<Violation> {
    let table = record.table();
    let mut out = Vec::new();
    let mut non_empty = |field: &str, value: &str| {
        if value.trim().is_empty() {
            out.push(Violation::new(
                table,
                field,
                format!("{field} must not be empty"),
            ));
        }
    };
    match record {
        Record::Name(r) => non_empty("text", &r.text),
        Record::CityState(r) => non_empty("state_name", &r.state_name),
        Record::CityCountry(r) => non_empty("country_name", &r.country_name),
        Record::Activity(r) => non_empty("description", &r.description),
        Record::SystemInput(r) => non_empty("instruction", &r.instruction),
        Record::Login(r) => non_empty("username", &r.username),
        _ => {}
    }
    match record {
        Record::CityCountry(r) => {
            if let Some(iso) = &r.iso_code {
                if iso.len() != 2 || !iso.chars().all(|c| c.is_ascii_alphabetic()) {
                    out.push(Violation::new(
                        table,
                        "iso_code",
                        "iso_code must be two letters",
                    ));
                }
            }
        }
        Record::StartEndDate(r) => {
            if matches!(r.end_ts, Some(end) if end < r.start_ts) {
                out.push(Violation::new(table, "end_ts", "end before start"));
            }
        }
        Record::Contact(r) => {
            if r.web.is_none() && r.telephone.is_none() && r.city.is_none() {
                out.push(Violation::new(
                    table,
                    "contact",
                    "at least one of web, telephone or city must be present",
                ));
            }
            if let Some(web) = &r.web {
                if !web.email.is_empty() && !is_valid_email(&web.email) {
                    out.push(Violation::new(
                        table,
                        "web.email",
                        format!("{:?} is not a valid email address", web.email),
                    ));
                }
            }
        }
        Record::Login(r) => {
            if let Err(e) = crate::security::PasswordDigest::parse(&r.password_hash) {
                out.push(Violation::new(table, "password_hash", e.to_string()));
            }
        }
        _ => {}
    }
    out
}
