//! Loadable source shapes: the canonical field vocabulary per target.

use crate::schema::Relation;

/// How a field is normalized and type-checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// Trimmed free text.
    Text,
    /// Trimmed, internal whitespace runs collapsed to one space.
    Name,
    /// Trimmed identifier, compared exactly.
    Code,
    /// Trimmed and lowercased.
    Email,
    /// Calendar date, normalized to `YYYY-MM-DD`.
    Date,
    /// Instant, normalized to `YYYY-MM-DDTHH:MM:SSZ`.
    Timestamp,
    /// Lowercased enumeration value.
    Enum,
    /// Permission set, normalized to a sorted comma list.
    Rights,
    /// Encoded password digest.
    Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: &'static str,
    pub kind: FieldKind,
    pub required: bool,
}

const fn req(name: &'static str, kind: FieldKind) -> FieldSpec {
    FieldSpec {
        name,
        kind,
        required: true,
    }
}

const fn opt(name: &'static str, kind: FieldKind) -> FieldSpec {
    FieldSpec {
        name,
        kind,
        required: false,
    }
}

#[derive(Debug)]
pub struct Shape {
    pub target: Relation,
    pub fields: &'static [FieldSpec],
    /// Fields forming the natural key; rows with equal keys are merged.
    pub key: &'static [&'static str],
    /// Fields that may not change once set.
    pub immutable: &'static [&'static str],
}

impl Shape {
    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn required(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.required)
    }
}

use FieldKind::*;

macro_rules! with_contact {
    ($($f:expr),* $(,)?) => {
        &[
            $($f,)*
            opt("email", Email),
            opt("url", Text),
            opt("mobile", Text),
            opt("fax", Text),
            opt("telephone", Text),
            opt("city", Name),
            opt("city_code", Text),
            opt("state", Name),
            opt("country", Name),
        ]
    };
}

pub const CONTACT_FIELDS: [&str; 9] = [
    "email",
    "url",
    "mobile",
    "fax",
    "telephone",
    "city",
    "city_code",
    "state",
    "country",
];

static TYPE: Shape = Shape {
    target: Relation::Type,
    fields: &[req("domain", Enum), req("code", Code), opt("label", Text)],
    key: &["domain", "code"],
    immutable: &["domain", "code"],
};

static ORGANISATION: Shape = Shape {
    target: Relation::Organisation,
    fields: with_contact![req("name", Name), req("type", Code)],
    key: &["name"],
    immutable: &["name"],
};

static STAFF: Shape = Shape {
    target: Relation::Staff,
    fields: with_contact![
        req("username", Code),
        req("password_hash", Digest),
        req("name", Name),
        req("org", Name),
        opt("role", Text),
        opt("responsibilities", Text),
        opt("group", Text),
        opt("rights", Rights),
    ],
    key: &["username"],
    immutable: &["username", "password_hash"],
};

static PROJECT: Shape = Shape {
    target: Relation::Project,
    fields: &[
        req("name", Name),
        req("org", Name),
        req("type", Code),
        req("owner", Code),
        opt("category", Text),
        req("state", Enum),
        opt("status", Text),
        req("start", Timestamp),
        opt("end", Timestamp),
        opt("deadline", Date),
    ],
    key: &["org", "name"],
    immutable: &["org", "name"],
};

static PRODUCT: Shape = Shape {
    target: Relation::Product,
    fields: &[
        req("name", Name),
        req("org", Name),
        req("type", Code),
        opt("project", Name),
        opt("release_date", Date),
        opt("notes", Text),
    ],
    key: &["org", "name"],
    immutable: &["org", "name"],
};

static DOCUMENT: Shape = Shape {
    target: Relation::Document,
    fields: &[
        req("content_ref", Code),
        req("title", Name),
        req("type", Code),
        req("created", Timestamp),
        opt("org", Name),
        opt("project", Name),
        opt("owner", Code),
    ],
    key: &["content_ref"],
    immutable: &["content_ref"],
};

static PROJECT_TEAM: Shape = Shape {
    target: Relation::ProjectTeam,
    fields: &[
        req("org", Name),
        req("project", Name),
        req("username", Code),
        opt("role_note", Text),
    ],
    key: &["org", "project", "username"],
    immutable: &["org", "project", "username"],
};

static MEETING: Shape = Shape {
    target: Relation::Meeting,
    fields: &[
        req("subject", Name),
        req("start", Timestamp),
        opt("end", Timestamp),
        opt("org", Name),
        opt("project", Name),
    ],
    key: &["subject", "start"],
    immutable: &["subject", "start"],
};

/// Relations a source can load into.
pub const TARGETS: [Relation; 8] = [
    Relation::Type,
    Relation::Organisation,
    Relation::Staff,
    Relation::Project,
    Relation::Product,
    Relation::Document,
    Relation::ProjectTeam,
    Relation::Meeting,
];

pub fn shape(target: Relation) -> Option<&'static Shape> {
    Some(match target {
        Relation::Type => &TYPE,
        Relation::Organisation => &ORGANISATION,
        Relation::Staff => &STAFF,
        Relation::Project => &PROJECT,
        Relation::Product => &PRODUCT,
        Relation::Document => &DOCUMENT,
        Relation::ProjectTeam => &PROJECT_TEAM,
        Relation::Meeting => &MEETING,
        _ => return None,
    })
}
