//! Read-only reporting views: flat project rows and per-entity rollups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::schema::*;
use crate::store::Warehouse;

/// One project with its lookups resolved to display text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectRow {
    pub project_id: u64,
    pub project: String,
    pub organisation: String,
    pub org_email: String,
    pub r#type: String,
    pub owner: String,
    pub category: String,
    pub state: String,
    pub status: String,
    pub start: String,
    pub end: String,
    pub deadline: String,
}

impl ProjectRow {
    pub const COLUMNS: [&'static str; 12] = [
        "project_id",
        "project",
        "organisation",
        "org_email",
        "type",
        "owner",
        "category",
        "state",
        "status",
        "start",
        "end",
        "deadline",
    ];

    pub fn cells(&self) -> Vec<String> {
        vec![
            self.project_id.to_string(),
            self.project.clone(),
            self.organisation.clone(),
            self.org_email.clone(),
            self.r#type.clone(),
            self.owner.clone(),
            self.category.clone(),
            self.state.clone(),
            self.status.clone(),
            self.start.clone(),
            self.end.clone(),
            self.deadline.clone(),
        ]
    }
}

fn name_of(w: &Warehouse, id: u64) -> String {
    w.row::<Name>(id)
        .map(|n| n.text.clone())
        .unwrap_or_default()
}

/// One row per project, in project-id order. Missing optional values are
/// empty strings.
pub fn denormalize(w: &Warehouse) -> Vec<ProjectRow> {
    w.rows::<Project>()
        .map(|p| {
            let org = w.row::<Organisation>(p.org_id);
            let org_email = org
                .and_then(|o| o.contact_id)
                .and_then(|c| w.row::<Contact>(c))
                .and_then(|c| c.web.as_ref())
                .map(|web| web.email.clone())
                .unwrap_or_default();
            let owner = w
                .row::<Staff>(p.owner_staff_id)
                .and_then(|s| w.row::<Person>(s.person_id))
                .map(|person| name_of(w, person.name_id))
                .unwrap_or_default();
            let sed = w.row::<StartEndDate>(p.sed_id);
            ProjectRow {
                project_id: p.project_id,
                project: name_of(w, p.name_id),
                organisation: org.map(|o| name_of(w, o.name_id)).unwrap_or_default(),
                org_email,
                r#type: w
                    .row::<TypeCode>(p.type_id)
                    .map(|t| t.label.clone())
                    .unwrap_or_default(),
                owner,
                category: p.category.clone(),
                state: p.state.as_str().to_string(),
                status: p.status.clone(),
                start: sed.map(|s| s.start_ts.to_string()).unwrap_or_default(),
                end: sed
                    .and_then(|s| s.end_ts)
                    .map(|t| t.to_string())
                    .unwrap_or_default(),
                deadline: p.deadline.map(|d| d.to_string()).unwrap_or_default(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    DocumentCount,
    TeamSize,
    MeetingCount,
    ActivityCount,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::DocumentCount => "document_count",
            Metric::TeamSize => "team_size",
            Metric::MeetingCount => "meeting_count",
            Metric::ActivityCount => "activity_count",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// `project` or `staff`.
    pub entity: String,
    pub id: u64,
    pub label: String,
    pub metric: Metric,
    pub value: u64,
}

impl AggregateRow {
    pub const COLUMNS: [&'static str; 5] = ["entity", "id", "label", "metric", "value"];

    pub fn cells(&self) -> Vec<String> {
        vec![
            self.entity.clone(),
            self.id.to_string(),
            self.label.clone(),
            self.metric.as_str().to_string(),
            self.value.to_string(),
        ]
    }
}

/// Per-project document, team and meeting counts, then per-staff activity
/// counts. Projects and staff appear in id order, zeros included.
pub fn aggregate(w: &Warehouse) -> Vec<AggregateRow> {
    let mut per_project: BTreeMap<(u64, Metric), u64> = BTreeMap::new();
    for a in w.rows::<Association>() {
        let metric = match a.kind {
            AssociationKind::ProjectDocument => Metric::DocumentCount,
            AssociationKind::ProjectTeam => Metric::TeamSize,
            _ => continue,
        };
        *per_project.entry((a.left_id, metric)).or_default() += 1;
    }
    for m in w.rows::<Meeting>() {
        if let Some(p) = m.project_id {
            *per_project.entry((p, Metric::MeetingCount)).or_default() += 1;
        }
    }
    let mut per_staff: BTreeMap<u64, u64> = BTreeMap::new();
    for a in w.rows::<Activity>() {
        *per_staff.entry(a.staff_id).or_default() += 1;
    }

    let mut out = Vec::new();
    for p in w.rows::<Project>() {
        let label = name_of(w, p.name_id);
        for metric in [
            Metric::DocumentCount,
            Metric::TeamSize,
            Metric::MeetingCount,
        ] {
            out.push(AggregateRow {
                entity: "project".into(),
                id: p.project_id,
                label: label.clone(),
                metric,
                value: per_project
                    .get(&(p.project_id, metric))
                    .copied()
                    .unwrap_or(0),
            });
        }
    }
    for s in w.rows::<Staff>() {
        let label = w
            .row::<Person>(s.person_id)
            .map(|p| name_of(w, p.name_id))
            .unwrap_or_default();
        out.push(AggregateRow {
            entity: "staff".into(),
            id: s.staff_id,
            label,
            metric: Metric::ActivityCount,
            value: per_staff.get(&s.staff_id).copied().unwrap_or(0),
        });
    }
    out
}
