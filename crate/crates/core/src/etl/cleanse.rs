//! Field mapping and string normalization.

use std::collections::BTreeMap;

use chrono::NaiveDate;

use super::shapes::FieldKind;
use super::{CleanBatch, Quarantined, RawBatch, SourceDescriptor, Stage, StageCounts, Staged};
use crate::clock::Timestamp;

/// Renames columns through the source's field map, normalizes every value
/// by field kind, and quarantines rows with an empty required field.
pub fn cleanse(batch: RawBatch, source: &SourceDescriptor) -> (CleanBatch, Vec<Quarantined>) {
    let shape = source.shape();
    let mut rows = Vec::with_capacity(batch.rows.len());
    let mut quarantine = Vec::new();
    let input = batch.rows.len();
    for raw in batch.rows {
        let mut fields = BTreeMap::new();
        for (column, value) in &raw.fields {
            let Some(field) = source.field_map.get(column.trim()) else {
                continue;
            };
            let Some(spec) = shape.field(field) else {
                continue;
            };
            fields.insert(field.clone(), normalize(spec.kind, value));
        }
        let missing: Vec<&str> = shape
            .required()
            .filter(|f| fields.get(f.name).is_none_or(|v| v.is_empty()))
            .map(|f| f.name)
            .collect();
        if !missing.is_empty() {
            quarantine.push(Quarantined {
                source_id: batch.source_id.clone(),
                stage: Stage::Cleanse,
                line: raw.line,
                reason: missing_reason(&missing),
                row: raw.fields,
            });
            continue;
        }
        rows.push(Staged {
            lines: vec![raw.line],
            fields,
        });
    }
    let counts = StageCounts::new(Stage::Cleanse, input, rows.len(), quarantine.len());
    let clean = CleanBatch {
        source_id: batch.source_id,
        target: shape.target,
        extracted_at: batch.extracted_at,
        rows,
        counts,
    };
    (clean, quarantine)
}

fn missing_reason(missing: &[&str]) -> String {
    match missing {
        [one] => format!("missing required field {one}"),
        many => format!("missing required fields {}", many.join(", ")),
    }
}

pub fn normalize(kind: FieldKind, value: &str) -> String {
    let trimmed = value.trim();
    match kind {
        FieldKind::Text | FieldKind::Code | FieldKind::Digest => trimmed.to_string(),
        FieldKind::Name => collapse_whitespace(trimmed),
        FieldKind::Email => trimmed.to_lowercase(),
        FieldKind::Enum => trimmed.to_lowercase().replace([' ', '-'], "_"),
        FieldKind::Date => normalize_date(trimmed).unwrap_or_else(|| trimmed.to_string()),
        FieldKind::Timestamp => normalize_timestamp(trimmed).unwrap_or_else(|| trimmed.to_string()),
        FieldKind::Rights => {
            let mut parts: Vec<String> = trimmed
                .split(|c: char| c == ',' || c == ';' || c == '|' || c.is_whitespace())
                .filter(|p| !p.is_empty())
                .map(str::to_lowercase)
                .collect();
            parts.sort();
            parts.dedup();
            parts.join(",")
        }
    }
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const DATE_FORMATS: [&str; 10] = [
    "%Y-%m-%d",
    "%Y/%m/%d",
    "%d %B %Y",
    "%d %b %Y",
    "%B %d, %Y",
    "%b %d, %Y",
    "%B %d %Y",
    "%d.%m.%Y",
    "%d/%m/%Y",
    "%Y%m%d",
];

/// Parses the accepted date spellings. Slash dates with the year last are
/// day-first (`08/10/2002` is 8 October).
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = collapse_whitespace(s);
    DATE_FORMATS
        .iter()
        .find_map(|f| NaiveDate::parse_from_str(&s, f).ok())
}

pub fn normalize_date(s: &str) -> Option<String> {
    if s.is_empty() {
        return Some(String::new());
    }
    parse_date(s).map(|d| d.format("%Y-%m-%d").to_string())
}

pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    Timestamp::parse_lenient(s).or_else(|| {
        let date = parse_date(s)?;
        Some(Timestamp::from_unix(
            date.and_hms_opt(0, 0, 0)?.and_utc().timestamp(),
        ))
    })
}

pub fn normalize_timestamp(s: &str) -> Option<String> {
    if s.is_empty() {
        return Some(String::new());
    }
    parse_timestamp(s).map(|t| t.to_string())
}
