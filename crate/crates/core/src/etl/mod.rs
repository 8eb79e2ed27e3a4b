//! Staged batch pipeline: extract, cleanse, convert, integrate, load.
//!
//! Each source runs through all five stages. The first three are pure and
//! run per source on worker threads; integration and loading touch the
//! warehouse and run serially in source order. A source whose load fails
//! leaves the warehouse untouched and its watermark unchanged.

mod cleanse;
mod convert;
mod extract;
mod integrate;
mod load;
pub mod report;
mod shapes;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::schema::{Activity, Relation};
use crate::store::{StoreError, Warehouse};

pub use cleanse::{cleanse, collapse_whitespace, normalize, normalize_date, parse_date};
pub use convert::convert;
pub use extract::{csv_rows, extract, json_rows, parse_csv};
pub use integrate::{integrate, Action, Fields, Integration, Plan};
pub use load::load;
pub use shapes::{shape, FieldKind, FieldSpec, Shape, CONTACT_FIELDS, TARGETS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Csv,
    JsonLines,
}

impl SourceFormat {
    /// Guesses from the file extension; anything but `.jsonl`/`.ndjson` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson") => SourceFormat::JsonLines,
            _ => SourceFormat::Csv,
        }
    }
}

/// Where a batch comes from and how its columns map onto a target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDescriptor {
    pub source_id: String,
    pub format: SourceFormat,
    pub location: PathBuf,
    pub target: Relation,
    /// Source column to target field.
    pub field_map: BTreeMap<String, String>,
    /// Data rows already consumed.
    pub watermark: u64,
}

impl SourceDescriptor {
    /// Identity field map over every field the target accepts.
    pub fn new(
        source_id: impl Into<String>,
        format: SourceFormat,
        location: impl Into<PathBuf>,
        target: Relation,
    ) -> Self {
        let field_map = shape(target)
            .map(|s| {
                s.fields
                    .iter()
                    .map(|f| (f.name.to_string(), f.name.to_string()))
                    .collect()
            })
            .unwrap_or_default();
        SourceDescriptor {
            source_id: source_id.into(),
            format,
            location: location.into(),
            target,
            field_map,
            watermark: 0,
        }
    }

    /// Panics for a target that is not loadable; call [`validate`](Self::validate) first.
    pub fn shape(&self) -> &'static Shape {
        shape(self.target).expect("source target is loadable")
    }

    pub fn validate(&self) -> Result<(), EtlError> {
        let invalid = |detail: String| EtlError::InvalidSource {
            source_id: self.source_id.clone(),
            detail,
        };
        if self.source_id.trim().is_empty() {
            return Err(invalid("empty source id".into()));
        }
        let Some(shape) = shape(self.target) else {
            return Err(invalid(format!("{} is not a loadable target", self.target)));
        };
        for field in self.field_map.values() {
            if shape.field(field).is_none() {
                return Err(invalid(format!("{} has no field {field:?}", self.target)));
            }
        }
        let mut targets: Vec<&String> = self.field_map.values().collect();
        targets.sort();
        if let Some(w) = targets.windows(2).find(|w| w[0] == w[1]) {
            return Err(invalid(format!("field {:?} is mapped twice", w[0])));
        }
        let unmapped: Vec<&str> = shape
            .required()
            .map(|f| f.name)
            .filter(|f| !self.field_map.values().any(|v| v == f))
            .collect();
        if !unmapped.is_empty() {
            return Err(invalid(format!(
                "required fields not mapped: {}",
                unmapped.join(", ")
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRow {
    /// 1-based physical line where the record starts.
    pub line: usize,
    pub fields: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RawBatch {
    pub source_id: String,
    pub rows: Vec<RawRow>,
    pub extracted_at: Timestamp,
    pub watermark_before: u64,
    pub watermark_after: u64,
}

/// A row between stages, keyed by target field name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Staged {
    pub lines: Vec<usize>,
    pub fields: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct CleanBatch {
    pub source_id: String,
    pub target: Relation,
    pub extracted_at: Timestamp,
    pub rows: Vec<Staged>,
    pub counts: StageCounts,
}

#[derive(Debug, Clone)]
pub struct ConvertedBatch {
    pub source_id: String,
    pub target: Relation,
    pub extracted_at: Timestamp,
    pub rows: Vec<Staged>,
    pub counts: StageCounts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Extract,
    Cleanse,
    Convert,
    Integrate,
    Load,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Cleanse => "cleanse",
            Stage::Convert => "convert",
            Stage::Integrate => "integrate",
            Stage::Load => "load",
        }
    }
}

/// Row accounting for one stage. `merged` counts passed rows folded into
/// another row with the same key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub stage: Stage,
    pub input: usize,
    pub passed: usize,
    pub quarantined: usize,
    pub merged: usize,
}

impl StageCounts {
    pub fn new(stage: Stage, input: usize, passed: usize, quarantined: usize) -> Self {
        StageCounts {
            stage,
            input,
            passed,
            quarantined,
            merged: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quarantined {
    pub source_id: String,
    pub stage: Stage,
    pub line: usize,
    pub reason: String,
    pub row: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldChange {
    pub key: String,
    pub field: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub source_id: String,
    pub target: Relation,
    pub cycle_number: u64,
    pub stages: Vec<StageCounts>,
    pub quarantine: Vec<Quarantined>,
    pub loaded_ids: Vec<u64>,
    pub inserted: usize,
    pub updated: usize,
    pub unchanged: usize,
    pub changed_fields: Vec<FieldChange>,
    pub watermark: u64,
}

impl LoadReport {
    pub fn stage(&self, stage: Stage) -> Option<&StageCounts> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn changed(&self) -> bool {
        self.inserted + self.updated > 0
    }

    /// Checks that every row is accounted for: each stage's input splits
    /// into passed and quarantined, each stage consumes what the previous
    /// one passed, and the quarantine list matches the per-stage totals.
    pub fn ledger_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for s in &self.stages {
            if s.input != s.passed + s.quarantined {
                problems.push(format!(
                    "{}: input {} != passed {} + quarantined {}",
                    s.stage.as_str(),
                    s.input,
                    s.passed,
                    s.quarantined
                ));
            }
            let listed = self
                .quarantine
                .iter()
                .filter(|q| q.stage == s.stage)
                .count();
            if listed != s.quarantined {
                problems.push(format!(
                    "{}: {listed} quarantine entries for {}",
                    s.stage.as_str(),
                    s.quarantined
                ));
            }
        }
        for w in self.stages.windows(2) {
            if w[1].input != w[0].passed {
                problems.push(format!(
                    "{} input {} != {} passed {}",
                    w[1].stage.as_str(),
                    w[1].input,
                    w[0].stage.as_str(),
                    w[0].passed
                ));
            }
        }
        problems
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EtlError {
    #[error("source {source_id} unreadable: {detail}")]
    SourceUnreadable { source_id: String, detail: String },
    #[error("parse error at line {line}: {detail}")]
    ParseError { line: usize, detail: String },
    #[error("invalid source {source_id}: {detail}")]
    InvalidSource { source_id: String, detail: String },
    #[error("merge conflict on {key}: field {field} is {existing:?}, incoming {incoming:?}")]
    MergeConflict {
        key: String,
        field: String,
        existing: String,
        incoming: String,
    },
    #[error("load of {source_id} aborted{}: {cause}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    LoadAborted {
        source_id: String,
        line: Option<usize>,
        cause: String,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineContext {
    pub cycle_number: u64,
    pub now: Timestamp,
    /// Staff credited with the run's audit activity.
    pub actor: Option<u64>,
}

#[derive(Debug)]
pub struct PipelineRun {
    pub cycle_number: u64,
    pub results: Vec<(String, Result<LoadReport, EtlError>)>,
    pub audit_activity: Option<u64>,
}

impl PipelineRun {
    pub fn reports(&self) -> impl Iterator<Item = &LoadReport> {
        self.results.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (&str, &EtlError)> {
        self.results
            .iter()
            .filter_map(|(id, r)| r.as_ref().err().map(|e| (id.as_str(), e)))
    }

    pub fn changed(&self) -> bool {
        self.reports().any(LoadReport::changed)
    }
}

struct Prepared {
    watermark_before: u64,
    watermark_after: u64,
    stages: Vec<StageCounts>,
    converted: ConvertedBatch,
    quarantine: Vec<Quarantined>,
}

fn stage_batch(raw: RawBatch, source: &SourceDescriptor) -> Prepared {
    let (watermark_before, watermark_after) = (raw.watermark_before, raw.watermark_after);
    let n = raw.rows.len();
    let (clean, mut quarantine) = cleanse(raw, source);
    let cleanse_counts = clean.counts;
    let (converted, q) = convert(clean);
    quarantine.extend(q);
    let stages = vec![
        StageCounts::new(Stage::Extract, n, n, 0),
        cleanse_counts,
        converted.counts,
    ];
    Prepared {
        watermark_before,
        watermark_after,
        stages,
        converted,
        quarantine,
    }
}

fn prepare(source: &mut SourceDescriptor, at: Timestamp) -> Result<Prepared, EtlError> {
    source.validate()?;
    let raw = extract(source, at)?;
    Ok(stage_batch(raw, source))
}

fn finish(
    p: Prepared,
    warehouse: &mut Warehouse,
    cycle_number: u64,
) -> Result<LoadReport, EtlError> {
    let Prepared {
        watermark_after,
        stages,
        converted,
        mut quarantine,
        ..
    } = p;
    let (integration, q) = integrate(converted, warehouse)?;
    quarantine.extend(q);
    let mut report = load(warehouse, integration, cycle_number)?;
    let mut all = stages;
    all.append(&mut report.stages);
    report.stages = all;
    quarantine.sort_by_key(|q| q.line);
    report.quarantine = quarantine;
    report.watermark = watermark_after;
    Ok(report)
}

/// Runs in-memory rows, keyed by target field name, through the same
/// stages as a file source. Row `i` is reported as line `i + 1`.
pub fn load_rows(
    warehouse: &mut Warehouse,
    target: Relation,
    rows: Vec<BTreeMap<String, String>>,
    at: Timestamp,
    cycle_number: u64,
) -> Result<LoadReport, EtlError> {
    let source = SourceDescriptor::new("direct", SourceFormat::JsonLines, PathBuf::new(), target);
    source.validate()?;
    let n = rows.len() as u64;
    let raw = RawBatch {
        source_id: source.source_id.clone(),
        rows: rows
            .into_iter()
            .enumerate()
            .map(|(i, fields)| RawRow {
                line: i + 1,
                fields,
            })
            .collect(),
        extracted_at: at,
        watermark_before: 0,
        watermark_after: n,
    };
    finish(stage_batch(raw, &source), warehouse, cycle_number)
}

/// Runs every source through the pipeline. Sources fail independently;
/// a failed source keeps its old watermark so the next run retries it.
pub fn run_pipeline(
    sources: &mut [SourceDescriptor],
    warehouse: &mut Warehouse,
    ctx: PipelineContext,
) -> PipelineRun {
    let prepared: Vec<Result<Prepared, EtlError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sources
            .iter_mut()
            .map(|source| scope.spawn(move || prepare(source, ctx.now)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("pipeline worker panicked"))
            .collect()
    });

    let mut results = Vec::with_capacity(sources.len());
    for (source, prepared) in sources.iter_mut().zip(prepared) {
        let id = source.source_id.clone();
        let outcome = prepared.and_then(|p| {
            let restore = p.watermark_before;
            finish(p, warehouse, ctx.cycle_number).inspect_err(|_| source.watermark = restore)
        });
        if let Err(e) = &outcome {
            tracing::warn!(source = %id, error = %e, "source failed");
        }
        results.push((id, outcome));
    }

    let mut run = PipelineRun {
        cycle_number: ctx.cycle_number,
        results,
        audit_activity: None,
    };
    if let (true, Some(actor)) = (run.changed(), ctx.actor) {
        let (inserted, updated) = run
            .reports()
            .fold((0, 0), |(i, u), r| (i + r.inserted, u + r.updated));
        let activity = Activity {
            activity_id: 0,
            project_id: None,
            staff_id: actor,
            description: format!(
                "etl cycle {}: {inserted} inserted, {updated} updated",
                ctx.cycle_number
            ),
            ts: ctx.now,
        };
        match warehouse.put(activity) {
            Ok(id) => run.audit_activity = Some(id),
            Err(e) => tracing::warn!(error = %e, "could not record etl audit activity"),
        }
    }
    run
}

/// Cycle counter and per-source watermarks, kept beside the database.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EtlState {
    pub cycle: u64,
    pub watermarks: BTreeMap<String, u64>,
}

impl EtlState {
    pub const FILE: &'static str = "etl_state.json";

    pub fn load(dir: &Path) -> io::Result<Self> {
        match fs::read(dir.join(Self::FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(io::Error::other),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, dir: &Path) -> io::Result<()> {
        let path = dir.join(Self::FILE);
        let tmp = path.with_extension("json.tmp");
        fs::write(
            &tmp,
            serde_json::to_vec_pretty(self).map_err(io::Error::other)?,
        )?;
        fs::rename(tmp, path)
    }

    pub fn apply_to(&self, sources: &mut [SourceDescriptor]) {
        for s in sources {
            s.watermark = self.watermarks.get(&s.source_id).copied().unwrap_or(0);
        }
    }

    pub fn record(&mut self, sources: &[SourceDescriptor]) {
        for s in sources {
            self.watermarks.insert(s.source_id.clone(), s.watermark);
        }
    }
}

/// Appends quarantined rows to `<dir>/quarantine/<source>.jsonl`.
pub fn write_quarantine(dir: &Path, rows: &[Quarantined]) -> io::Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let qdir = dir.join("quarantine");
    fs::create_dir_all(&qdir)?;
    let mut by_source: BTreeMap<&str, Vec<&Quarantined>> = BTreeMap::new();
    for q in rows {
        by_source.entry(&q.source_id).or_default().push(q);
    }
    for (source, rows) in by_source {
        let safe: String = source
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(qdir.join(format!("{safe}.jsonl")))?;
        for q in rows {
            serde_json::to_writer(&mut f, q).map_err(io::Error::other)?;
            f.write_all(b"\n")?;
        }
    }
    Ok(())
}
