use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use pdm_warehouse::clock::Timestamp;
use pdm_warehouse::config::Config;
use pdm_warehouse::etl::report::{aggregate, Metric};
use pdm_warehouse::etl::{run_pipeline, EtlError, PipelineContext, SourceDescriptor, SourceFormat};
use pdm_warehouse::schema::*;
use pdm_warehouse::security::Permission;
use pdm_warehouse::store::{encode_snapshot, Database, Warehouse};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::common::corpus_src;
use crate::{ensure, Verdict};

const T1: Timestamp = Timestamp::from_unix(1_231_156_800); // 2009-01-05T12:00:00Z

fn ctx(cycle: u64, hours_later: i64, actor: Option<u64>) -> PipelineContext {
    PipelineContext {
        cycle_number: cycle,
        now: Timestamp::from_unix(T1.unix() + hours_later * 3600),
        actor,
    }
}

fn corpus_sources() -> Result<Vec<SourceDescriptor>, String> {
    let config = Config::load(&corpus_src().join("pdmw.toml")).map_err(|e| e.to_string())?;
    Ok(config.default_sources())
}

/// The corpus loaded once into a fresh warehouse.
fn loaded_corpus() -> Result<(Warehouse, Vec<SourceDescriptor>), String> {
    let mut sources = corpus_sources()?;
    let mut w = Warehouse::new();
    let run = run_pipeline(&mut sources, &mut w, ctx(1, 0, None));
    let failures: Vec<String> = run.failures().map(|(s, e)| format!("{s}: {e}")).collect();
    ensure!(failures.is_empty(), "corpus load failed: {failures:?}");
    Ok((w, sources))
}

pub fn idempotence() -> Verdict {
    let (mut w, mut sources) = loaded_corpus()?;
    let first = encode_snapshot(&w);

    // full re-read, later clock, with an actor who would be credited
    for s in sources.iter_mut() {
        s.watermark = 0;
    }
    let run = run_pipeline(&mut sources, &mut w, ctx(2, 5, Some(1)));
    let failures: Vec<String> = run.failures().map(|(s, e)| format!("{s}: {e}")).collect();
    ensure!(failures.is_empty(), "second run failed: {failures:?}");
    let second = encode_snapshot(&w);
    ensure!(first == second, "second full run changed the snapshot");
    let mut rows = 0;
    for r in run.reports() {
        ensure!(
            !r.changed() && r.inserted == 0 && r.updated == 0 && r.changed_fields.is_empty(),
            "{}: inserted {} updated {} changed {:?}",
            r.source_id,
            r.inserted,
            r.updated,
            r.changed_fields
        );
        rows += r.unchanged;
    }
    ensure!(run.audit_activity.is_none(), "no-op run wrote an audit row");

    // incremental run with nothing new
    let run = run_pipeline(&mut sources, &mut w, ctx(3, 6, Some(1)));
    ensure!(!run.changed(), "incremental rerun reported changes");
    ensure!(
        encode_snapshot(&w) == first,
        "incremental rerun changed the snapshot"
    );
    Ok(format!(
        "{} sources, {rows} rows unchanged, {} snapshot bytes identical",
        sources.len(),
        first.len()
    ))
}

// ---------------------------------------------------------------------------
// Stage ledger over generated dirty input.

const ORGS: [&str; 2] = ["TU Wien", "Acme Engineering"];
const OWNERS: [&str; 3] = ["zahmed", "dgerhard", "mkhan"];

fn spell_date(rng: &mut StdRng, d: NaiveDate) -> String {
    match rng.random_range(0..5) {
        0 => d.format("%Y-%m-%d").to_string(),
        1 => d.format("%d.%m.%Y").to_string(),
        2 => d.format("%d %B %Y").to_string(),
        3 => d.format("%Y/%m/%d").to_string(),
        _ => format!("  {}  ", d.format("%Y-%m-%d")),
    }
}

/// One project row and whether it carries a defect that must quarantine it.
fn project_row(rng: &mut StdRng, i: usize) -> (Vec<String>, bool) {
    let start =
        NaiveDate::from_ymd_opt(2008, 1, 1).unwrap() + chrono::Days::new(rng.random_range(0..700));
    let deadline = start + chrono::Days::new(rng.random_range(0..400));
    let mut row: Vec<String> = vec![
        format!("gen-{i}"),
        ORGS[rng.random_range(0..2)].into(),
        ["RES", "DEV"][rng.random_range(0..2)].into(),
        OWNERS[rng.random_range(0..3)].into(),
        "generated".into(),
        ["active", "Planned", " SUSPENDED ", "closed"][rng.random_range(0..4)].into(),
        String::new(),
        spell_date(rng, start),
        String::new(),
        if rng.random_bool(0.5) {
            spell_date(rng, deadline)
        } else {
            String::new()
        },
    ];
    if rng.random_bool(0.3) {
        row[0] = format!("  gen-{i} ");
    }
    if !rng.random_bool(0.4) {
        return (row, false);
    }
    match rng.random_range(0..9) {
        0 => row[0] = "   ".into(),
        1 => row[7] = String::new(),
        2 => row[7] = "2008-13-45".into(),
        3 => row[5] = "exploded".into(),
        4 => row[3] = "ghost".into(),
        5 => row[1] = "Nowhere Inc".into(),
        6 => row[2] = "SW".into(),
        7 => {
            let before = start - chrono::Days::new(rng.random_range(1..100));
            row[9] = before.format("%Y-%m-%d").to_string();
        }
        _ => {
            let before = start - chrono::Days::new(rng.random_range(1..100));
            row[8] = before.format("%Y-%m-%d").to_string();
        }
    }
    (row, true)
}

fn meeting_row(rng: &mut StdRng, i: usize) -> (Vec<String>, bool) {
    let start = 1_220_000_000 + rng.random_range(0..10_000_000i64);
    let ts = |s: i64| Timestamp::from_unix(s).to_string();
    let (org, project) =
        [("TU Wien", "I-SOAS"), ("Acme Engineering", "Gearbox PLM")][rng.random_range(0..2)];
    let mut row: Vec<String> = vec![
        format!("meeting {i}"),
        ts(start),
        if rng.random_bool(0.5) {
            ts(start + 3600)
        } else {
            String::new()
        },
        org.into(),
        project.into(),
    ];
    if !rng.random_bool(0.4) {
        return (row, false);
    }
    match rng.random_range(0..4) {
        0 => row[0] = String::new(),
        1 => row[2] = ts(start - 60),
        2 => row[4] = "Unknown Project".into(),
        _ => row[1] = "yesterday".into(),
    }
    (row, true)
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<(), String> {
    let mut body = String::from(header);
    body.push('\n');
    for r in rows {
        body.push_str(&r.join(","));
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| e.to_string())
}

pub fn stage_ledger() -> Verdict {
    const ROWS: usize = 700;
    let (mut w, _) = loaded_corpus()?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = StdRng::seed_from_u64(0xd1_27);

    let mut expected: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    let mut total = 0;
    let mut sources = Vec::new();
    for (id, target, header) in [
        (
            "gen-projects",
            Relation::Project,
            "name,org,type,owner,category,state,status,start,end,deadline",
        ),
        (
            "gen-meetings",
            Relation::Meeting,
            "subject,start,end,org,project",
        ),
    ] {
        let mut rows = Vec::new();
        let bad = expected.entry(id).or_default();
        for i in 0..ROWS {
            let (row, defective) = match target {
                Relation::Project => project_row(&mut rng, i),
                _ => meeting_row(&mut rng, i),
            };
            // header is line 1
            if defective {
                bad.insert(rows.len() + 2);
            }
            rows.push(row);
            // exact repeats of clean rows merge rather than quarantine
            if !defective && rng.random_bool(0.05) {
                rows.push(rows.last().unwrap().clone());
            }
        }
        total += rows.len();
        let path = dir.path().join(format!("{id}.csv"));
        write_csv(&path, header, &rows)?;
        sources.push(SourceDescriptor::new(id, SourceFormat::Csv, path, target));
    }

    let run = run_pipeline(&mut sources, &mut w, ctx(2, 1, None));
    let failures: Vec<String> = run.failures().map(|(s, e)| format!("{s}: {e}")).collect();
    ensure!(
        failures.is_empty(),
        "generated sources failed: {failures:?}"
    );
    let mut quarantined = 0;
    let mut merged = 0;
    for r in run.reports() {
        let problems = r.ledger_problems();
        ensure!(problems.is_empty(), "{}: {problems:?}", r.source_id);
        // independent restatement of the ledger rule
        for s in &r.stages {
            ensure!(
                s.input == s.passed + s.quarantined,
                "{} {}: {} != {} + {}",
                r.source_id,
                s.stage.as_str(),
                s.input,
                s.passed,
                s.quarantined
            );
            merged += s.merged;
        }
        for pair in r.stages.windows(2) {
            ensure!(
                pair[1].input == pair[0].passed,
                "{}: {} does not feed {}",
                r.source_id,
                pair[0].stage.as_str(),
                pair[1].stage.as_str()
            );
        }
        ensure!(
            r.quarantine.iter().all(|q| !q.reason.trim().is_empty()),
            "{}: empty quarantine reason",
            r.source_id
        );
        let got: BTreeSet<usize> = r.quarantine.iter().map(|q| q.line).collect();
        let want = &expected[r.source_id.as_str()];
        let missed: Vec<_> = want.difference(&got).collect();
        let extra: Vec<_> = got.difference(want).collect();
        ensure!(
            missed.is_empty() && extra.is_empty(),
            "{}: defects not quarantined at lines {missed:?}, clean rows quarantined at {extra:?}",
            r.source_id
        );
        quarantined += r.quarantine.len();
    }
    ensure!(total >= 1000, "only {total} rows generated");
    Ok(format!(
        "{total} rows, {quarantined} quarantined exactly at the injected defects, {merged} merged"
    ))
}

// ---------------------------------------------------------------------------

pub fn load_atomicity() -> Verdict {
    let (w, mut sources) = loaded_corpus()?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut db = Database::create(&dir.path().join("wh")).map_err(|e| e.to_string())?;
    *db.warehouse_mut() = w;
    db.checkpoint().map_err(|e| e.to_string())?;
    let files = |d: &Path| -> Vec<Vec<u8>> {
        ["warehouse.snap", "warehouse.journal"]
            .iter()
            .map(|f| std::fs::read(d.join("wh").join(f)).unwrap_or_default())
            .collect()
    };
    let on_disk = files(dir.path());
    let hash = db.warehouse().state_hash();

    let projects = sources
        .iter()
        .position(|s| s.source_id == "projects")
        .ok_or("corpus has no projects source")?;
    let mut source = sources.remove(projects);
    source.location = dir.path().join("batch.csv");
    source.watermark = 0;
    let mut rng = StdRng::seed_from_u64(0xa70);
    let trials = 20;
    for trial in 0..trials {
        let size = rng.random_range(2..40);
        let poison_at = rng.random_range(0..size);
        let mut rows = Vec::new();
        for i in 0..size {
            if i == poison_at {
                // moves the start past the deadline already stored for it
                rows.push(
                    "I-SOAS,TU Wien,RES,zahmed,,active,,2010-01-01,,"
                        .split(',')
                        .map(String::from)
                        .collect(),
                );
            } else {
                rows.push(vec![
                    format!("batch-{trial}-{i}"),
                    "TU Wien".into(),
                    "RES".into(),
                    "zahmed".into(),
                    String::new(),
                    "planned".into(),
                    String::new(),
                    "2009-02-01".into(),
                    String::new(),
                    String::new(),
                ]);
            }
        }
        write_csv(
            &source.location,
            "name,org,type,owner,category,state,status,start,end,deadline",
            &rows,
        )?;
        let mut one = vec![source.clone()];
        let run = run_pipeline(&mut one, db.warehouse_mut(), ctx(2 + trial, 1, Some(1)));
        match &run.results[0].1 {
            Err(EtlError::LoadAborted { line, .. }) => ensure!(
                *line == Some(poison_at as usize + 2),
                "trial {trial}: abort blamed line {line:?}, poison at {}",
                poison_at + 2
            ),
            other => return Err(format!("trial {trial}: expected abort, got {other:?}")),
        }
        ensure!(one[0].watermark == 0, "trial {trial}: watermark moved");
        ensure!(
            run.audit_activity.is_none(),
            "trial {trial}: audit row written"
        );
        ensure!(
            db.warehouse().state_hash() == hash,
            "trial {trial}: state hash changed"
        );
        db.commit().map_err(|e| e.to_string())?;
    }
    ensure!(
        files(dir.path()) == on_disk,
        "snapshot or journal bytes changed"
    );
    Ok(format!(
        "{trials} poisoned batches aborted, state hash {} unchanged",
        hex::encode(&hash[..6])
    ))
}

// ---------------------------------------------------------------------------

fn put<R: Into<Record>>(w: &mut Warehouse, r: R) -> u64 {
    w.put(r).expect("generator writes valid rows")
}

fn random_warehouse(rng: &mut StdRng) -> Warehouse {
    let mut w = Warehouse::new();
    let ty = |w: &mut Warehouse, domain, code: &str| {
        put(
            w,
            TypeCode {
                type_id: 0,
                domain,
                code: code.into(),
                label: String::new(),
            },
        )
    };
    let org_t = ty(&mut w, TypeDomain::Organization, "O");
    let proj_t = ty(&mut w, TypeDomain::Project, "P");
    let doc_t = ty(&mut w, TypeDomain::Document, "D");
    let name = |w: &mut Warehouse, text: String| put(w, Name { name_id: 0, text });
    let org_name = name(&mut w, "org".into());
    let org = put(
        &mut w,
        Organisation {
            org_id: 0,
            name_id: org_name,
            type_id: org_t,
            contact_id: None,
        },
    );
    let t0 = Timestamp::from_unix(1_220_000_000);
    let mut staff = Vec::new();
    for i in 0..rng.random_range(1..6) {
        let n = name(&mut w, format!("person {i}"));
        let person = put(
            &mut w,
            Person {
                person_id: 0,
                name_id: n,
                contact_id: None,
                org_id: org,
            },
        );
        staff.push(put(
            &mut w,
            Staff {
                staff_id: 0,
                person_id: person,
                role: String::new(),
                responsibilities: String::new(),
                group_name: String::new(),
                rights: BTreeSet::from([Permission::ReadProject]),
            },
        ));
    }
    let mut projects = Vec::new();
    for i in 0..rng.random_range(0..10) {
        let n = name(&mut w, format!("project {i}"));
        let sed = put(
            &mut w,
            StartEndDate {
                sed_id: 0,
                start_ts: t0,
                end_ts: None,
            },
        );
        projects.push(put(
            &mut w,
            Project {
                project_id: 0,
                name_id: n,
                org_id: org,
                type_id: proj_t,
                sed_id: sed,
                owner_staff_id: staff[rng.random_range(0..staff.len())],
                category: String::new(),
                state: ProjectState::Active,
                status: String::new(),
                deadline: None,
            },
        ));
    }
    let docs: Vec<u64> = (0..rng.random_range(0..25))
        .map(|i| {
            put(
                &mut w,
                Document {
                    doc_id: 0,
                    type_id: doc_t,
                    title: format!("doc {i}"),
                    created_ts: t0,
                    content_ref: format!("ref/{i}"),
                },
            )
        })
        .collect();
    let pick = |rng: &mut StdRng, v: &[u64]| v[rng.random_range(0..v.len())];
    for _ in 0..rng.random_range(0..60) {
        let kind = AssociationKind::ALL[rng.random_range(0..5)];
        let (left, right) = match kind {
            AssociationKind::ProjectDocument if !projects.is_empty() && !docs.is_empty() => {
                (pick(rng, &projects), pick(rng, &docs))
            }
            AssociationKind::OrganisationDocument if !docs.is_empty() => (org, pick(rng, &docs)),
            AssociationKind::StaffDocument if !docs.is_empty() => {
                (pick(rng, &staff), pick(rng, &docs))
            }
            AssociationKind::ProjectTeam if !projects.is_empty() => {
                (pick(rng, &projects), pick(rng, &staff))
            }
            _ => continue,
        };
        // repeated links are refused by the store; that is fine here
        let _ = w.put(Association {
            assoc_id: 0,
            kind,
            left_id: left,
            right_id: right,
            role_note: None,
        });
    }
    for i in 0..rng.random_range(0..8) {
        let sed = put(
            &mut w,
            StartEndDate {
                sed_id: 0,
                start_ts: t0,
                end_ts: None,
            },
        );
        let project_id =
            (!projects.is_empty() && rng.random_bool(0.7)).then(|| pick(rng, &projects));
        put(
            &mut w,
            Meeting {
                meeting_id: 0,
                project_id,
                sed_id: sed,
                subject: format!("m{i}"),
            },
        );
    }
    for i in 0..rng.random_range(0..10) {
        put(
            &mut w,
            Activity {
                activity_id: 0,
                project_id: None,
                staff_id: pick(rng, &staff),
                description: format!("a{i}"),
                ts: t0,
            },
        );
    }
    w
}

pub fn aggregate_conservation() -> Verdict {
    let mut rng = StdRng::seed_from_u64(0xa66);
    let mut links_total = 0;
    for case in 0..100 {
        let w = random_warehouse(&mut rng);
        let rows = aggregate(&w);
        let projects: Vec<&Project> = w.rows::<Project>().collect();
        let links: Vec<&Association> = w.rows::<Association>().collect();
        let meetings: Vec<&Meeting> = w.rows::<Meeting>().collect();
        let activities: Vec<&Activity> = w.rows::<Activity>().collect();

        let value = |entity: &str, id: u64, metric: Metric| {
            rows.iter()
                .find(|r| r.entity == entity && r.id == id && r.metric == metric)
                .map(|r| r.value)
        };
        let mut doc_sum = 0;
        for p in &projects {
            let (mut docs, mut team, mut met) = (0u64, 0u64, 0u64);
            for a in &links {
                if a.left_id == p.project_id {
                    match a.kind {
                        AssociationKind::ProjectDocument => docs += 1,
                        AssociationKind::ProjectTeam => team += 1,
                        _ => {}
                    }
                }
            }
            for m in &meetings {
                if m.project_id == Some(p.project_id) {
                    met += 1;
                }
            }
            for (metric, want) in [
                (Metric::DocumentCount, docs),
                (Metric::TeamSize, team),
                (Metric::MeetingCount, met),
            ] {
                let got = value("project", p.project_id, metric);
                ensure!(
                    got == Some(want),
                    "case {case}: project {} {}: got {got:?}, oracle {want}",
                    p.project_id,
                    metric.as_str()
                );
            }
            doc_sum += docs;
        }
        for s in w.rows::<Staff>() {
            let want = activities
                .iter()
                .filter(|a| a.staff_id == s.staff_id)
                .count() as u64;
            ensure!(
                value("staff", s.staff_id, Metric::ActivityCount) == Some(want),
                "case {case}: staff {} activity count",
                s.staff_id
            );
        }
        let global = links
            .iter()
            .filter(|a| a.kind == AssociationKind::ProjectDocument)
            .count() as u64;
        let reported: u64 = rows
            .iter()
            .filter(|r| r.metric == Metric::DocumentCount)
            .map(|r| r.value)
            .sum();
        ensure!(
            reported == global && doc_sum == global,
            "case {case}: document counts sum to {reported}, oracle {doc_sum}, associations {global}"
        );
        ensure!(
            rows.len() == 3 * projects.len() + w.rows::<Staff>().count(),
            "case {case}: {} aggregate rows",
            rows.len()
        );
        links_total += global;
    }
    Ok(format!(
        "100 warehouses, {links_total} project-document links conserved"
    ))
}
