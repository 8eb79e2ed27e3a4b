use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Duration;

use pdm_warehouse::clock::{Clock, ManualClock, Timestamp};
use pdm_warehouse::events::EventLog;
use pdm_warehouse::jobcontrol::{
    FileSink, JobKind, JobSpec, Notification, NotificationSink, RunState, Schedule, Scheduler,
    SinkError,
};
use pdm_warehouse::pdl::{self, Ack, AckStatus};
use pdm_warehouse::sample;
use pdm_warehouse::schema::{Relation, SystemInput, SystemOutput};
use pdm_warehouse::security::{grants, Decision, PasswordPolicy, Permission, Security};
use pdm_warehouse::store::Database;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::common::*;
use crate::{ensure, Verdict};

fn files_under(dir: &Path, out: &mut Vec<std::path::PathBuf>) {
    for entry in std::fs::read_dir(dir).into_iter().flatten().flatten() {
        let p = entry.path();
        if p.is_dir() {
            files_under(&p, out);
        } else {
            out.push(p);
        }
    }
}

/// Compiler-checked list of every permission; a new variant breaks the build
/// here until it is added.
fn ordinal(p: Permission) -> usize {
    match p {
        Permission::ReadOrg => 0,
        Permission::WriteOrg => 1,
        Permission::ReadProject => 2,
        Permission::WriteProject => 3,
        Permission::ReadProduct => 4,
        Permission::WriteProduct => 5,
        Permission::RunEtl => 6,
        Permission::Admin => 7,
    }
}

pub fn security() -> Verdict {
    const WRONG: &str = "sentinel-Wrong-5b8";
    let mut sentinels: Vec<&str> = STAFF_PASSWORDS.iter().map(|(_, p)| *p).collect();
    sentinels.extend([ROOT_PASSWORD, WRONG]);

    // Drive the binary: bootstrap, loads, good and bad logins, verbose logs.
    let c = Corpus::new();
    let mut outputs: Vec<Outcome> = c.bootstrap(T_LOAD);
    outputs.push(c.root(T_LOAD, &["etl", "run"]));
    for (user, password) in STAFF_PASSWORDS {
        outputs.push(c.run(T_LOAD, Some((user, password)), &["login"]));
        outputs.push(c.run(T_LOAD, Some((user, WRONG)), &["login"]));
        outputs.push(c.run_env(
            T_LOAD,
            Some((user, password)),
            &[("PDMW_LOG", "trace")],
            &["submit", "list projects"],
        ));
    }
    outputs.push(c.run(T_LOAD, Some(("nobody", WRONG)), &["login"]));
    outputs.push(c.root(T_LOAD, &["snapshot"]));
    outputs.push(c.root(T_LOAD, &["submit", "after snapshot"]));

    let mut files = Vec::new();
    files_under(c.path(), &mut files);
    let mut scanned = 0;
    for f in &files {
        let bytes = std::fs::read(f).map_err(|e| e.to_string())?;
        scanned += bytes.len();
        for s in &sentinels {
            ensure!(
                !bytes.windows(s.len()).any(|w| w == s.as_bytes()),
                "{s} found in {}",
                f.display()
            );
        }
    }
    for o in &outputs {
        for s in &sentinels {
            ensure!(
                !o.stdout.contains(s) && !o.stderr.contains(s),
                "{s} printed by `pdmw {}`",
                o.args
            );
        }
    }
    for name in [
        "wh/warehouse.snap",
        "wh/warehouse.journal",
        "wh/events.jsonl",
    ] {
        ensure!(
            files.iter().any(|f| f.ends_with(name)),
            "{name} was never written"
        );
    }
    let wrong_pw = c.run(T_LOAD, Some(("zahmed", WRONG)), &["login"]);
    let no_user = c.run(T_LOAD, Some(("nobody-at-all", WRONG)), &["login"]);
    ensure!(
        (wrong_pw.code, &wrong_pw.stdout, &wrong_pw.stderr)
            == (no_user.code, &no_user.stdout, &no_user.stderr),
        "CLI distinguishes unknown user from wrong password"
    );

    // Library level: identical errors and admin coverage.
    let policy = PasswordPolicy { iterations: 1000 };
    let digest = policy
        .hash(ROOT_PASSWORD, b"acceptance-salt!")
        .map_err(|e| e.to_string())?
        .encode();
    let mut w = pdm_warehouse::store::Warehouse::new();
    sample::populate(&mut w, &digest).map_err(|e| e.to_string())?;
    let mut sec = Security::new(policy, Duration::from_secs(3600), EventLog::in_memory());
    let t = Timestamp::from_unix(1_231_156_800);
    let a = sec.authenticate(&w, "zahmed", WRONG, t);
    let b = sec.authenticate(&w, "no-such-user", WRONG, t);
    ensure!(a.is_err() && b.is_err(), "bad credentials accepted");
    let (a, b) = (a.unwrap_err(), b.unwrap_err());
    ensure!(
        a == b && a.to_string() == b.to_string() && format!("{a:?}") == format!("{b:?}"),
        "errors differ: {a:?} vs {b:?}"
    );
    let session = sec
        .authenticate(&w, "zahmed", ROOT_PASSWORD, t)
        .map_err(|e| e.to_string())?;
    let mut seen = BTreeSet::new();
    for p in Permission::ALL {
        seen.insert(ordinal(p));
        let d = sec
            .authorize(&w, &session.session_id, p, t)
            .map_err(|e| e.to_string())?;
        ensure!(d == Decision::Allow, "admin session denied {p}");
    }
    ensure!(seen.len() == 8, "Permission::ALL misses variants");
    // every subset: admin grants all, otherwise exactly the members
    for mask in 0u32..(1 << 8) {
        let set: BTreeSet<Permission> = Permission::ALL
            .into_iter()
            .filter(|p| mask & (1 << ordinal(*p)) != 0)
            .collect();
        for p in Permission::ALL {
            let want = set.contains(&Permission::Admin) || set.contains(&p);
            ensure!(grants(&set, p) == want, "grants({set:?}, {p}) != {want}");
        }
    }
    for e in sec.events().entries() {
        let line = format!("{e:?}");
        ensure!(
            !line.contains(ROOT_PASSWORD) && !line.contains(WRONG),
            "event carries a password"
        );
    }
    Ok(format!(
        "{} sentinels absent from {} files ({scanned} bytes) and {} outputs; 8 permissions under admin",
        sentinels.len(),
        files.len(),
        outputs.len()
    ))
}

// ---------------------------------------------------------------------------

/// File sink that refuses deliveries while the clock is inside an outage.
struct FlakySink<'c> {
    inner: FileSink,
    clock: &'c ManualClock,
    outage: (Timestamp, Timestamp),
}

impl NotificationSink for FlakySink<'_> {
    fn deliver(&mut self, note: &Notification) -> Result<(), SinkError> {
        let now = self.clock.now();
        if now >= self.outage.0 && now < self.outage.1 {
            return Err(SinkError("outage".into()));
        }
        self.inner.deliver(note)
    }
}

pub fn scheduler_exactly_once() -> Verdict {
    let start = Timestamp::from_unix(1_231_113_600); // 2009-01-05T00:00:00Z
    let at = |s: i64| Timestamp::from_unix(start.unix() + s);
    let end = at(24 * 3600);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sink_path = dir.path().join("notifications.jsonl");
    let clock = ManualClock::new(start);
    let mut sink = FlakySink {
        inner: FileSink::new(&sink_path),
        clock: &clock,
        outage: (at(10 * 3600), at(12 * 3600)),
    };
    let mut rng = StdRng::seed_from_u64(0x24);

    let mut s = Scheduler::new();
    let mut specs = Vec::new();
    let periodic = [
        (60, 0, 0),
        (300, 2, 5),
        (900, 3, 30),
        (3600, 1, 60),
        (5400, 10, 1),
    ];
    for (i, (interval, retries, backoff)) in periodic.into_iter().enumerate() {
        specs.push(JobSpec {
            job_id: 0,
            name: format!("every-{interval}"),
            kind: [
                JobKind::PipelineRun,
                JobKind::Snapshot,
                JobKind::AggregateRefresh,
            ][i % 3],
            schedule: Schedule::Every {
                interval_secs: interval,
                anchor: None,
            },
            max_retries: retries,
            backoff_secs: backoff,
            enabled: true,
            notify_on_success: i == 3,
        });
    }
    for k in 0..12 {
        specs.push(JobSpec {
            job_id: 0,
            name: format!("once-{k}"),
            kind: JobKind::Snapshot,
            schedule: Schedule::Once {
                at: at(rng.random_range(-600..26 * 3600)),
            },
            max_retries: rng.random_range(0..4),
            backoff_secs: rng.random_range(0..120),
            enabled: true,
            notify_on_success: rng.random_bool(0.3),
        });
    }
    for spec in &specs {
        s.schedule(spec.clone(), start).map_err(|e| e.to_string())?;
    }

    // failure pattern: a pure function of (job, due, attempt)
    let fails = |job: u64, due: Timestamp, attempt: u32| -> bool {
        let h = (job * 7919 + due.unix() as u64 / 60 * 31 + attempt as u64 * 17) % 10;
        job == 2 || h < 3
    };
    let mut last_tick = start;
    let mut restarted = false;
    while clock.now() <= end {
        last_tick = clock.now();
        let due = s.tick(last_tick, &mut sink);
        for run in due {
            let id = run.run_id;
            let done = s
                .execute(id, &clock, &mut sink, |r| {
                    if r.job_id == 5 && r.attempt == 1 && r.due.unix() % 2 == 0 {
                        panic!("job body panicked");
                    }
                    if fails(r.job_id, r.due, r.attempt) {
                        Err(format!("attempt {} failed", r.attempt))
                    } else {
                        Ok(())
                    }
                })
                .map_err(|e| e.to_string())?;
            ensure!(
                done.state.is_terminal(),
                "run {id} left in {:?}",
                done.state
            );
        }
        if !restarted && clock.now() >= at(13 * 3600) {
            s.save(dir.path()).map_err(|e| e.to_string())?;
            s = Scheduler::load(dir.path()).map_err(|e| e.to_string())?;
            restarted = true;
        }
        clock.advance(Duration::from_secs(rng.random_range(1..=90)));
    }
    // drain anything left from the outage
    s.tick(last_tick, &mut sink);

    let mut due_events = 0i64;
    for spec in &specs {
        due_events += match spec.schedule {
            Schedule::Every { interval_secs, .. } => {
                (last_tick.unix() - start.unix()) / interval_secs as i64
            }
            Schedule::Once { at } => i64::from(at <= last_tick),
        };
    }
    let runs: Vec<_> = s.runs().cloned().collect();
    ensure!(
        runs.len() as i64 == due_events,
        "{} runs started for {due_events} due events",
        runs.len()
    );
    let mut per_job: BTreeMap<u64, BTreeSet<i64>> = BTreeMap::new();
    for r in &runs {
        ensure!(
            per_job.entry(r.job_id).or_default().insert(r.due.unix()),
            "job {} ran twice for {}",
            r.job_id,
            r.due
        );
    }

    let text = std::fs::read_to_string(&sink_path).map_err(|e| e.to_string())?;
    let mut lines: BTreeMap<u64, usize> = BTreeMap::new();
    for l in text.lines() {
        let n: Notification = serde_json::from_str(l).map_err(|e| e.to_string())?;
        *lines.entry(n.run_id).or_default() += 1;
    }
    let mut failed = 0;
    let mut max_attempts = 0;
    for r in &runs {
        let spec = &specs[(r.job_id - 1) as usize];
        ensure!(
            r.attempt <= spec.max_retries + 1,
            "run {} used {} attempts, budget {}",
            r.run_id,
            r.attempt,
            spec.max_retries + 1
        );
        max_attempts = max_attempts.max(r.attempt);
        let want = match r.state {
            RunState::Failed => {
                failed += 1;
                1
            }
            RunState::Completed => usize::from(spec.notify_on_success),
            other => return Err(format!("run {} ended {other:?}", r.run_id)),
        };
        let got = lines.get(&r.run_id).copied().unwrap_or(0);
        ensure!(
            got == want,
            "run {} ({:?}): {got} notification lines",
            r.run_id,
            r.state
        );
    }
    ensure!(failed > 0, "trace never exercised a failure");
    let audit = s.audit();
    ensure!(audit.is_empty(), "{audit:?}");
    Ok(format!(
        "{} runs = due events, {failed} failed with one line each, max {max_attempts} attempts",
        runs.len()
    ))
}

// ---------------------------------------------------------------------------

pub fn pdl_protocol() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut db = Database::create(dir.path()).map_err(|e| e.to_string())?;
    let policy = PasswordPolicy { iterations: 1 };
    let digest = policy
        .hash(ROOT_PASSWORD, b"pdl-acceptance-s")
        .map_err(|e| e.to_string())?
        .encode();
    let ids = sample::populate(db.warehouse_mut(), &digest).map_err(|e| e.to_string())?;
    let mut sec = Security::new(policy, Duration::from_secs(86_400), EventLog::in_memory());
    let t0 = Timestamp::from_unix(1_231_156_800);
    let session = sec
        .authenticate(db.warehouse(), "zahmed", ROOT_PASSWORD, t0)
        .map_err(|e| e.to_string())?;
    let before = db.warehouse().count(Relation::SystemInput);

    let mut rng = StdRng::seed_from_u64(0x9d1);
    let mut now = t0;
    let mut acks: Vec<Ack> = Vec::new();
    let mut by_token: BTreeMap<String, Ack> = BTreeMap::new();
    let (mut untokened, mut replays) = (0usize, 0usize);
    for i in 0..1000 {
        now = Timestamp::from_unix(now.unix() + rng.random_range(0..3));
        let replay = !by_token.is_empty() && rng.random_bool(0.1);
        let token = if replay {
            let k = rng.random_range(0..by_token.len());
            Some(by_token.keys().nth(k).unwrap().clone())
        } else if rng.random_bool(0.6) {
            Some(format!("tok-{i}"))
        } else {
            None
        };
        let w = db.warehouse_mut();
        let ack = pdl::submit(
            w,
            &sec,
            &session.session_id,
            &format!("instruction {i}"),
            token.as_deref(),
            now,
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            ack.status == AckStatus::Stored,
            "submit {i} rejected: {}",
            ack.detail
        );
        match token {
            Some(t) if replay => {
                replays += 1;
                ensure!(
                    by_token[&t] == ack,
                    "replay of {t} returned a different ack"
                );
            }
            Some(t) => {
                by_token.insert(t, ack.clone());
            }
            None => untokened += 1,
        }
        acks.push(ack);
        // some outputs, stamped before their input on purpose
        if rng.random_bool(0.3) {
            let target = &acks[rng.random_range(0..acks.len())];
            let stamp = Timestamp::from_unix(now.unix() - rng.random_range(0..30));
            pdl::record_output(db.warehouse_mut(), target.input_id, "result", stamp)
                .map_err(|e| e.to_string())?;
        }
    }
    let stored = db.warehouse().count(Relation::SystemInput) - before;
    ensure!(
        stored == by_token.len() + untokened,
        "{stored} inputs for {} tokens + {untokened} untokened",
        by_token.len()
    );
    ensure!(replays >= 50, "only {replays} replays exercised");

    db.commit().map_err(|e| e.to_string())?;
    db.checkpoint().map_err(|e| e.to_string())?;
    drop(db);
    let db = Database::open_read_only(dir.path()).map_err(|e| e.to_string())?;
    let w = db.warehouse();
    for ack in &acks {
        let input = pdl::resolve(w, ack.ack_id)
            .ok_or_else(|| format!("ack {} does not resolve after reload", ack.ack_id))?;
        ensure!(
            input.input_id == ack.input_id && input.ts == ack.ts && input.login_id == ids.login,
            "ack {} resolves to {input:?}",
            ack.ack_id
        );
    }
    let mut outputs = 0;
    for o in w.rows::<SystemOutput>() {
        let input = w
            .row::<SystemInput>(o.input_id)
            .ok_or_else(|| format!("output {} has no input", o.output_id))?;
        ensure!(
            o.ts >= input.ts,
            "output {} precedes its input",
            o.output_id
        );
        outputs += 1;
    }
    Ok(format!(
        "1000 submits ({replays} replays) -> {stored} inputs; {} acks resolve after reload; {outputs} outputs ordered",
        acks.len()
    ))
}

// ---------------------------------------------------------------------------

pub fn cli_golden() -> Verdict {
    let c = Corpus::new();
    let steps = golden_flow(&c);
    check_golden("flow.txt", &transcript(&steps))?;
    let bad: Vec<&str> = steps
        .iter()
        .filter(|(_, o)| o.code != 0)
        .map(|(_, o)| o.args.as_str())
        .collect();
    ensure!(bad.is_empty(), "non-zero exit from {bad:?}");
    Ok(format!("{} steps match tests/golden/flow.txt", steps.len()))
}
