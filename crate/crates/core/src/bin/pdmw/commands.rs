use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pdm_warehouse::clock::{Clock, ManualClock, SystemClock, Timestamp};
use pdm_warehouse::config::Config;
use pdm_warehouse::etl::report::{aggregate, denormalize, AggregateRow, ProjectRow};
use pdm_warehouse::etl::{
    load_rows, run_pipeline, write_quarantine, EtlState, PipelineContext, PipelineRun,
    SourceDescriptor,
};
use pdm_warehouse::events::EventLog;
use pdm_warehouse::jobcontrol::{FileSink, JobKind, JobRun, Schedule, Scheduler};
use pdm_warehouse::pdl::{self, AckStatus};
use pdm_warehouse::schema::{
    KeyTuple, Login, Name, Organisation, Relation, Table as SchemaTable, TypeDomain,
};
use pdm_warehouse::security::{find_login, staff_for_login, PasswordPolicy, Permission, Security};
use pdm_warehouse::store::{Database, Warehouse};

use crate::auth;
use crate::table::{render, Table};
use crate::{
    Cli, CliError, CliResult, Command, EtlCommand, JobsCommand, ReportKind, UserAdd, UserCommand,
};

const DEFAULT_CONFIG: &str = "pdmw.toml";
const EVENTS_FILE: &str = "events.jsonl";
const NOTIFY_FILE: &str = "notifications.jsonl";
const AGGREGATES_FILE: &str = "aggregates.json";

struct Ctx {
    config: Config,
    dir: Option<PathBuf>,
    clock: Box<dyn Clock>,
    json: bool,
    user: Option<String>,
}

impl Ctx {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let config = match &cli.config {
            Some(path) => Config::load(path)?,
            None if Path::new(DEFAULT_CONFIG).exists() => Config::load(Path::new(DEFAULT_CONFIG))?,
            None => Config::default(),
        };
        let clock: Box<dyn Clock> = match &cli.clock {
            Some(s) => {
                let t = Timestamp::parse_lenient(s)
                    .ok_or_else(|| CliError::Usage(format!("--clock: invalid timestamp {s:?}")))?;
                Box::new(ManualClock::new(t))
            }
            None => Box::new(SystemClock),
        };
        let dir = cli.warehouse.clone().or_else(|| config.warehouse.clone());
        Ok(Ctx {
            config,
            dir,
            clock,
            json: cli.json,
            user: cli.user.clone(),
        })
    }

    fn dir(&self) -> Result<&Path, CliError> {
        self.dir.as_deref().ok_or_else(|| {
            CliError::Usage("no warehouse: pass --warehouse or set it in the config".into())
        })
    }

    fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn open(&self) -> Result<Database, CliError> {
        Ok(Database::open(self.dir()?)?)
    }

    fn open_read_only(&self) -> Result<Database, CliError> {
        Ok(Database::open_read_only(self.dir()?)?)
    }

    fn security(&self) -> Result<Security, CliError> {
        let dir = self.dir()?;
        let events = EventLog::open(&dir.join(EVENTS_FILE))?;
        let policy = PasswordPolicy {
            iterations: self.config.password_iterations,
        };
        let mut security = Security::new(policy, self.config.session_ttl, events);
        auth::restore_sessions(dir, &mut security)?;
        Ok(security)
    }

    /// Authenticates the caller and checks `wanted`; returns the login id.
    fn authorize(&self, w: &Warehouse, wanted: Permission) -> Result<u64, CliError> {
        let mut security = self.security()?;
        let now = self.now();
        let sid = auth::caller(&mut security, w, self.user.as_deref(), now)?;
        auth::require(&mut security, w, &sid, wanted, now)
    }

    /// Authenticates the caller without a permission check.
    fn login_id(&self, w: &Warehouse) -> Result<(Security, String), CliError> {
        let mut security = self.security()?;
        let sid = auth::caller(&mut security, w, self.user.as_deref(), self.now())?;
        Ok((security, sid))
    }

    fn render(&self, tables: &[Table]) -> String {
        render(tables, self.json)
    }

    fn sources(&self, ids: &[String]) -> Result<Vec<SourceDescriptor>, CliError> {
        if ids.is_empty() {
            return Ok(self.config.default_sources());
        }
        if let Some(bad) = ids
            .iter()
            .find(|id| !self.config.sources.iter().any(|s| &s.source_id == *id))
        {
            return Err(CliError::Usage(format!("unknown source {bad:?}")));
        }
        Ok(self
            .config
            .sources
            .iter()
            .filter(|s| ids.contains(&s.source_id))
            .cloned()
            .collect())
    }
}

pub fn dispatch(cli: Cli) -> CliResult {
    let ctx = Ctx::new(&cli)?;
    match cli.command {
        Command::Init => init(&ctx),
        Command::Status => status(&ctx),
        Command::User(UserCommand::Add(args)) => user_add(&ctx, args),
        Command::Login { username } => login(&ctx, &username),
        Command::Etl(EtlCommand::Run { sources, full }) => etl_run(&ctx, &sources, full),
        Command::Report { kind, limit } => report(&ctx, kind, limit),
        Command::Jobs(cmd) => jobs(&ctx, cmd),
        Command::Submit { instruction, token } => submit(&ctx, &instruction, token.as_deref()),
        Command::Output { input, payload } => output(&ctx, input, &payload),
        Command::History { limit } => report(&ctx, ReportKind::History, limit),
        Command::Snapshot => snapshot(&ctx),
    }
}

fn init(ctx: &Ctx) -> CliResult {
    let db = Database::create(ctx.dir()?)?;
    let rows: usize = db.warehouse().counts().iter().map(|(_, n)| n).sum();
    Ok(format!(
        "initialized empty warehouse: {} relations, {rows} rows\n",
        Relation::ALL.len()
    ))
}

fn status(ctx: &Ctx) -> CliResult {
    let db = ctx.open_read_only()?;
    // row counts are public, but a named caller still has to prove it
    if ctx.user.is_some() {
        ctx.login_id(db.warehouse())?;
    }
    let mut t = Table::new("relations", &["relation", "rows"]);
    for (rel, n) in db.warehouse().counts() {
        t.push(vec![rel.to_string(), n.to_string()]);
    }
    Ok(ctx.render(&[t]))
}

fn fields(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn org_exists(w: &Warehouse, name: &str) -> bool {
    w.rows::<Organisation>()
        .any(|o| w.row::<Name>(o.name_id).is_some_and(|n| n.text == name))
}

fn user_add(ctx: &Ctx, args: UserAdd) -> CliResult {
    let mut db = ctx.open()?;
    let bootstrap = db.warehouse().rows::<Login>().next().is_none();
    if !bootstrap {
        ctx.authorize(db.warehouse(), Permission::Admin)?;
    }
    if find_login(db.warehouse(), &args.username).is_some() {
        return Err(CliError::Usage(format!(
            "user {:?} already exists",
            args.username
        )));
    }
    let password = auth::read_new_password()?;
    let policy = PasswordPolicy {
        iterations: ctx.config.password_iterations,
    };
    let digest = policy
        .hash_random(&password)
        .map_err(|e| CliError::Usage(e.to_string()))?
        .encode();
    drop(password);

    let now = ctx.now();
    let default_rights = if bootstrap {
        "admin"
    } else {
        "read_org,read_project,read_product"
    };
    let rights = args.rights.as_deref().unwrap_or(default_rights);
    Permission::parse_set(rights).map_err(|e| CliError::Usage(e.to_string()))?;

    let w = db.warehouse_mut();
    let result = w.atomic(|w| {
        let mut steps = Vec::new();
        if !org_exists(w, &args.org) {
            let type_key =
                KeyTuple::of([TypeDomain::Organization.as_str(), args.org_type.as_str()]);
            if w.lookup_natural(SchemaTable::TypeCode, &type_key)
                .is_empty()
            {
                steps.push((
                    Relation::Type,
                    fields(&[
                        ("domain", "organization"),
                        ("code", &args.org_type),
                        ("label", &args.org_type),
                    ]),
                ));
            }
            steps.push((
                Relation::Organisation,
                fields(&[("name", &args.org), ("type", &args.org_type)]),
            ));
        }
        steps.push((
            Relation::Staff,
            fields(&[
                ("username", &args.username),
                ("password_hash", &digest),
                ("name", &args.name),
                ("org", &args.org),
                ("rights", rights),
                ("email", args.email.as_deref().unwrap_or("")),
                ("role", args.role.as_deref().unwrap_or("")),
            ]),
        ));
        for (target, row) in steps {
            let report = load_rows(w, target, vec![row], now, 0)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            if let Some(q) = report.quarantine.first() {
                return Err(CliError::Usage(format!("{target}: {}", q.reason)));
            }
        }
        Ok(())
    });
    result?;
    db.commit()?;
    let login = find_login(db.warehouse(), &args.username).expect("login just created");
    Ok(format!(
        "added user {} (login {}, staff {})\n",
        login.username, login.login_id, login.staff_id
    ))
}

fn login(ctx: &Ctx, username: &str) -> CliResult {
    let db = ctx.open_read_only()?;
    let mut security = ctx.security()?;
    let password = auth::read_secret(auth::PASSWORD_ENV, "Password: ")?;
    let now = ctx.now();
    let session = security
        .authenticate(db.warehouse(), username, &password, now)
        .map_err(|e| CliError::Auth(e.to_string()))?;
    auth::store_session(ctx.dir()?, &session, now)?;
    Ok(format!(
        "{}\nexpires {}\n",
        session.session_id, session.expires_ts
    ))
}

/// Runs the pipeline over `sources`, keeping watermarks, cycle count and
/// quarantine files beside the warehouse.
fn pipeline(
    dir: &Path,
    db: &mut Database,
    mut sources: Vec<SourceDescriptor>,
    full: bool,
    now: Timestamp,
    actor: Option<u64>,
) -> Result<PipelineRun, CliError> {
    let mut state = EtlState::load(dir)?;
    if !full {
        state.apply_to(&mut sources);
    }
    state.cycle += 1;
    let ctx = PipelineContext {
        cycle_number: state.cycle,
        now,
        actor,
    };
    let run = run_pipeline(&mut sources, db.warehouse_mut(), ctx);
    db.commit()?;
    // a failed source keeps the watermark it had before this run
    let ok: Vec<SourceDescriptor> = sources
        .into_iter()
        .filter(|s| {
            run.results
                .iter()
                .any(|(id, r)| id == &s.source_id && r.is_ok())
        })
        .collect();
    state.record(&ok);
    state.save(dir)?;
    let quarantined: Vec<_> = run
        .reports()
        .flat_map(|r| r.quarantine.iter().cloned())
        .collect();
    write_quarantine(dir, &quarantined)?;
    Ok(run)
}

fn pipeline_tables(run: &PipelineRun) -> Vec<Table> {
    let mut ledger = Table::new(
        "ledger",
        &[
            "source",
            "stage",
            "input",
            "passed",
            "quarantined",
            "merged",
        ],
    );
    let mut summary = Table::new(
        "summary",
        &[
            "source",
            "cycle",
            "status",
            "inserted",
            "updated",
            "unchanged",
            "quarantined",
            "watermark",
        ],
    );
    let mut quarantine = Table::new("quarantine", &["source", "line", "stage", "reason"]);
    for (id, result) in &run.results {
        match result {
            Ok(r) => {
                for s in &r.stages {
                    ledger.push(vec![
                        id.clone(),
                        s.stage.as_str().into(),
                        s.input.to_string(),
                        s.passed.to_string(),
                        s.quarantined.to_string(),
                        s.merged.to_string(),
                    ]);
                }
                summary.push(vec![
                    id.clone(),
                    run.cycle_number.to_string(),
                    "ok".into(),
                    r.inserted.to_string(),
                    r.updated.to_string(),
                    r.unchanged.to_string(),
                    r.quarantine.len().to_string(),
                    r.watermark.to_string(),
                ]);
                for q in &r.quarantine {
                    quarantine.push(vec![
                        id.clone(),
                        q.line.to_string(),
                        q.stage.as_str().into(),
                        q.reason.clone(),
                    ]);
                }
            }
            Err(e) => summary.push(vec![
                id.clone(),
                run.cycle_number.to_string(),
                format!("aborted: {e}"),
                "0".into(),
                "0".into(),
                "0".into(),
                "0".into(),
                String::new(),
            ]),
        }
    }
    vec![ledger, summary, quarantine]
}

fn failure_summary(run: &PipelineRun) -> Option<String> {
    let failed: Vec<String> = run.failures().map(|(id, e)| format!("{id}: {e}")).collect();
    (!failed.is_empty()).then(|| failed.join("; "))
}

fn actor(w: &Warehouse, login_id: u64) -> Option<u64> {
    staff_for_login(w, login_id).map(|s| s.staff_id)
}

fn etl_run(ctx: &Ctx, ids: &[String], full: bool) -> CliResult {
    let sources = ctx.sources(ids)?;
    let mut db = ctx.open()?;
    let login = ctx.authorize(db.warehouse(), Permission::RunEtl)?;
    let staff = actor(db.warehouse(), login);
    let run = pipeline(ctx.dir()?, &mut db, sources, full, ctx.now(), staff)?;
    let out = ctx.render(&pipeline_tables(&run));
    match failure_summary(&run) {
        None => Ok(out),
        Some(msg) => {
            print!("{out}");
            Err(CliError::Abort(msg))
        }
    }
}

fn report(ctx: &Ctx, kind: ReportKind, limit: usize) -> CliResult {
    let db = ctx.open_read_only()?;
    let w = db.warehouse();
    match kind {
        ReportKind::Projects => {
            ctx.authorize(w, Permission::ReadProject)?;
            let mut t = Table::new("projects", &ProjectRow::COLUMNS);
            for row in denormalize(w) {
                t.push(row.cells());
            }
            Ok(ctx.render(&[t]))
        }
        ReportKind::Aggregates => {
            ctx.authorize(w, Permission::ReadProject)?;
            let mut t = Table::new("aggregates", &AggregateRow::COLUMNS);
            for row in aggregate(w) {
                t.push(row.cells());
            }
            Ok(ctx.render(&[t]))
        }
        ReportKind::History => {
            let (security, sid) = ctx.login_id(w)?;
            let login = security
                .session(&sid, ctx.now())
                .map_err(|e| CliError::Auth(e.to_string()))?
                .login_id;
            let mut t = Table::new(
                "history",
                &[
                    "input_id",
                    "input_ts",
                    "instruction",
                    "output_id",
                    "output_ts",
                    "payload",
                ],
            );
            for entry in pdl::history(w, login, limit) {
                let i = &entry.input;
                let head = [
                    i.input_id.to_string(),
                    i.ts.to_string(),
                    i.instruction.clone(),
                ];
                if entry.outputs.is_empty() {
                    t.push([head.to_vec(), vec![String::new(); 3]].concat());
                }
                for o in &entry.outputs {
                    t.push(
                        [
                            head.to_vec(),
                            vec![o.output_id.to_string(), o.ts.to_string(), o.payload.clone()],
                        ]
                        .concat(),
                    );
                }
            }
            Ok(ctx.render(&[t]))
        }
    }
}

fn submit(ctx: &Ctx, instruction: &str, token: Option<&str>) -> CliResult {
    let mut db = ctx.open()?;
    let (security, sid) = ctx.login_id(db.warehouse())?;
    let ack = pdl::submit(
        db.warehouse_mut(),
        &security,
        &sid,
        instruction,
        token,
        ctx.now(),
    )
    .map_err(|e| match e {
        pdl::PdlError::Session(e) => CliError::Auth(e.to_string()),
        pdl::PdlError::Store(e) => e.into(),
    })?;
    db.commit()?;
    let mut t = Table::new("ack", &["ack_id", "input_id", "status", "detail", "ts"]);
    let status = match ack.status {
        AckStatus::Stored => "stored",
        AckStatus::Rejected => "rejected",
    };
    t.push(vec![
        ack.ack_id.to_string(),
        ack.input_id.to_string(),
        status.into(),
        ack.detail,
        ack.ts.to_string(),
    ]);
    Ok(ctx.render(&[t]))
}

fn output(ctx: &Ctx, input: u64, payload: &str) -> CliResult {
    let mut db = ctx.open()?;
    ctx.login_id(db.warehouse())?;
    let id =
        pdl::record_output(db.warehouse_mut(), input, payload, ctx.now()).map_err(|e| match e {
            pdl::PdlError::Store(e @ pdm_warehouse::store::StoreError::FkViolation { .. }) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        })?;
    db.commit()?;
    Ok(format!("output {id} recorded for input {input}\n"))
}

fn snapshot(ctx: &Ctx) -> CliResult {
    let mut db = ctx.open()?;
    ctx.authorize(db.warehouse(), Permission::Admin)?;
    let header = db.checkpoint()?;
    Ok(format!(
        "snapshot written: {} rows, journal seq {}\n",
        header.total_rows(),
        header.journal_seq
    ))
}

fn schedule_text(s: &Schedule) -> String {
    match s {
        Schedule::Once { at } => format!("once {at}"),
        Schedule::Every {
            interval_secs,
            anchor: None,
        } => format!("every {interval_secs}s"),
        Schedule::Every {
            interval_secs,
            anchor: Some(a),
        } => format!("every {interval_secs}s from {a}"),
    }
}

fn opt_ts(t: Option<Timestamp>) -> String {
    t.map(|t| t.to_string()).unwrap_or_default()
}

fn run_row(s: &Scheduler, r: &JobRun) -> Vec<String> {
    let name = s
        .job(r.job_id)
        .map(|j| j.spec.name.clone())
        .unwrap_or_default();
    vec![
        r.run_id.to_string(),
        name,
        r.due.to_string(),
        r.state.as_str().into(),
        r.attempt.to_string(),
        opt_ts(r.started_ts),
        opt_ts(r.finished_ts),
        r.notified.to_string(),
        r.error.clone().unwrap_or_default(),
    ]
}

const RUN_COLUMNS: [&str; 9] = [
    "run_id", "job", "due", "state", "attempts", "started", "finished", "notified", "error",
];

fn jobs(ctx: &Ctx, cmd: JobsCommand) -> CliResult {
    let dir = ctx.dir()?.to_path_buf();
    match cmd {
        JobsCommand::Add { names } => {
            let db = ctx.open()?;
            ctx.authorize(db.warehouse(), Permission::Admin)?;
            let mut sched = Scheduler::load(&dir)?;
            if let Some(bad) = names.iter().find(|n| ctx.config.job(n).is_none()) {
                return Err(CliError::Usage(format!("no job {bad:?} in the config")));
            }
            let mut t = Table::new("jobs", &["job_id", "name", "status"]);
            for job in ctx
                .config
                .jobs
                .iter()
                .filter(|j| names.is_empty() || names.contains(&j.spec.name))
            {
                if let Some(existing) = sched.job_by_name(&job.spec.name) {
                    t.push(vec![
                        existing.spec.job_id.to_string(),
                        job.spec.name.clone(),
                        "exists".into(),
                    ]);
                    continue;
                }
                let id = sched.schedule(job.spec.clone(), ctx.now())?;
                t.push(vec![
                    id.to_string(),
                    job.spec.name.clone(),
                    "scheduled".into(),
                ]);
            }
            sched.save(&dir)?;
            Ok(ctx.render(&[t]))
        }
        JobsCommand::List => {
            let sched = Scheduler::load(&dir)?;
            let mut t = Table::new(
                "jobs",
                &[
                    "job_id",
                    "name",
                    "kind",
                    "schedule",
                    "enabled",
                    "max_retries",
                    "backoff",
                    "next_due",
                ],
            );
            for j in sched.jobs() {
                t.push(vec![
                    j.spec.job_id.to_string(),
                    j.spec.name.clone(),
                    j.spec.kind.as_str().into(),
                    schedule_text(&j.spec.schedule),
                    j.spec.enabled.to_string(),
                    j.spec.max_retries.to_string(),
                    format!("{}s", j.spec.backoff_secs),
                    opt_ts(j.next_due),
                ]);
            }
            Ok(ctx.render(&[t]))
        }
        JobsCommand::Tick => tick(ctx, &dir),
        JobsCommand::Status { name } => {
            let sched = Scheduler::load(&dir)?;
            let job_id = match &name {
                Some(n) => Some(
                    sched
                        .job_by_name(n)
                        .ok_or_else(|| CliError::Usage(format!("no scheduled job {n:?}")))?
                        .spec
                        .job_id,
                ),
                None => None,
            };
            let mut t = Table::new("runs", &RUN_COLUMNS);
            for r in sched
                .runs()
                .filter(|r| job_id.is_none_or(|id| r.job_id == id))
            {
                t.push(run_row(&sched, r));
            }
            Ok(ctx.render(&[t]))
        }
    }
}

fn tick(ctx: &Ctx, dir: &Path) -> CliResult {
    let mut db = ctx.open()?;
    let login = ctx.authorize(db.warehouse(), Permission::RunEtl)?;
    let staff = actor(db.warehouse(), login);
    let mut sched = Scheduler::load(dir)?;
    let sink_path = ctx
        .config
        .notification_sink
        .clone()
        .unwrap_or_else(|| dir.join(NOTIFY_FILE));
    let mut sink = FileSink::new(sink_path);
    let started = sched.tick(ctx.now(), &mut sink);
    let mut t = Table::new("runs", &RUN_COLUMNS);
    for run in started {
        let spec = sched.job(run.job_id).expect("run has a job").spec.clone();
        let sources = match ctx.config.job(&spec.name).and_then(|j| j.sources.clone()) {
            Some(ids) => ctx.sources(&ids)?,
            None => ctx.config.default_sources(),
        };
        let clock = ctx.clock.as_ref();
        let finished = sched.execute(run.run_id, clock, &mut sink, |_| match spec.kind {
            JobKind::PipelineRun => {
                let run = pipeline(dir, &mut db, sources.clone(), false, clock.now(), staff)
                    .map_err(|e| e.message().to_string())?;
                failure_summary(&run).map_or(Ok(()), Err)
            }
            JobKind::Snapshot => db.checkpoint().map(|_| ()).map_err(|e| e.to_string()),
            JobKind::AggregateRefresh => {
                let rows = aggregate(db.warehouse());
                let text = serde_json::to_vec_pretty(&rows).map_err(|e| e.to_string())?;
                std::fs::write(dir.join(AGGREGATES_FILE), text).map_err(|e| e.to_string())
            }
        })?;
        t.push(run_row(&sched, &finished));
    }
    sched.save(dir)?;
    Ok(ctx.render(&[t]))
}
