//! Tick-driven job scheduler with retrying runs and failure notification.
//!
//! The scheduler is plain data: the caller supplies the time on every
//! `tick`, and a [`Clock`] plus a [`NotificationSink`] when executing, so a
//! simulated clock makes every decision reproducible. State round-trips
//! through JSON for persistence between CLI invocations.

mod sink;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, Timestamp};

pub use sink::{FileSink, MemorySink, Notification, NotificationSink, SinkError};

pub const MAX_RETRIES: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    PipelineRun,
    Snapshot,
    AggregateRefresh,
}

impl JobKind {
    pub fn as_str(self) -> &'static str {
        match self {
            JobKind::PipelineRun => "pipeline_run",
            JobKind::Snapshot => "snapshot",
            JobKind::AggregateRefresh => "aggregate_refresh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Schedule {
    Once {
        at: Timestamp,
    },
    /// Due every `interval_secs`, counted from `anchor` or from the moment
    /// the job is scheduled.
    Every {
        interval_secs: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        anchor: Option<Timestamp>,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobSpec {
    #[serde(default)]
    pub job_id: u64,
    pub name: String,
    pub kind: JobKind,
    pub schedule: Schedule,
    #[serde(default)]
    pub max_retries: u32,
    #[serde(default)]
    pub backoff_secs: u64,
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default)]
    pub notify_on_success: bool,
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), JobError> {
        let invalid = |m: String| Err(JobError::InvalidSpec(m));
        if self.name.trim().is_empty() {
            return invalid("job name is empty".into());
        }
        if self.max_retries > MAX_RETRIES {
            return invalid(format!(
                "max_retries {} exceeds {MAX_RETRIES}",
                self.max_retries
            ));
        }
        if let Schedule::Every {
            interval_secs: 0, ..
        } = self.schedule
        {
            return invalid("interval must be positive".into());
        }
        Ok(())
    }

    /// Delay before attempt `attempt + 1` after attempt `attempt` failed.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64
            .checked_shl(attempt.saturating_sub(1))
            .unwrap_or(u64::MAX);
        Duration::from_secs(self.backoff_secs.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Pending,
    Running,
    Completed,
    Failed,
    Retrying,
}

impl RunState {
    pub fn as_str(self) -> &'static str {
        match self {
            RunState::Pending => "pending",
            RunState::Running => "running",
            RunState::Completed => "completed",
            RunState::Failed => "failed",
            RunState::Retrying => "retrying",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Completed | RunState::Failed)
    }

    pub fn can_become(self, next: RunState) -> bool {
        use RunState::*;
        matches!(
            (self, next),
            (Pending, Running) | (Running, Completed | Retrying | Failed) | (Retrying, Running)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRun {
    pub run_id: u64,
    pub job_id: u64,
    /// The due time this run answers.
    pub due: Timestamp,
    /// Attempts made so far; zero until the first start.
    pub attempt: u32,
    pub state: RunState,
    pub started_ts: Option<Timestamp>,
    pub finished_ts: Option<Timestamp>,
    pub error: Option<String>,
    pub notified: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub run_id: u64,
    pub job_id: u64,
    /// `None` for the entry that creates the run.
    pub from: Option<RunState>,
    pub to: RunState,
    pub attempt: u32,
    pub ts: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub spec: JobSpec,
    pub registered_at: Timestamp,
    /// `None` once a one-shot job has fired.
    pub next_due: Option<Timestamp>,
}

#[derive(Debug, thiserror::Error)]
pub enum JobError {
    #[error("invalid job spec: {0}")]
    InvalidSpec(String),
    #[error("unknown job {0}")]
    UnknownJob(u64),
    #[error("unknown run {0}")]
    UnknownRun(u64),
    #[error("run {run_id} is {state:?}, expected {expected:?}")]
    WrongState {
        run_id: u64,
        state: RunState,
        expected: RunState,
    },
    #[error("duplicate job name {0:?}")]
    DuplicateName(String),
    #[error(transparent)]
    Sink(#[from] SinkError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scheduler {
    jobs: BTreeMap<u64, Job>,
    runs: BTreeMap<u64, JobRun>,
    log: Vec<LogEntry>,
    /// Terminal runs whose notification could not be delivered yet.
    undelivered: BTreeSet<u64>,
    next_job_id: u64,
    next_run_id: u64,
}

impl Scheduler {
    pub const FILE: &'static str = "jobs.json";

    pub fn new() -> Self {
        Self::default()
    }

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

    /// Registers a job and computes its first due time from `now`.
    pub fn schedule(&mut self, mut spec: JobSpec, now: Timestamp) -> Result<u64, JobError> {
        spec.validate()?;
        if self.jobs.values().any(|j| j.spec.name == spec.name) {
            return Err(JobError::DuplicateName(spec.name));
        }
        self.next_job_id += 1;
        spec.job_id = self.next_job_id;
        let next_due = Some(first_due(&spec.schedule, now));
        let id = spec.job_id;
        self.jobs.insert(
            id,
            Job {
                spec,
                registered_at: now,
                next_due,
            },
        );
        Ok(id)
    }

    pub fn set_enabled(&mut self, job_id: u64, enabled: bool) -> Result<(), JobError> {
        let job = self
            .jobs
            .get_mut(&job_id)
            .ok_or(JobError::UnknownJob(job_id))?;
        job.spec.enabled = enabled;
        Ok(())
    }

    pub fn job(&self, job_id: u64) -> Option<&Job> {
        self.jobs.get(&job_id)
    }

    pub fn job_by_name(&self, name: &str) -> Option<&Job> {
        self.jobs.values().find(|j| j.spec.name == name)
    }

    pub fn jobs(&self) -> impl Iterator<Item = &Job> {
        self.jobs.values()
    }

    pub fn run(&self, run_id: u64) -> Option<&JobRun> {
        self.runs.get(&run_id)
    }

    pub fn runs(&self) -> impl Iterator<Item = &JobRun> {
        self.runs.values()
    }

    pub fn runs_of(&self, job_id: u64) -> impl Iterator<Item = &JobRun> {
        self.runs.values().filter(move |r| r.job_id == job_id)
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn undelivered(&self) -> impl Iterator<Item = u64> + '_ {
        self.undelivered.iter().copied()
    }

    /// Starts one pending run for every due time at or before `now`, in
    /// (due time, job id) order, and advances due times past `now`.
    /// Disabled jobs skip their due times without running. Notifications
    /// that failed earlier are retried first.
    pub fn tick(&mut self, now: Timestamp, sink: &mut dyn NotificationSink) -> Vec<JobRun> {
        let retry: Vec<u64> = self.undelivered.iter().copied().collect();
        for run_id in retry {
            if let Err(e) = self.notify(run_id, sink, now) {
                tracing::warn!(run_id, error = %e, "notification still undeliverable");
            }
        }

        let mut due: Vec<(Timestamp, u64)> = Vec::new();
        for job in self.jobs.values_mut() {
            while let Some(at) = job.next_due.filter(|at| *at <= now) {
                if job.spec.enabled {
                    due.push((at, job.spec.job_id));
                }
                job.next_due = match job.spec.schedule {
                    Schedule::Once { .. } => None,
                    Schedule::Every { interval_secs, .. } => {
                        Some(at.saturating_add(Duration::from_secs(interval_secs)))
                    }
                };
            }
        }
        due.sort();
        due.into_iter()
            .map(|(at, job_id)| {
                self.next_run_id += 1;
                let run = JobRun {
                    run_id: self.next_run_id,
                    job_id,
                    due: at,
                    attempt: 0,
                    state: RunState::Pending,
                    started_ts: None,
                    finished_ts: None,
                    error: None,
                    notified: false,
                };
                self.log.push(LogEntry {
                    run_id: run.run_id,
                    job_id,
                    from: None,
                    to: RunState::Pending,
                    attempt: 0,
                    ts: now,
                    error: None,
                });
                self.runs.insert(run.run_id, run.clone());
                run
            })
            .collect()
    }

    fn transition(&mut self, run_id: u64, to: RunState, ts: Timestamp) {
        let run = self.runs.get_mut(&run_id).expect("run exists");
        assert!(
            run.state.can_become(to),
            "illegal transition {:?} -> {to:?}",
            run.state
        );
        if to == RunState::Running {
            run.attempt += 1;
            run.started_ts.get_or_insert(ts);
        }
        if to.is_terminal() {
            run.finished_ts = Some(ts);
        }
        let from = run.state;
        run.state = to;
        self.log.push(LogEntry {
            run_id,
            job_id: run.job_id,
            from: Some(from),
            to,
            attempt: run.attempt,
            ts,
            error: run.error.clone(),
        });
    }

    /// Drives a pending run to a terminal state. Failures and panics in
    /// `body` are captured into the run; between attempts the clock sleeps
    /// `backoff * 2^(attempt-1)`. A failed run, or a completed one when the
    /// job asks for it, is then reported to `sink`.
    pub fn execute(
        &mut self,
        run_id: u64,
        clock: &dyn Clock,
        sink: &mut dyn NotificationSink,
        mut body: impl FnMut(&JobRun) -> Result<(), String>,
    ) -> Result<JobRun, JobError> {
        let run = self.runs.get(&run_id).ok_or(JobError::UnknownRun(run_id))?;
        if run.state != RunState::Pending {
            return Err(JobError::WrongState {
                run_id,
                state: run.state,
                expected: RunState::Pending,
            });
        }
        let spec = self
            .jobs
            .get(&run.job_id)
            .ok_or(JobError::UnknownJob(run.job_id))?
            .spec
            .clone();
        loop {
            self.transition(run_id, RunState::Running, clock.now());
            let snapshot = self.runs[&run_id].clone();
            let outcome = panic::catch_unwind(AssertUnwindSafe(|| body(&snapshot)))
                .unwrap_or_else(|p| Err(panic_message(p.as_ref())));
            let attempt = snapshot.attempt;
            match outcome {
                Ok(()) => {
                    self.runs.get_mut(&run_id).expect("run exists").error = None;
                    self.transition(run_id, RunState::Completed, clock.now());
                    break;
                }
                Err(e) => {
                    self.runs.get_mut(&run_id).expect("run exists").error = Some(e);
                    if attempt <= spec.max_retries {
                        self.transition(run_id, RunState::Retrying, clock.now());
                        clock.sleep(spec.backoff(attempt));
                    } else {
                        self.transition(run_id, RunState::Failed, clock.now());
                        break;
                    }
                }
            }
        }
        if let Err(e) = self.notify(run_id, sink, clock.now()) {
            tracing::warn!(run_id, error = %e, "notification deferred");
        }
        Ok(self.runs[&run_id].clone())
    }

    /// Sends the run's notification if it is due one and has not had it.
    /// Returns the delivered notification, or `None` when nothing was sent.
    pub fn notify(
        &mut self,
        run_id: u64,
        sink: &mut dyn NotificationSink,
        now: Timestamp,
    ) -> Result<Option<Notification>, JobError> {
        let run = self.runs.get(&run_id).ok_or(JobError::UnknownRun(run_id))?;
        if !run.state.is_terminal() {
            return Err(JobError::WrongState {
                run_id,
                state: run.state,
                expected: RunState::Failed,
            });
        }
        let job = &self.jobs[&run.job_id].spec;
        let wanted = run.state == RunState::Failed || job.notify_on_success;
        if run.notified || !wanted {
            self.undelivered.remove(&run_id);
            return Ok(None);
        }
        let note = Notification {
            run_id,
            job_id: run.job_id,
            job: job.name.clone(),
            state: run.state,
            attempt: run.attempt,
            error: run.error.clone(),
            ts: now,
        };
        match sink.deliver(&note) {
            Ok(()) => {
                self.runs.get_mut(&run_id).expect("run exists").notified = true;
                self.undelivered.remove(&run_id);
                Ok(Some(note))
            }
            Err(e) => {
                self.undelivered.insert(run_id);
                Err(e.into())
            }
        }
    }

    /// Checks run invariants: legal logged transitions, one log entry per
    /// transition, attempts within the retry budget.
    pub fn audit(&self) -> Vec<String> {
        let mut problems = Vec::new();
        let mut states: BTreeMap<u64, RunState> = BTreeMap::new();
        for e in &self.log {
            match (e.from, states.get(&e.run_id)) {
                (None, None) if e.to == RunState::Pending => {}
                (Some(from), Some(&cur)) if from == cur && from.can_become(e.to) => {}
                _ => problems.push(format!(
                    "run {}: bad log entry {:?} -> {:?}",
                    e.run_id, e.from, e.to
                )),
            }
            states.insert(e.run_id, e.to);
        }
        for run in self.runs.values() {
            if states.get(&run.run_id) != Some(&run.state) {
                problems.push(format!("run {}: log ends in a different state", run.run_id));
            }
            let max = self
                .jobs
                .get(&run.job_id)
                .map_or(0, |j| j.spec.max_retries + 1);
            if run.attempt > max {
                problems.push(format!(
                    "run {}: {} attempts exceeds {max}",
                    run.run_id, run.attempt
                ));
            }
        }
        problems
    }
}

fn first_due(schedule: &Schedule, now: Timestamp) -> Timestamp {
    match *schedule {
        Schedule::Once { at } => at,
        Schedule::Every {
            interval_secs,
            anchor,
        } => anchor
            .unwrap_or(now)
            .saturating_add(Duration::from_secs(interval_secs)),
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    let text = p
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    format!("panicked: {text}")
}
