//! Operator configuration file.
//!
//! TOML with top-level settings and one `[[sources]]` or `[[jobs]]` section
//! per entry. Sections keep their declaration order, which is also the
//! order sources load in. Relative paths resolve against the directory
//! holding the config file.
//!
//! ```toml
//! warehouse = "wh"
//! session_ttl = "8h"
//!
//! [[sources]]
//! id = "projects"
//! location = "data/projects.csv"
//! target = "project"
//! columns = { "Project Name" = "name" }
//!
//! [[jobs]]
//! name = "hourly-load"
//! kind = "pipeline_run"
//! every = "1h"
//! max_retries = 2
//! backoff = "30s"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::clock::{parse_duration, Timestamp};
use crate::etl::{SourceDescriptor, SourceFormat};
use crate::jobcontrol::{JobKind, JobSpec, Schedule};
use crate::schema::Relation;
use crate::security::{DEFAULT_ITERATIONS, DEFAULT_SESSION_TTL};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Syntax {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    warehouse: Option<PathBuf>,
    session_ttl: Option<String>,
    password_iterations: Option<u32>,
    notification_sink: Option<PathBuf>,
    #[serde(default)]
    sources: Vec<RawSource>,
    #[serde(default)]
    jobs: Vec<RawJob>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSource {
    id: String,
    location: PathBuf,
    target: String,
    format: Option<SourceFormat>,
    /// Source column to target field, on top of the identity mapping.
    #[serde(default)]
    columns: BTreeMap<String, String>,
    /// Disabled sources only load when named explicitly or by a job.
    #[serde(default = "yes")]
    enabled: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawJob {
    name: String,
    kind: JobKind,
    at: Option<String>,
    every: Option<String>,
    anchor: Option<String>,
    #[serde(default)]
    max_retries: u32,
    backoff: Option<String>,
    #[serde(default = "yes")]
    enabled: bool,
    #[serde(default)]
    notify_on_success: bool,
    /// Sources a `pipeline_run` job loads; all when absent.
    sources: Option<Vec<String>>,
}

fn yes() -> bool {
    true
}

/// A job section: the schedulable spec plus what the job acts on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobConfig {
    pub spec: JobSpec,
    pub sources: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub warehouse: Option<PathBuf>,
    pub session_ttl: Duration,
    pub password_iterations: u32,
    pub notification_sink: Option<PathBuf>,
    pub sources: Vec<SourceDescriptor>,
    pub jobs: Vec<JobConfig>,
    /// Ids of sources left out of a default run.
    pub disabled_sources: BTreeSet<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            warehouse: None,
            session_ttl: DEFAULT_SESSION_TTL,
            password_iterations: DEFAULT_ITERATIONS,
            notification_sink: None,
            sources: Vec::new(),
            jobs: Vec::new(),
            disabled_sources: BTreeSet::new(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).map_err(|e| match e {
            ConfigError::Syntax { source, .. } => ConfigError::Syntax {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax {
            path: PathBuf::new(),
            source: Box::new(e),
        })?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let duration = |what: &str, s: &str| {
            parse_duration(s).filter(|d| !d.is_zero()).ok_or_else(|| {
                ConfigError::Invalid(format!("{what}: {s:?} is not a positive duration"))
            })
        };

        let mut config = Config {
            warehouse: raw.warehouse.map(resolve),
            notification_sink: raw.notification_sink.map(resolve),
            ..Config::default()
        };
        if let Some(ttl) = raw.session_ttl {
            config.session_ttl = duration("session_ttl", &ttl)?;
        }
        if let Some(n) = raw.password_iterations {
            if n == 0 {
                return Err(ConfigError::Invalid(
                    "password_iterations must be positive".into(),
                ));
            }
            config.password_iterations = n;
        }

        for s in raw.sources {
            if config.sources.iter().any(|c| c.source_id == s.id) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate source id {:?}",
                    s.id
                )));
            }
            let target: Relation = s
                .target
                .parse()
                .map_err(|e| ConfigError::Invalid(format!("source {}: {e}", s.id)))?;
            let location = resolve(s.location);
            let format = s
                .format
                .unwrap_or_else(|| SourceFormat::from_path(&location));
            let mut desc = SourceDescriptor::new(s.id, format, location, target);
            for (column, field) in s.columns {
                desc.field_map.retain(|c, f| !(f == &field && c == f));
                desc.field_map.insert(column, field);
            }
            desc.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !s.enabled {
                config.disabled_sources.insert(desc.source_id.clone());
            }
            config.sources.push(desc);
        }

        for j in raw.jobs {
            let schedule = match (&j.at, &j.every) {
                (Some(at), None) => Schedule::Once {
                    at: Timestamp::parse_lenient(at).ok_or_else(|| {
                        ConfigError::Invalid(format!("job {}: bad time {at:?}", j.name))
                    })?,
                },
                (None, Some(every)) => Schedule::Every {
                    interval_secs: duration(&format!("job {} every", j.name), every)?.as_secs(),
                    anchor: match &j.anchor {
                        Some(a) => Some(Timestamp::parse_lenient(a).ok_or_else(|| {
                            ConfigError::Invalid(format!("job {}: bad anchor {a:?}", j.name))
                        })?),
                        None => None,
                    },
                },
                _ => {
                    return Err(ConfigError::Invalid(format!(
                        "job {}: exactly one of `at` or `every` is required",
                        j.name
                    )))
                }
            };
            let backoff_secs = match &j.backoff {
                Some(b) => parse_duration(b)
                    .ok_or_else(|| {
                        ConfigError::Invalid(format!("job {}: bad backoff {b:?}", j.name))
                    })?
                    .as_secs(),
                None => 0,
            };
            let spec = JobSpec {
                job_id: 0,
                name: j.name,
                kind: j.kind,
                schedule,
                max_retries: j.max_retries,
                backoff_secs,
                enabled: j.enabled,
                notify_on_success: j.notify_on_success,
            };
            spec.validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if config.jobs.iter().any(|c| c.spec.name == spec.name) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate job name {:?}",
                    spec.name
                )));
            }
            if let Some(ids) = &j.sources {
                if let Some(bad) = ids
                    .iter()
                    .find(|id| !config.sources.iter().any(|s| &s.source_id == *id))
                {
                    return Err(ConfigError::Invalid(format!(
                        "job {}: unknown source {bad:?}",
                        spec.name
                    )));
                }
            }
            config.jobs.push(JobConfig {
                spec,
                sources: j.sources,
            });
        }
        Ok(config)
    }

    /// Sources a run without explicit ids loads.
    pub fn default_sources(&self) -> Vec<SourceDescriptor> {
        self.sources
            .iter()
            .filter(|s| !self.disabled_sources.contains(&s.source_id))
            .cloned()
            .collect()
    }

    pub fn job(&self, name: &str) -> Option<&JobConfig> {
        self.jobs.iter().find(|j| j.spec.name == name)
    }
}
