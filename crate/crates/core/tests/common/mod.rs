//! Helpers shared by the integration test targets.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use tempfile::TempDir;

pub const ROOT_USER: &str = "root";
pub const ROOT_PASSWORD: &str = "sentinel-Root-000";

/// Sentinel passwords for the staff rows in the corpus.
pub const STAFF_PASSWORDS: [(&str, &str); 3] = [
    ("zahmed", "sentinel-Zahmed-9f3"),
    ("dgerhard", "sentinel-Dgerhard-4c1"),
    ("mkhan", "sentinel-Mkhan-7e2"),
];

pub fn corpus_src() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus")
}

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &dest);
        } else {
            fs::copy(entry.path(), dest).unwrap();
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub args: String,
    pub stdout: String,
    pub stderr: String,
    pub code: i32,
}

/// A private copy of the fixture corpus that the `pdmw` binary runs in.
pub struct Corpus {
    pub dir: TempDir,
}

impl Corpus {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&corpus_src(), dir.path());
        Corpus { dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn warehouse(&self) -> PathBuf {
        self.path().join("wh")
    }

    /// Runs `pdmw --config pdmw.toml <args>` at the given clock. `auth` is a
    /// (username, password) pair; the password travels in the environment.
    pub fn run(&self, clock: &str, auth: Option<(&str, &str)>, args: &[&str]) -> Outcome {
        self.run_env(clock, auth, &[], args)
    }

    pub fn run_env(
        &self,
        clock: &str,
        auth: Option<(&str, &str)>,
        env: &[(&str, &str)],
        args: &[&str],
    ) -> Outcome {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_pdmw"));
        cmd.current_dir(self.path())
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .env("PDMW_CLOCK", clock)
            .env("PDMW_LOG", "error")
            .arg("--config")
            .arg("pdmw.toml");
        if let Some((user, password)) = auth {
            cmd.arg("--user").arg(user).env("PDMW_PASSWORD", password);
        }
        for (k, v) in env {
            cmd.env(k, v);
        }
        let out = cmd.args(args).output().unwrap();
        let mut shown = Vec::new();
        if let Some((user, _)) = auth {
            shown.push(format!("--user {user}"));
        }
        shown.extend(args.iter().map(|a| {
            if a.contains(' ') {
                format!("{a:?}")
            } else {
                a.to_string()
            }
        }));
        Outcome {
            args: shown.join(" "),
            stdout: String::from_utf8(out.stdout).unwrap(),
            stderr: String::from_utf8(out.stderr).unwrap(),
            code: out.status.code().unwrap_or(-1),
        }
    }

    pub fn root(&self, clock: &str, args: &[&str]) -> Outcome {
        self.run(clock, Some((ROOT_USER, ROOT_PASSWORD)), args)
    }

    /// `init` followed by the bootstrap admin account.
    pub fn bootstrap(&self, clock: &str) -> Vec<Outcome> {
        vec![
            self.run(clock, None, &["init"]),
            self.run_env(
                clock,
                None,
                &[("PDMW_NEW_PASSWORD", ROOT_PASSWORD)],
                &[
                    "user",
                    "add",
                    "--username",
                    ROOT_USER,
                    "--name",
                    "Root Admin",
                    "--org",
                    "TU Wien",
                    "--org-type",
                    "UNI",
                ],
            ),
        ]
    }

    pub fn file_bytes(&self, rel: &str) -> Vec<u8> {
        fs::read(self.path().join(rel)).unwrap_or_default()
    }
}

/// Renders outcomes as a shell-like transcript.
pub fn transcript(steps: &[(String, Outcome)]) -> String {
    let mut s = String::new();
    for (clock, o) in steps {
        s.push_str(&format!("$ PDMW_CLOCK={clock} pdmw {}\n", o.args));
        s.push_str(&o.stdout);
        for line in o.stderr.lines() {
            s.push_str(&format!("stderr: {line}\n"));
        }
        s.push_str(&format!("[exit {}]\n\n", o.code));
    }
    s
}

/// Compares `actual` against `tests/golden/<name>`, rewriting it instead
/// when UPDATE_GOLDEN=1.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some_and(|v| v == "1") {
        fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = fs::read_to_string(&path)
        .map_err(|e| format!("{}: {e} (run with UPDATE_GOLDEN=1)", path.display()))?;
    if expected == actual {
        return Ok(());
    }
    let first = expected
        .lines()
        .zip(actual.lines())
        .position(|(a, b)| a != b)
        .unwrap_or(expected.lines().count().min(actual.lines().count()));
    Err(format!(
        "{name} differs at line {}:\n  expected: {:?}\n  actual:   {:?}",
        first + 1,
        expected.lines().nth(first),
        actual.lines().nth(first)
    ))
}

pub const T_LOAD: &str = "2009-01-05T12:00:00Z";
pub const T_TICK: &str = "2009-01-05T14:05:00Z";

/// The documented operator flow; returns the transcript steps.
pub fn golden_flow(c: &Corpus) -> Vec<(String, Outcome)> {
    let mut steps: Vec<(String, Outcome)> = c
        .bootstrap(T_LOAD)
        .into_iter()
        .map(|o| (T_LOAD.to_string(), o))
        .collect();
    let at = |t: &str, o: Outcome| (t.to_string(), o);
    steps.push(at(T_LOAD, c.root(T_LOAD, &["etl", "run"])));
    steps.push(at(T_LOAD, c.root(T_LOAD, &["report", "projects"])));
    steps.push(at(T_LOAD, c.root(T_LOAD, &["report", "aggregates"])));
    steps.push(at(T_LOAD, c.root(T_LOAD, &["jobs", "add"])));
    steps.push(at(T_TICK, c.root(T_TICK, &["jobs", "tick"])));
    steps.push(at(T_TICK, c.root(T_TICK, &["jobs", "status"])));
    steps.push(at(T_TICK, c.root(T_TICK, &["status"])));
    steps
}

/// Error paths and their exit codes.
pub fn golden_errors(c: &Corpus) -> Vec<(String, Outcome)> {
    let mut steps: Vec<(String, Outcome)> = c
        .bootstrap(T_LOAD)
        .into_iter()
        .map(|o| (T_LOAD.to_string(), o))
        .collect();
    let at = |o: Outcome| (T_LOAD.to_string(), o);
    let (mkhan, mkhan_pw) = STAFF_PASSWORDS[2];
    steps.push(at(c.run(T_LOAD, None, &["init"])));
    steps.push(at(c.root(T_LOAD, &["etl", "run", "--source", "types"])));
    steps.push(at(c.run(T_LOAD, Some(("root", "wrong")), &["status"])));
    steps.push(at(c.run(T_LOAD, Some(("ghost", "wrong")), &["status"])));
    steps.push(at(c.root(T_LOAD, &["etl", "run", "--source", "nope"])));
    steps.push(at(c.root(T_LOAD, &["etl", "run"])));
    steps.push(at(c.run(T_LOAD, Some((mkhan, mkhan_pw)), &["etl", "run"])));
    steps.push(at(c.run(T_LOAD, Some((mkhan, mkhan_pw)), &["snapshot"])));
    steps
}
