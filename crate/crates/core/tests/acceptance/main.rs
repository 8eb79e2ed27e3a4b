//! Acceptance suite. Runs every criterion in order, prints one verdict
//! line each with its elapsed time against the pinned bound, and exits
//! non-zero if any criterion fails.

#[path = "../common/mod.rs"]
mod common;

mod control;
mod etl;
mod store;

use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// Outcome detail on success, reason on failure.
pub type Verdict = Result<String, String>;

/// Fails the enclosing criterion with a formatted reason.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err(format!($($arg)+));
        }
    };
}

struct Criterion {
    number: u32,
    name: &'static str,
    bound: Duration,
    body: fn() -> Verdict,
}

const fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

const CRITERIA: [Criterion; 10] = [
    Criterion {
        number: 1,
        name: "schema completeness",
        bound: secs(1),
        body: store::schema_completeness,
    },
    Criterion {
        number: 2,
        name: "integrity fuzzing",
        bound: secs(30),
        body: store::integrity_fuzzing,
    },
    Criterion {
        number: 3,
        name: "etl idempotence",
        bound: secs(5),
        body: etl::idempotence,
    },
    Criterion {
        number: 4,
        name: "stage ledger",
        bound: secs(10),
        body: etl::stage_ledger,
    },
    Criterion {
        number: 5,
        name: "load atomicity",
        bound: secs(1),
        body: etl::load_atomicity,
    },
    Criterion {
        number: 6,
        name: "aggregate conservation",
        bound: secs(10),
        body: etl::aggregate_conservation,
    },
    Criterion {
        number: 7,
        name: "security",
        bound: secs(5),
        body: control::security,
    },
    Criterion {
        number: 8,
        name: "scheduler exactly-once",
        bound: secs(10),
        body: control::scheduler_exactly_once,
    },
    Criterion {
        number: 9,
        name: "pdl protocol",
        bound: secs(10),
        body: control::pdl_protocol,
    },
    Criterion {
        number: 10,
        name: "cli golden files",
        bound: secs(10),
        body: control::cli_golden,
    },
];

fn run(c: &Criterion) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(c.body));
    let elapsed = start.elapsed();
    let verdict = match outcome {
        Ok(Ok(detail)) if elapsed <= c.bound => Ok(detail),
        Ok(Ok(detail)) => Err(format!("{detail}; over time bound")),
        Ok(Err(reason)) => Err(reason),
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let (tag, detail) = match &verdict {
        Ok(d) => ("PASS", d.as_str()),
        Err(e) => ("FAIL", e.as_str()),
    };
    println!(
        "criterion {:>2} {:<24} {tag}  {:>6.2}s / {}s  {detail}",
        c.number,
        c.name,
        elapsed.as_secs_f64(),
        c.bound.as_secs()
    );
    let _ = std::io::stdout().flush();
    verdict.is_ok()
}

fn main() {
    // `cargo test -- --list` and similar harness probes
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for c in &CRITERIA {
            println!("criterion_{}: test", c.number);
        }
        return;
    }
    let filter = args.iter().find(|a| !a.starts_with('-'));
    let chosen: Vec<&Criterion> = CRITERIA
        .iter()
        .filter(|c| {
            filter.is_none_or(|f| c.name.contains(f.as_str()) || c.number.to_string() == *f)
        })
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let failed = chosen.iter().filter(|c| !run(c)).count();
    println!(
        "\nacceptance: {} passed, {failed} failed",
        chosen.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
