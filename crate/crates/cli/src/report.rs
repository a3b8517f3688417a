//! Machine-readable run reports. JSON goes to stdout, a short human
//! summary to stderr; timing lives under its own key so reports from two
//! identically-seeded runs differ only there.

use serde::Serialize;
use std::collections::BTreeMap;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
}

/// How `measured` relates to `tolerance` for a passing check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub measured: f64,
    pub tolerance: f64,
    pub direction: Direction,
}

impl Check {
    pub fn at_most(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            status: if measured <= tolerance { Status::Pass } else { Status::Fail },
            measured,
            tolerance,
            direction: Direction::AtMost,
        }
    }

    pub fn at_least(name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            status: if measured >= tolerance { Status::Pass } else { Status::Fail },
            measured,
            tolerance,
            direction: Direction::AtLeast,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub precision: String,
    pub threads: Option<usize>,
    pub status: Status,
    pub checks: Vec<Check>,
    /// Free-form numeric measurements (timings in ms live under `timing`).
    pub measurements: BTreeMap<String, f64>,
    pub timing: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(command: &str, seed: u64, precision: &str, threads: Option<usize>) -> Self {
        Self {
            command: command.to_string(),
            seed,
            precision: precision.to_string(),
            threads,
            status: Status::Pass,
            checks: Vec::new(),
            measurements: BTreeMap::new(),
            timing: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, check: Check) {
        if !check.passed() {
            self.status = Status::Fail;
        }
        self.checks.push(check);
    }

    pub fn measure(&mut self, name: &str, value: f64) {
        self.measurements.insert(name.to_string(), value);
    }

    pub fn time(&mut self, name: &str, ms: f64) {
        self.timing.insert(name.to_string(), ms);
    }

    /// Prints JSON to stdout and a one-line-per-check summary to stderr;
    /// returns the process exit code.
    pub fn emit(&self) -> i32 {
        println!("{}", serde_json::to_string_pretty(self).expect("report serializes"));
        for check in &self.checks {
            let cmp = match check.direction {
                Direction::AtMost => "<=",
                Direction::AtLeast => ">=",
            };
            eprintln!(
                "[{}] {}: measured {:.3e} ({cmp} {:.3e})",
                if check.passed() { "PASS" } else { "FAIL" },
                check.name,
                check.measured,
                check.tolerance,
            );
        }
        if self.status == Status::Pass {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        }
    }
}
