//! Runs named checks and prints one verdict line per check.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

/// Whether a failure should fail the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Gating,
    Advisory,
}

#[derive(Debug, Default)]
pub struct Scoreboard {
    failed_gating: Vec<String>,
    total: usize,
}

impl Scoreboard {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs `check`, which returns a short detail line on success. Panics
    /// count as failures.
    pub fn run(&mut self, name: &str, gate: Gate, check: impl FnOnce() -> Result<String, String>) {
        self.total += 1;
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        let secs = started.elapsed().as_secs_f64();
        let tag = if gate == Gate::Advisory { " (non-gating)" } else { "" };
        match outcome {
            Ok(detail) => println!("PASS  {name}{tag} [{secs:.2}s]: {detail}"),
            Err(detail) => {
                println!("FAIL  {name}{tag} [{secs:.2}s]: {detail}");
                if gate == Gate::Gating {
                    self.failed_gating.push(name.to_string());
                }
            }
        }
    }

    /// Prints a summary; true when every gating check passed.
    pub fn finish(&self) -> bool {
        if self.failed_gating.is_empty() {
            println!("{} checks run, all gating checks passed", self.total);
            true
        } else {
            println!("{} checks run, gating failures: {}", self.total, self.failed_gating.join(", "));
            false
        }
    }
}

/// Fails with `what` unless `cond` holds.
pub fn ensure(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}
