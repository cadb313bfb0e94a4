//! `gradcheck`: run the gradient verification suite and print one line
//! per registered check.

use wstan_core::error::Result;
use wstan_core::suite::{faulty_fixture_entry, run_suite, SuiteReport, TOLERANCE};

use crate::config::RunConfig;

/// Runs the suite (plus the deliberately broken fixture when asked) and
/// prints the per-check table. Returns whether everything passed.
pub fn run(cfg: &RunConfig, inject_fault: bool) -> Result<bool> {
    let mut report: SuiteReport = run_suite(cfg.train_seed)?;
    if inject_fault {
        report.entries.push(faulty_fixture_entry(cfg.train_seed)?);
    }
    for entry in &report.entries {
        println!(
            "{}: max_rel_err={:.3e} {}",
            entry.name,
            entry.max_rel_err,
            if entry.pass { "PASS" } else { "FAIL" }
        );
    }
    let all_pass = report.all_pass();
    println!(
        "{} checks, worst {:.3e}, tolerance {:.1e}: {}",
        report.entries.len(),
        report.worst(),
        TOLERANCE,
        if all_pass { "PASS" } else { "FAIL" }
    );
    Ok(all_pass)
}
