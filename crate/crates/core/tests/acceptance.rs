//! Full acceptance suite: one line per criterion, nonzero exit on failure.

use std::process::ExitCode;

use helfrich_core::validation::{run_all, ALL};

fn main() -> ExitCode {
    let outcomes = run_all(&ALL);
    let mut failed = 0;
    for o in &outcomes {
        println!("{}", o.line());
        if !o.passed {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {} failed", outcomes.len() - failed, failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
