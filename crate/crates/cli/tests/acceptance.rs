//! Runs the full acceptance suite and prints one line per criterion.

use std::process::ExitCode;

use gibbsdiff_cli::acceptance::{run_suite, Tolerances, N_CRITERIA};

const SEED: u64 = 20_240_917;

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    println!("acceptance suite, seed {SEED}, artifacts in {}", dir.path().display());
    let results = match run_suite(SEED, &Tolerances::default(), dir.path(), |r| println!("{}", r.line())) {
        Ok(r) => r,
        Err(e) => {
            println!("acceptance suite aborted: {e}");
            return ExitCode::FAILURE;
        }
    };
    let passed = results.iter().filter(|r| r.pass()).count();
    println!("acceptance: {passed}/{N_CRITERIA} criteria passed");
    if results.len() == N_CRITERIA && passed == N_CRITERIA {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
