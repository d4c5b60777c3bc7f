//! Runs the twelve acceptance criteria and prints one status line each.
//! Built without the libtest harness so the lines always reach the console.

use std::process::ExitCode;

use spdelab::suite;

fn main() -> ExitCode {
    let out = tempfile::tempdir().expect("temporary directory");
    let started = std::time::Instant::now();
    let report = match suite::run_suite(out.path()) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("acceptance suite could not run: {e}");
            return ExitCode::FAILURE;
        }
    };
    for c in &report.criteria {
        println!("{}", c.summary());
    }
    println!("suite finished in {:.1} s", started.elapsed().as_secs_f64());
    let failed: Vec<usize> = report.criteria.iter().filter(|c| !c.pass()).map(|c| c.id).collect();
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
