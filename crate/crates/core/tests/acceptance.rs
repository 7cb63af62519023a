//! The eleven acceptance criteria at their stated tolerances.
//!
//! Prints one PASS/FAIL line per criterion (run with `--nocapture` to see
//! them), then fails if any criterion failed.

use rollout_budget::verify::{run_suite_with, VerifyOptions};

#[test]
fn acceptance() {
    let results = run_suite_with(&VerifyOptions::default(), |r| println!("{r}"));
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("criterion {} ({}): {}", r.id, r.name, r.detail))
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    assert!(failed.is_empty(), "failed:\n{}", failed.join("\n"));
}
