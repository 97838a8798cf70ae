//! End-to-end acceptance gate: runs all ten criteria and prints one
//! pass/fail line per criterion.  Run with `--nocapture` to see the lines
//! even when everything passes.

use conewave_core::acceptance::run_all;

#[test]
fn acceptance_gate() {
    let results = run_all();
    let mut all_ok = true;
    for c in &results {
        let tag = if c.passed { "pass" } else { "FAIL" };
        println!(
            "[{tag}] {:>2}. {:<32} {:>7.1}s  {}",
            c.index, c.name, c.seconds, c.detail
        );
        all_ok &= c.passed;
    }
    assert!(all_ok, "one or more acceptance criteria failed");
}
