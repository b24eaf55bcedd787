//! End-to-end acceptance criteria 1 to 11, one summary line per criterion.

use std::io::Write;

use fedsea::acceptance::run_all;

#[test]
fn acceptance_criteria() {
    let scratch = tempfile::tempdir().unwrap();
    let reports = run_all(scratch.path());
    // Written straight to stderr so the lines survive output capture.
    let mut err = std::io::stderr().lock();
    for r in &reports {
        writeln!(err, "{r}").unwrap();
    }
    assert_eq!(reports.len(), 11);
    let failed: Vec<u8> = reports.iter().filter(|r| !r.pass).map(|r| r.id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
