//! Fast runs of each scenario with scaled-down parameters: the point is
//! that the harness produces well-formed reports and that the relative
//! shape assertions hold even at desk scale.

use branchfs_bench::{bench_commit_abort, bench_creation, bench_throughput};

#[test]
fn creation_is_flat_across_base_sizes() {
    let report = bench_creation(&[100, 500], 5).unwrap();
    assert_eq!(report.points.len(), 2);
    assert_eq!(report.samples.len(), 10);
    assert!(report.passed(), "{}", report.to_markdown());
}

#[test]
fn commit_grows_and_abort_stays_cheap() {
    let report = bench_commit_abort(&[1_000, 1_000_000], 5).unwrap();
    assert_eq!(report.points.len(), 4);
    assert!(report.passed(), "{}", report.to_markdown());
    // raw samples cover every (op, size, trial) combination
    assert_eq!(report.samples.len(), 20);
}

#[test]
fn throughput_reports_all_four_rows() {
    let report = bench_throughput(4 * 1024 * 1024, 64 * 1024).unwrap();
    let params: Vec<&str> = report.points.iter().map(|p| p.param.as_str()).collect();
    assert_eq!(
        params,
        ["native write", "native read", "mounted write", "mounted read"]
    );
    assert!(report.points.iter().all(|p| p.median > 0.0));
    let md = report.to_markdown();
    assert!(md.contains("MB/s"));
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 5);
}
