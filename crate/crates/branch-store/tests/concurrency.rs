//! First-commit-wins arbitration under true parallelism and under every
//! deterministic completion order.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use branch_store::{BranchId, BranchState, BranchStore, StoreError};
use tempfile::TempDir;

fn setup() -> (TempDir, Arc<BranchStore>) {
    let tmp = TempDir::new().unwrap();
    let base = tmp.path().join("base");
    fs::create_dir(&base).unwrap();
    fs::write(base.join("seed.txt"), b"seed").unwrap();
    let store = Arc::new(BranchStore::open(&base, tmp.path().join("store")).unwrap());
    (tmp, store)
}

#[test]
fn parallel_commit_race_has_exactly_one_winner() {
    for trial in 0..20 {
        let (_tmp, store) = setup();
        let names: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
        let ids = store
            .create_branch_group(&BranchId::root(), &names)
            .unwrap();
        for (i, id) in ids.iter().enumerate() {
            store
                .write_file(id, Path::new(&format!("out{i}")), 0, b"x")
                .unwrap();
        }
        let barrier = Arc::new(std::sync::Barrier::new(ids.len()));
        let handles: Vec<_> = ids
            .iter()
            .map(|id| {
                let store = Arc::clone(&store);
                let id = id.clone();
                let barrier = Arc::clone(&barrier);
                std::thread::spawn(move || {
                    barrier.wait();
                    store.commit_branch(&id)
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let wins = results.iter().filter(|r| r.is_ok()).count();
        let stales = results
            .iter()
            .filter(|r| matches!(r, Err(StoreError::Stale(_))))
            .count();
        assert_eq!(wins, 1, "trial {trial}: expected one winner");
        assert_eq!(stales, 7, "trial {trial}: expected seven stale losers");
    }
}

#[test]
fn all_completion_orders_of_three_are_deterministic() {
    let perms: Vec<[usize; 3]> = vec![
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    for perm in perms {
        let (_tmp, store) = setup();
        let names: Vec<String> = (0..3).map(|i| format!("g{i}")).collect();
        let ids = store
            .create_branch_group(&BranchId::root(), &names)
            .unwrap();
        for (i, id) in ids.iter().enumerate() {
            store
                .write_file(id, Path::new(&format!("f{i}")), 0, b"d")
                .unwrap();
        }
        for (pos, &idx) in perm.iter().enumerate() {
            let result = store.commit_branch(&ids[idx]);
            if pos == 0 {
                result.unwrap_or_else(|e| panic!("{perm:?}: first committer failed: {e}"));
            } else {
                assert!(
                    matches!(result, Err(StoreError::Stale(_))),
                    "{perm:?}: position {pos} should be stale"
                );
            }
        }
        // the winner's file and only the winner's file reached the base
        for i in 0..3 {
            let exists = store.base_dir().join(format!("f{i}")).exists();
            assert_eq!(exists, i == perm[0], "{perm:?}: f{i}");
        }
        assert_eq!(
            store.branch_status(&ids[perm[0]]).unwrap().state,
            BranchState::Committed
        );
    }
}

#[test]
fn concurrent_data_ops_on_siblings_stay_isolated() {
    let (_tmp, store) = setup();
    let names: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
    let ids = store
        .create_branch_group(&BranchId::root(), &names)
        .unwrap();
    let handles: Vec<_> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let store = Arc::clone(&store);
            let id = id.clone();
            std::thread::spawn(move || {
                for k in 0..50 {
                    store
                        .write_file(&id, Path::new(&format!("mine-{i}-{k}")), 0, &[i as u8; 64])
                        .unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    for (i, id) in ids.iter().enumerate() {
        let entries = store.list_dir(id, Path::new("")).unwrap();
        let mine = entries
            .iter()
            .filter(|e| e.name.to_string_lossy().starts_with("mine-"))
            .count();
        assert_eq!(mine, 50, "branch {i} sees only its own files");
    }
}
