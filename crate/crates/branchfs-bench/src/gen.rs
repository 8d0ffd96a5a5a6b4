//! Deterministic base-tree generation for the latency scenarios.

use std::fs;
use std::io;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_FILE_SIZE: usize = 1024;
pub const DEFAULT_FANOUT: usize = 100;

/// Fills `dest` (which must be empty) with `file_count` files of
/// `file_size` pseudo-random bytes, at most `fanout` entries per directory.
/// The same seed always produces the identical tree.
pub fn gen_tree(
    dest: &Path,
    file_count: usize,
    file_size: usize,
    fanout: usize,
    seed: u64,
) -> io::Result<()> {
    fs::create_dir_all(dest)?;
    if fs::read_dir(dest)?.next().is_some() {
        return Err(io::Error::new(
            io::ErrorKind::AlreadyExists,
            "destination is not empty",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = vec![0u8; file_size];
    for i in 0..file_count {
        let dir = if file_count <= fanout {
            dest.to_path_buf()
        } else {
            let d = dest.join(format!("d{:03}", i / fanout));
            if i % fanout == 0 {
                fs::create_dir(&d)?;
            }
            d
        };
        rng.fill_bytes(&mut buf);
        fs::write(dir.join(format!("f{i:05}.dat")), &buf)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use branch_store::treehash::hash_dir;
    use tempfile::TempDir;

    #[test]
    fn small_tree_is_flat() {
        let tmp = TempDir::new().unwrap();
        let dest = tmp.path().join("t");
        gen_tree(&dest, 100, 64, 100, 7).unwrap();
        let entries: Vec<_> = fs::read_dir(&dest).unwrap().collect();
        assert_eq!(entries.len(), 100);
        assert!(entries.iter().all(|e| e.as_ref().unwrap().path().is_file()));
    }

    #[test]
    fn large_tree_has_depth_two_at_fanout() {
        let tmp = TempDir::new().unwrap();
        let dest = tmp.path().join("t");
        gen_tree(&dest, 250, 16, 100, 7).unwrap();
        let dirs: Vec<_> = fs::read_dir(&dest).unwrap().collect();
        assert_eq!(dirs.len(), 3); // 100 + 100 + 50
    }

    #[test]
    fn same_seed_same_hash() {
        let tmp = TempDir::new().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        gen_tree(&a, 120, 64, 100, 42).unwrap();
        gen_tree(&b, 120, 64, 100, 42).unwrap();
        assert_eq!(hash_dir(&a).unwrap(), hash_dir(&b).unwrap());
        let c = tmp.path().join("c");
        gen_tree(&c, 120, 64, 100, 43).unwrap();
        assert_ne!(hash_dir(&a).unwrap(), hash_dir(&c).unwrap());
    }

    #[test]
    fn refuses_nonempty_destination() {
        let tmp = TempDir::new().unwrap();
        fs::write(tmp.path().join("x"), b"x").unwrap();
        assert!(gen_tree(tmp.path(), 10, 16, 100, 1).is_err());
    }
}
