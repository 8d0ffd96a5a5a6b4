//! Content hashing of visible trees, used to check commit visibility and
//! abort identity. A branch view and a plain directory with the same names,
//! contents, and modes hash identically.

use std::fs;
use std::os::unix::ffi::OsStrExt;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::id::BranchId;
use crate::resolve::{EntryKind, Resolution};
use crate::store::BranchStore;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Record {
    rel: PathBuf,
    kind: u8, // 0 file, 1 dir, 2 symlink
    mode: u32,
    payload: Vec<u8>, // file content hash or symlink target
}

fn finish(mut records: Vec<Record>) -> [u8; 32] {
    records.sort();
    let mut h = Sha256::new();
    for r in records {
        h.update((r.rel.as_os_str().len() as u64).to_le_bytes());
        h.update(r.rel.as_os_str().as_bytes());
        h.update([r.kind]);
        h.update(r.mode.to_le_bytes());
        h.update((r.payload.len() as u64).to_le_bytes());
        h.update(&r.payload);
    }
    h.finalize().into()
}

fn file_payload(path: &Path) -> std::io::Result<Vec<u8>> {
    let mut h = Sha256::new();
    let mut f = fs::File::open(path)?;
    std::io::copy(&mut f, &mut h)?;
    Ok(h.finalize().to_vec())
}

fn record_physical(rel: &Path, phys: &Path) -> std::io::Result<Record> {
    let md = phys.symlink_metadata()?;
    let ft = md.file_type();
    let mode = md.permissions().mode() & 0o7777;
    if ft.is_symlink() {
        Ok(Record {
            rel: rel.to_path_buf(),
            kind: 2,
            mode: 0, // link modes are not meaningful on Linux
            payload: fs::read_link(phys)?.as_os_str().as_bytes().to_vec(),
        })
    } else if ft.is_dir() {
        Ok(Record {
            rel: rel.to_path_buf(),
            kind: 1,
            mode,
            payload: Vec::new(),
        })
    } else {
        Ok(Record {
            rel: rel.to_path_buf(),
            kind: 0,
            mode,
            payload: file_payload(phys)?,
        })
    }
}

/// Hash of a plain on-disk directory tree (names, contents, modes).
pub fn hash_dir(root: &Path) -> std::io::Result<[u8; 32]> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<Record>) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let rel = entry.path().strip_prefix(root).unwrap().to_path_buf();
            out.push(record_physical(&rel, &entry.path())?);
            if entry.file_type()?.is_dir() {
                walk(root, &entry.path(), out)?;
            }
        }
        Ok(())
    }
    let mut records = Vec::new();
    walk(root, root, &mut records)?;
    Ok(finish(records))
}

/// Hash of the visible tree of a branch, comparable with [`hash_dir`].
pub fn hash_branch_view(store: &BranchStore, branch: &BranchId) -> Result<[u8; 32]> {
    fn walk(
        store: &BranchStore,
        branch: &BranchId,
        rel: &Path,
        out: &mut Vec<Record>,
    ) -> Result<()> {
        for entry in store.list_dir(branch, rel)? {
            let child = rel.join(&entry.name);
            if let Resolution::Found { path, .. } = store.resolve(branch, &child)? {
                out.push(record_physical(&child, &path).map_err(crate::error::StoreError::Io)?);
                if entry.kind == EntryKind::Dir {
                    walk(store, branch, &child, out)?;
                }
            }
        }
        Ok(())
    }
    let mut records = Vec::new();
    walk(store, branch, Path::new(""), &mut records)?;
    Ok(finish(records))
}
