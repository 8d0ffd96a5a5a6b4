use std::ffi::OsString;
use std::path::{Component, Path, PathBuf};

use crate::error::{Result, StoreError};
use crate::id::BranchId;

/// Result of a path lookup through the branch chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    /// The first chain element (current branch upward to base) holding a data
    /// entry for the path, plus the physical location of that entry.
    Found { layer: BranchId, path: PathBuf },
    /// The first chain element holding a tombstone for the path.
    Tombstoned { layer: BranchId },
    Absent,
}

impl Resolution {
    pub fn found_path(&self) -> Option<&Path> {
        match self {
            Resolution::Found { path, .. } => Some(path),
            _ => None,
        }
    }

    pub fn is_found(&self) -> bool {
        matches!(self, Resolution::Found { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    File,
    Dir,
    Symlink,
    Other,
}

impl EntryKind {
    pub fn of(ft: std::fs::FileType) -> Self {
        if ft.is_dir() {
            EntryKind::Dir
        } else if ft.is_symlink() {
            EntryKind::Symlink
        } else if ft.is_file() {
            EntryKind::File
        } else {
            EntryKind::Other
        }
    }
}

/// One entry of a merged directory listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirEntryInfo {
    pub name: OsString,
    pub kind: EntryKind,
}

/// Outcome of inspecting one layer for a path.
#[derive(Debug)]
pub(crate) enum LayerHit {
    Data(PathBuf),
    Tombstone,
    /// Lookup must not continue to farther layers (deleted or shadowed
    /// prefix, or an opaque recreated directory without the entry).
    CutOff,
    Transparent,
}

/// Normalizes a workspace-relative path: rejects absolute paths, `..`, and
/// embedded NULs. Returns the cleaned relative path ("" refers to the
/// branch-view root).
pub fn normalize_rel(path: &Path) -> Result<PathBuf> {
    let mut out = PathBuf::new();
    for comp in path.components() {
        match comp {
            Component::Normal(c) => out.push(c),
            Component::CurDir => {}
            _ => return Err(StoreError::InvalidPath(path.to_path_buf())),
        }
    }
    Ok(out)
}

/// Proper prefixes of `rel`, shortest first (excludes `rel` itself and the
/// empty prefix).
pub(crate) fn proper_prefixes(rel: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut cur = PathBuf::new();
    let comps: Vec<_> = rel.components().collect();
    if comps.len() <= 1 {
        return out;
    }
    for comp in &comps[..comps.len() - 1] {
        cur.push(comp);
        out.push(cur.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_rejects_escapes() {
        assert!(normalize_rel(Path::new("../x")).is_err());
        assert!(normalize_rel(Path::new("/abs")).is_err());
        assert!(normalize_rel(Path::new("a/../b")).is_err());
        assert_eq!(normalize_rel(Path::new("./a/b")).unwrap(), PathBuf::from("a/b"));
    }

    #[test]
    fn prefixes_in_order() {
        let p = proper_prefixes(Path::new("a/b/c"));
        assert_eq!(p, vec![PathBuf::from("a"), PathBuf::from("a/b")]);
        assert!(proper_prefixes(Path::new("a")).is_empty());
    }
}
