//! Mount-relative path routing: `@<branch>/...` prefixes select a branch,
//! everything else goes to the mount's default branch. `@` components below
//! the root are ordinary names.

use std::ffi::OsStr;
use std::path::{Component, Path, PathBuf};

use branch_store::BranchId;

pub const CONTROL_NAME: &str = ".branchfs_ctl";

/// A workspace path resolved to (branch, branch-relative path).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutedPath {
    pub branch: BranchId,
    pub rel: PathBuf,
}

/// What a mount-relative path points at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    /// The mount root itself.
    Root,
    /// The control file (only valid when control is enabled).
    Control,
    /// A `@<name>` directory at the root (the branch's own root).
    BranchRoot(BranchId),
    /// An ordinary entry inside some branch's view.
    Entry(RoutedPath),
}

/// Classifies a path relative to the mount root ("" is the root itself).
/// `default_branch` receives everything without a `@` prefix.
pub fn route(path: &Path, default_branch: &BranchId) -> Option<Target> {
    let mut comps = path.components();
    let first = match comps.next() {
        None => return Some(Target::Root),
        Some(Component::Normal(c)) => c,
        Some(_) => return None,
    };
    let rest: PathBuf = comps.as_path().to_path_buf();
    let first_str = first.to_str()?;

    if first_str == CONTROL_NAME {
        return if rest.as_os_str().is_empty() {
            Some(Target::Control)
        } else {
            None
        };
    }

    if let Some(name) = first_str.strip_prefix('@') {
        let branch = BranchId::parse(name).ok()?;
        if rest.as_os_str().is_empty() {
            return Some(Target::BranchRoot(branch));
        }
        return Some(Target::Entry(RoutedPath { branch, rel: rest }));
    }

    Some(Target::Entry(RoutedPath {
        branch: default_branch.clone(),
        rel: path.to_path_buf(),
    }))
}

/// True if a root-directory entry name is reserved by the mount
/// (and would shadow a base file of the same name).
pub fn is_reserved_root_name(name: &OsStr) -> bool {
    match name.to_str() {
        Some(s) => s == CONTROL_NAME || s.starts_with('@'),
        None => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dflt() -> BranchId {
        BranchId::root()
    }

    #[test]
    fn root_path_routes_to_root() {
        assert_eq!(route(Path::new(""), &dflt()), Some(Target::Root));
    }

    #[test]
    fn at_prefix_selects_branch() {
        let t = route(Path::new("@feature-a/src/main.py"), &dflt()).unwrap();
        let Target::Entry(r) = t else { panic!("{t:?}") };
        assert_eq!(r.branch.as_str(), "feature-a");
        assert_eq!(r.rel, PathBuf::from("src/main.py"));
    }

    #[test]
    fn plain_path_routes_to_default() {
        let t = route(Path::new("README"), &dflt()).unwrap();
        let Target::Entry(r) = t else { panic!("{t:?}") };
        assert_eq!(r.branch.as_str(), "root");
        assert_eq!(r.rel, PathBuf::from("README"));
    }

    #[test]
    fn at_below_root_is_ordinary() {
        let t = route(Path::new("dir/@weird"), &dflt()).unwrap();
        let Target::Entry(r) = t else { panic!("{t:?}") };
        assert_eq!(r.rel, PathBuf::from("dir/@weird"));
    }

    #[test]
    fn control_name_is_special_only_at_root() {
        assert_eq!(route(Path::new(".branchfs_ctl"), &dflt()), Some(Target::Control));
        let t = route(Path::new("sub/.branchfs_ctl"), &dflt()).unwrap();
        assert!(matches!(t, Target::Entry(_)));
    }

    #[test]
    fn bad_branch_name_is_unroutable() {
        assert_eq!(route(Path::new("@"), &dflt()), None);
    }
}
