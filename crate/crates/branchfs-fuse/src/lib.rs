//! FUSE presentation layer for the branch store.
//!
//! Routes `@<branch>/...` paths to branch views, serves the default branch at
//! the mount root, exposes the `.branchfs_ctl` control file, and implements
//! the three branch ioctls. All branching semantics live in `branch-store`;
//! this crate only translates the kernel protocol.

mod adapter;
pub mod control;
mod mount;
pub mod route;

pub use adapter::{BranchFs, FS_IOC_BRANCH_ABORT, FS_IOC_BRANCH_COMMIT, FS_IOC_BRANCH_CREATE};
pub use control::ControlCommand;
pub use mount::{mount_background, mount_foreground, open_store, BranchMount, MountConfig};
pub use route::{RoutedPath, Target, CONTROL_NAME};
