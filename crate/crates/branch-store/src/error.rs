use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the branch store. Each variant maps to a stable errno
/// so the filesystem layer can report POSIX-conforming error codes.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("branch name already in use: {0}")]
    DuplicateName(String),

    #[error("invalid branch name: {0}")]
    InvalidName(String),

    #[error("unknown branch: {0}")]
    UnknownBranch(String),

    /// The branch lost the exclusive-group race or its parent's epoch moved.
    #[error("branch is stale: {0}")]
    Stale(String),

    /// The branch has live children and is read-only.
    #[error("branch is frozen (has live children): {0}")]
    Frozen(String),

    /// Committed and Aborted branches accept no further operations.
    #[error("branch is in a terminal state: {0}")]
    Terminal(String),

    #[error("no such path: {0}")]
    NotFound(PathBuf),

    #[error("path already exists: {0}")]
    AlreadyExists(PathBuf),

    #[error("not a directory: {0}")]
    NotADirectory(PathBuf),

    #[error("is a directory: {0}")]
    IsADirectory(PathBuf),

    #[error("directory not empty: {0}")]
    NotEmpty(PathBuf),

    #[error("invalid path: {0}")]
    InvalidPath(PathBuf),

    /// FIFOs, sockets and device nodes are unsupported in delta layers.
    #[error("unsupported file type: {0}")]
    UnsupportedFileType(PathBuf),

    #[error("cross-branch rename is not supported")]
    CrossBranchRename,

    #[error("exclusive group must contain at least one branch")]
    EmptyGroup,

    #[error("operation not valid on the root branch")]
    RootBranch,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl StoreError {
    /// Stable errno mapping, documented as part of the external contract.
    pub fn errno(&self) -> i32 {
        use StoreError::*;
        match self {
            DuplicateName(_) | AlreadyExists(_) => libc::EEXIST,
            InvalidName(_) | EmptyGroup | RootBranch => libc::EINVAL,
            UnknownBranch(_) | NotFound(_) => libc::ENOENT,
            Stale(_) => libc::ESTALE,
            Frozen(_) => libc::EROFS,
            Terminal(_) => libc::ESTALE,
            NotADirectory(_) => libc::ENOTDIR,
            IsADirectory(_) => libc::EISDIR,
            NotEmpty(_) => libc::ENOTEMPTY,
            InvalidPath(_) => libc::EINVAL,
            UnsupportedFileType(_) => libc::EOPNOTSUPP,
            CrossBranchRename => libc::EXDEV,
            Io(e) => e.raw_os_error().unwrap_or(libc::EIO),
        }
    }
}

pub type Result<T> = std::result::Result<T, StoreError>;
