//! Copy-on-write branching storage engine.
//!
//! Branches form a tree rooted at the base directory. Each branch owns a
//! delta layer (a data tree plus a tombstone tree); lookups walk the chain
//! from the branch up to the base. Siblings created together form an
//! exclusive group with first-commit-wins arbitration: the first commit
//! applies its delta to the parent and invalidates the others.
//!
//! The engine is fully usable without any filesystem mount; the FUSE
//! presentation layer is a separate crate.

mod error;
mod id;
mod meta;
pub mod oracle;
mod recorder;
mod resolve;
mod store;
pub mod treehash;

pub use error::{Result, StoreError};
pub use id::{BranchId, ROOT_NAME};
pub use meta::{BranchMeta, BranchState, CommitReport, ExclusiveGroup, MetaDoc};
pub use recorder::OpTimings;
pub use resolve::{normalize_rel, DirEntryInfo, EntryKind, Resolution};
pub use store::BranchStore;
