use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::id::BranchId;

/// Lifecycle state of a branch.
///
/// `Stale` means the parent's epoch advanced past the value snapshotted at
/// fork time (a sibling committed). `Frozen` means the branch has live
/// children and rejects mutation. `Committed` and `Aborted` are terminal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchState {
    Active,
    Frozen,
    Stale,
    Committed,
    Aborted,
}

impl BranchState {
    pub fn is_terminal(self) -> bool {
        matches!(self, BranchState::Committed | BranchState::Aborted)
    }
}

impl std::fmt::Display for BranchState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BranchState::Active => "Active",
            BranchState::Frozen => "Frozen",
            BranchState::Stale => "Stale",
            BranchState::Committed => "Committed",
            BranchState::Aborted => "Aborted",
        };
        f.write_str(s)
    }
}

/// Metadata for one branch context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchMeta {
    pub id: BranchId,
    pub parent: Option<BranchId>,
    pub state: BranchState,
    /// Incremented each time a child commits into this branch.
    pub epoch: u64,
    /// Snapshot of the parent's epoch at fork time.
    pub parent_epoch_at_create: u64,
    pub group: Option<u64>,
    /// Count of live (non-terminal) child branches.
    pub children: u32,
}

impl BranchMeta {
    pub fn root() -> Self {
        BranchMeta {
            id: BranchId::root(),
            parent: None,
            state: BranchState::Active,
            epoch: 0,
            parent_epoch_at_create: 0,
            group: None,
            children: 0,
        }
    }
}

/// A set of sibling branches created together, of which at most one may
/// commit. The winner transitions none -> some exactly once.
#[derive(Debug, Clone)]
pub struct ExclusiveGroup {
    pub group_id: u64,
    pub members: BTreeSet<BranchId>,
    pub winner: Option<BranchId>,
}

/// Summary of what a commit applied to the parent.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommitReport {
    pub branch: String,
    pub files_applied: u64,
    pub bytes_copied: u64,
    pub tombstones_applied: u64,
    pub siblings_invalidated: u64,
}

/// On-disk metadata document, one per branch under
/// `<store>/branches/<name>/meta`. Human-readable TOML.
#[derive(Debug, Serialize, Deserialize)]
pub struct MetaDoc {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub state: BranchState,
    pub epoch: u64,
    pub parent_epoch_at_create: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_id: Option<u64>,
}

impl MetaDoc {
    pub fn from_meta(m: &BranchMeta) -> Self {
        MetaDoc {
            name: m.id.as_str().to_string(),
            parent: m.parent.as_ref().map(|p| p.as_str().to_string()),
            state: m.state,
            epoch: m.epoch,
            parent_epoch_at_create: m.parent_epoch_at_create,
            group_id: m.group,
        }
    }
}
