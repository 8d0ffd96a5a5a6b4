//! The `.branchfs_ctl` line protocol.
//!
//! Writes carry one newline-terminated ASCII command per line:
//!
//! ```text
//! create <parent> <name> [<name>...]
//! commit <name>
//! abort <name>
//! list
//! status <name>
//! ```
//!
//! `create` with several names forks them as one exclusive group. Errors are
//! reported by failing the write with the mapped errno. Reading the control
//! file returns one line per branch, `<name> <parent> <state> <epoch>\n`;
//! after a `status` write the next read on the same descriptor returns that
//! branch's line instead (plus a `report ...` line once it has committed).

use std::sync::Arc;

use branch_store::{BranchId, BranchStore, StoreError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlCommand {
    Create { parent: String, names: Vec<String> },
    Commit { name: String },
    Abort { name: String },
    List,
    Status { name: String },
}

impl ControlCommand {
    /// Parses one command line (without the trailing newline).
    pub fn parse(line: &str) -> Result<Self, StoreError> {
        let mut words = line.split_ascii_whitespace();
        let verb = words.next().ok_or_else(|| bad(line))?;
        let args: Vec<&str> = words.collect();
        match (verb, args.as_slice()) {
            ("create", [parent, names @ ..]) if !names.is_empty() => Ok(ControlCommand::Create {
                parent: parent.to_string(),
                names: names.iter().map(|s| s.to_string()).collect(),
            }),
            ("commit", [name]) => Ok(ControlCommand::Commit {
                name: name.to_string(),
            }),
            ("abort", [name]) => Ok(ControlCommand::Abort {
                name: name.to_string(),
            }),
            ("list", []) => Ok(ControlCommand::List),
            ("status", [name]) => Ok(ControlCommand::Status {
                name: name.to_string(),
            }),
            _ => Err(bad(line)),
        }
    }
}

fn bad(line: &str) -> StoreError {
    StoreError::InvalidName(format!("unrecognized control line: {line:?}"))
}

/// Runs one command. `Ok(Some(text))` queues a response for the next read on
/// the same handle; `Ok(None)` has nothing to report back.
pub fn execute(store: &Arc<BranchStore>, cmd: &ControlCommand) -> Result<Option<String>, StoreError> {
    match cmd {
        ControlCommand::Create { parent, names } => {
            let parent = BranchId::parse(parent)?;
            store.create_branch_group(&parent, names)?;
            Ok(None)
        }
        ControlCommand::Commit { name } => {
            let id = BranchId::parse(name)?;
            store.commit_branch(&id)?;
            Ok(None)
        }
        ControlCommand::Abort { name } => {
            let id = BranchId::parse(name)?;
            store.abort_branch(&id)?;
            Ok(None)
        }
        ControlCommand::List => Ok(Some(list_text(store))),
        ControlCommand::Status { name } => {
            let id = BranchId::parse(name)?;
            let meta = store.branch_status(&id)?;
            let mut text = branch_line(
                meta.id.as_str(),
                meta.parent.as_ref().map(|p| p.as_str()),
                &meta.state.to_string(),
                meta.epoch,
            );
            if let Some(r) = store.last_report(&id) {
                text.push_str(&format!(
                    "report {} {} {} {}\n",
                    r.files_applied, r.bytes_copied, r.tombstones_applied, r.siblings_invalidated
                ));
            }
            Ok(Some(text))
        }
    }
}

/// The default read body: every known branch, root first.
pub fn list_text(store: &Arc<BranchStore>) -> String {
    let mut out = String::new();
    for meta in store.list_branches() {
        out.push_str(&branch_line(
            meta.id.as_str(),
            meta.parent.as_ref().map(|p| p.as_str()),
            &meta.state.to_string(),
            meta.epoch,
        ));
    }
    out
}

fn branch_line(name: &str, parent: Option<&str>, state: &str, epoch: u64) -> String {
    format!("{} {} {} {}\n", name, parent.unwrap_or("-"), state, epoch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_specified_forms() {
        assert_eq!(
            ControlCommand::parse("create root b1").unwrap(),
            ControlCommand::Create {
                parent: "root".into(),
                names: vec!["b1".into()]
            }
        );
        assert_eq!(
            ControlCommand::parse("commit b1").unwrap(),
            ControlCommand::Commit { name: "b1".into() }
        );
        assert_eq!(
            ControlCommand::parse("abort b1").unwrap(),
            ControlCommand::Abort { name: "b1".into() }
        );
        assert_eq!(ControlCommand::parse("list").unwrap(), ControlCommand::List);
    }

    #[test]
    fn multi_name_create_forms_a_group() {
        assert_eq!(
            ControlCommand::parse("create root a b c").unwrap(),
            ControlCommand::Create {
                parent: "root".into(),
                names: vec!["a".into(), "b".into(), "c".into()]
            }
        );
    }

    #[test]
    fn unknown_verbs_and_arity_errors_are_rejected() {
        assert!(ControlCommand::parse("frobnicate").is_err());
        assert!(ControlCommand::parse("").is_err());
        assert!(ControlCommand::parse("create root").is_err());
        assert!(ControlCommand::parse("commit").is_err());
        assert!(ControlCommand::parse("list extra").is_err());
    }
}
