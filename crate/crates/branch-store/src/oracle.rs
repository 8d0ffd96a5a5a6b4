//! Snapshot-deep-copy reference model used by the test suites.
//!
//! The model keeps one flat path->node map per branch. Fork deep-copies the
//! map, commit replaces the parent's map and marks siblings stale, abort
//! drops the map. It shares no code with the chain-resolution engine, so
//! agreement between the two is meaningful.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::id::BranchId;
use crate::resolve::{EntryKind, Resolution};
use crate::store::BranchStore;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    File { content: Vec<u8>, mode: u32 },
    Dir { mode: u32 },
    Symlink { target: PathBuf },
}

pub type Tree = BTreeMap<PathBuf, Node>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelState {
    Live,
    Stale,
    Committed,
    Aborted,
}

#[derive(Debug, Clone)]
pub struct ModelBranch {
    pub tree: Tree,
    pub parent: Option<String>,
    pub state: ModelState,
}

/// The whole-model store: branch name -> deep-copied tree.
#[derive(Debug, Default)]
pub struct ModelStore {
    pub branches: HashMap<String, ModelBranch>,
}

impl ModelStore {
    pub fn new(base: Tree) -> Self {
        let mut branches = HashMap::new();
        branches.insert(
            "root".to_string(),
            ModelBranch {
                tree: base,
                parent: None,
                state: ModelState::Live,
            },
        );
        ModelStore { branches }
    }

    pub fn tree(&self, name: &str) -> &Tree {
        &self.branches[name].tree
    }

    pub fn tree_mut(&mut self, name: &str) -> &mut Tree {
        &mut self.branches.get_mut(name).unwrap().tree
    }

    pub fn children_of(&self, name: &str) -> Vec<String> {
        let mut v: Vec<String> = self
            .branches
            .iter()
            .filter(|(_, b)| {
                b.parent.as_deref() == Some(name)
                    && matches!(b.state, ModelState::Live | ModelState::Stale)
            })
            .map(|(n, _)| n.clone())
            .collect();
        v.sort();
        v
    }

    pub fn fork(&mut self, parent: &str, name: &str) {
        let tree = self.branches[parent].tree.clone();
        self.branches.insert(
            name.to_string(),
            ModelBranch {
                tree,
                parent: Some(parent.to_string()),
                state: ModelState::Live,
            },
        );
    }

    /// Replaces the parent's map with the committing branch's and marks all
    /// live siblings stale.
    pub fn commit(&mut self, name: &str) {
        let branch = self.branches[name].clone();
        let parent = branch.parent.clone().expect("cannot commit root");
        self.branches.get_mut(&parent).unwrap().tree = branch.tree;
        let siblings: Vec<String> = self
            .branches
            .iter()
            .filter(|(n, b)| {
                b.parent.as_deref() == Some(parent.as_str())
                    && n.as_str() != name
                    && b.state == ModelState::Live
            })
            .map(|(n, _)| n.clone())
            .collect();
        for s in siblings {
            self.branches.get_mut(&s).unwrap().state = ModelState::Stale;
        }
        self.branches.get_mut(name).unwrap().state = ModelState::Committed;
    }

    pub fn abort(&mut self, name: &str) {
        let descendants: Vec<String> = self
            .branches
            .iter()
            .filter(|(_, b)| b.parent.as_deref() == Some(name))
            .filter(|(_, b)| matches!(b.state, ModelState::Live | ModelState::Stale))
            .map(|(n, _)| n.clone())
            .collect();
        for d in descendants {
            self.abort(&d);
        }
        self.branches.get_mut(name).unwrap().state = ModelState::Aborted;
    }

    // -- tree edits (driver has already validated preconditions) -------------

    pub fn create_file(&mut self, branch: &str, rel: &Path, mode: u32) {
        self.tree_mut(branch).insert(
            rel.to_path_buf(),
            Node::File {
                content: Vec::new(),
                mode,
            },
        );
    }

    pub fn mkdir(&mut self, branch: &str, rel: &Path, mode: u32) {
        self.tree_mut(branch)
            .insert(rel.to_path_buf(), Node::Dir { mode });
    }

    pub fn symlink(&mut self, branch: &str, rel: &Path, target: &Path) {
        self.tree_mut(branch).insert(
            rel.to_path_buf(),
            Node::Symlink {
                target: target.to_path_buf(),
            },
        );
    }

    pub fn write(&mut self, branch: &str, rel: &Path, offset: u64, data: &[u8]) {
        if let Some(Node::File { content, .. }) = self.tree_mut(branch).get_mut(rel) {
            let end = offset as usize + data.len();
            if content.len() < end {
                content.resize(end, 0);
            }
            content[offset as usize..end].copy_from_slice(data);
        }
    }

    pub fn truncate(&mut self, branch: &str, rel: &Path, len: u64) {
        if let Some(Node::File { content, .. }) = self.tree_mut(branch).get_mut(rel) {
            content.resize(len as usize, 0);
        }
    }

    pub fn set_mode(&mut self, branch: &str, rel: &Path, mode: u32) {
        match self.tree_mut(branch).get_mut(rel) {
            Some(Node::File { mode: m, .. }) | Some(Node::Dir { mode: m }) => *m = mode,
            _ => {}
        }
    }

    pub fn delete(&mut self, branch: &str, rel: &Path) {
        self.tree_mut(branch).remove(rel);
    }

    pub fn rename(&mut self, branch: &str, src: &Path, dst: &Path) {
        let tree = self.tree_mut(branch);
        // Drop anything at the destination, then move src and its subtree.
        let dst_victims: Vec<PathBuf> = tree
            .keys()
            .filter(|p| *p == dst || p.starts_with(dst))
            .cloned()
            .collect();
        for p in dst_victims {
            tree.remove(&p);
        }
        let moved: Vec<(PathBuf, Node)> = tree
            .iter()
            .filter(|(p, _)| *p == src || p.starts_with(src))
            .map(|(p, n)| (p.clone(), n.clone()))
            .collect();
        for (p, _) in &moved {
            tree.remove(p);
        }
        for (p, node) in moved {
            let suffix = p.strip_prefix(src).unwrap();
            tree.insert(dst.join(suffix), node);
        }
    }
}

/// Seeds a plain directory from a model tree (parents sort before children,
/// so plain iteration order works).
pub fn materialize(base: &Path, tree: &Tree) -> std::io::Result<()> {
    for (rel, node) in tree {
        let path = base.join(rel);
        match node {
            Node::Dir { mode } => {
                fs::create_dir_all(&path)?;
                fs::set_permissions(&path, fs::Permissions::from_mode(*mode))?;
            }
            Node::File { content, mode } => {
                fs::write(&path, content)?;
                fs::set_permissions(&path, fs::Permissions::from_mode(*mode))?;
            }
            Node::Symlink { target } => {
                std::os::unix::fs::symlink(target, &path)?;
            }
        }
    }
    Ok(())
}

/// Captures the visible tree of a branch through the store's public lookup
/// surface, in the model's representation.
pub fn snapshot_view(store: &BranchStore, branch: &BranchId) -> Result<Tree> {
    fn walk(store: &BranchStore, branch: &BranchId, rel: &Path, out: &mut Tree) -> Result<()> {
        for entry in store.list_dir(branch, rel)? {
            let child = rel.join(&entry.name);
            let Resolution::Found { path, .. } = store.resolve(branch, &child)? else {
                continue;
            };
            let md = path.symlink_metadata()?;
            let mode = md.permissions().mode() & 0o7777;
            match entry.kind {
                EntryKind::Dir => {
                    out.insert(child.clone(), Node::Dir { mode });
                    walk(store, branch, &child, out)?;
                }
                EntryKind::Symlink => {
                    out.insert(
                        child,
                        Node::Symlink {
                            target: fs::read_link(&path)?,
                        },
                    );
                }
                _ => {
                    out.insert(
                        child,
                        Node::File {
                            content: fs::read(&path)?,
                            mode,
                        },
                    );
                }
            }
        }
        Ok(())
    }
    let mut out = Tree::new();
    walk(store, branch, Path::new(""), &mut out)?;
    Ok(out)
}

/// Snapshot of a plain directory, for comparing against [`snapshot_view`].
pub fn snapshot_dir(root: &Path) -> std::io::Result<Tree> {
    fn walk(root: &Path, dir: &Path, out: &mut Tree) -> std::io::Result<()> {
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let rel = entry.path().strip_prefix(root).unwrap().to_path_buf();
            let md = entry.path().symlink_metadata()?;
            let mode = md.permissions().mode() & 0o7777;
            let ft = md.file_type();
            if ft.is_symlink() {
                out.insert(
                    rel,
                    Node::Symlink {
                        target: fs::read_link(entry.path())?,
                    },
                );
            } else if ft.is_dir() {
                out.insert(rel.clone(), Node::Dir { mode });
                walk(root, &entry.path(), out)?;
            } else {
                out.insert(
                    rel,
                    Node::File {
                        content: fs::read(entry.path())?,
                        mode,
                    },
                );
            }
        }
        Ok(())
    }
    let mut out = Tree::new();
    walk(root, root, &mut out)?;
    Ok(out)
}

/// Human-oriented diff summary for failed comparisons.
pub fn diff(expected: &Tree, actual: &Tree) -> String {
    let mut out = String::new();
    for (p, n) in expected {
        match actual.get(p) {
            None => out.push_str(&format!("missing: {} ({:?})\n", p.display(), kind_of(n))),
            Some(a) if a != n => out.push_str(&format!("differs: {}\n", p.display())),
            _ => {}
        }
    }
    for p in actual.keys() {
        if !expected.contains_key(p) {
            out.push_str(&format!("unexpected: {}\n", p.display()));
        }
    }
    out
}

fn kind_of(n: &Node) -> &'static str {
    match n {
        Node::File { .. } => "file",
        Node::Dir { .. } => "dir",
        Node::Symlink { .. } => "symlink",
    }
}
