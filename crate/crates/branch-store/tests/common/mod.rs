//! Randomized driver pairing the store with the snapshot-deep-copy
//! reference model: after every batch of operations, each live branch's
//! visible tree must be identical (names, contents, modes) to the model's
//! map. Shared by the oracle test and the acceptance suite.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use branch_store::oracle::{materialize, snapshot_view, diff, ModelState, ModelStore, Node, Tree};
use branch_store::{BranchId, BranchStore};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const MODES: [u32; 4] = [0o644, 0o600, 0o755, 0o444];
const DIR_MODES: [u32; 2] = [0o755, 0o700];

pub struct Driver {
    pub store: BranchStore,
    pub model: ModelStore,
    rng: ChaCha8Rng,
    next_branch: u32,
    _tmp: TempDir,
}

impl Driver {
    pub fn new(seed: u64) -> Self {
        let tmp = TempDir::new().unwrap();
        let base = tmp.path().join("base");
        fs::create_dir(&base).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base_tree = random_base_tree(&mut rng);
        materialize(&base, &base_tree).unwrap();
        let store = BranchStore::open(&base, tmp.path().join("store")).unwrap();
        Driver {
            store,
            model: ModelStore::new(base_tree),
            rng,
            next_branch: 0,
            _tmp: tmp,
        }
    }

    fn depth(&self, name: &str) -> usize {
        let mut d = 1;
        let mut cur = name.to_string();
        while let Some(p) = self.model.branches[&cur].parent.clone() {
            d += 1;
            cur = p;
        }
        d
    }

    fn has_stale_ancestor(&self, name: &str) -> bool {
        let mut cur = name.to_string();
        loop {
            if self.model.branches[&cur].state != ModelState::Live {
                return true;
            }
            match self.model.branches[&cur].parent.clone() {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    /// Branches whose views are well-defined: live, with no stale/terminal
    /// ancestor.
    pub fn usable(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .model
            .branches
            .iter()
            .filter(|(n, b)| b.state == ModelState::Live && !self.has_stale_ancestor(n))
            .map(|(n, _)| n.clone())
            .collect();
        v.sort();
        v
    }

    fn mutable(&self) -> Vec<String> {
        self.usable()
            .into_iter()
            .filter(|n| self.model.children_of(n).is_empty())
            .collect()
    }

    fn dirs_of(&self, branch: &str) -> Vec<PathBuf> {
        let mut v: Vec<PathBuf> = vec![PathBuf::new()];
        v.extend(
            self.model
                .tree(branch)
                .iter()
                .filter(|(_, n)| matches!(n, Node::Dir { .. }))
                .map(|(p, _)| p.clone()),
        );
        v
    }

    fn fresh_name(&mut self, branch: &str, dir: &Path) -> Option<PathBuf> {
        for _ in 0..8 {
            let name = format!("n{}", self.rng.gen_range(0..10_000));
            let p = dir.join(name);
            if !self.model.tree(branch).contains_key(&p) {
                return Some(p);
            }
        }
        None
    }

    pub fn step(&mut self) {
        let choice = self.rng.gen_range(0..100);
        match choice {
            0..=7 => self.op_fork(),
            8..=11 => self.op_commit(),
            12..=14 => self.op_abort(),
            15..=34 => self.op_create_file(),
            35..=44 => self.op_mkdir(),
            45..=69 => self.op_write(),
            70..=76 => self.op_truncate(),
            77..=84 => self.op_delete_file(),
            85..=88 => self.op_delete_dir(),
            89..=95 => self.op_rename(),
            96..=97 => self.op_set_mode(),
            _ => self.op_symlink(),
        }
    }

    fn pick<T: Clone>(&mut self, v: &[T]) -> Option<T> {
        if v.is_empty() {
            None
        } else {
            Some(v[self.rng.gen_range(0..v.len())].clone())
        }
    }

    fn op_fork(&mut self) {
        let candidates: Vec<String> = self
            .usable()
            .into_iter()
            .filter(|n| self.depth(n) < 4)
            .collect();
        let Some(parent) = self.pick(&candidates) else { return };
        let name = format!("br{}", self.next_branch);
        self.next_branch += 1;
        self.store
            .create_branch(&BranchId::parse(&parent).unwrap(), &name)
            .unwrap();
        self.model.fork(&parent, &name);
    }

    fn op_commit(&mut self) {
        let candidates: Vec<String> = self
            .mutable()
            .into_iter()
            .filter(|n| n != "root")
            .collect();
        let Some(branch) = self.pick(&candidates) else { return };
        self.store
            .commit_branch(&BranchId::parse(&branch).unwrap())
            .unwrap();
        self.model.commit(&branch);
    }

    fn op_abort(&mut self) {
        let candidates: Vec<String> = self
            .model
            .branches
            .iter()
            .filter(|(n, b)| {
                n.as_str() != "root"
                    && matches!(b.state, ModelState::Live | ModelState::Stale)
            })
            .map(|(n, _)| n.clone())
            .collect();
        let Some(branch) = self.pick(&candidates) else { return };
        self.store
            .abort_branch(&BranchId::parse(&branch).unwrap())
            .unwrap();
        self.model.abort(&branch);
    }

    fn op_create_file(&mut self) {
        let Some(branch) = self.pick(&self.mutable()) else { return };
        let Some(dir) = self.pick(&self.dirs_of(&branch)) else { return };
        let Some(path) = self.fresh_name(&branch, &dir) else { return };
        let mode = self.pick(&MODES).unwrap();
        self.store
            .create_file(&BranchId::parse(&branch).unwrap(), &path, mode)
            .unwrap();
        self.model.create_file(&branch, &path, mode);
    }

    fn op_mkdir(&mut self) {
        let Some(branch) = self.pick(&self.mutable()) else { return };
        let Some(dir) = self.pick(&self.dirs_of(&branch)) else { return };
        let Some(path) = self.fresh_name(&branch, &dir) else { return };
        let mode = self.pick(&DIR_MODES).unwrap();
        self.store
            .mkdir(&BranchId::parse(&branch).unwrap(), &path, mode)
            .unwrap();
        self.model.mkdir(&branch, &path, mode);
    }

    fn op_symlink(&mut self) {
        let Some(branch) = self.pick(&self.mutable()) else { return };
        let Some(dir) = self.pick(&self.dirs_of(&branch)) else { return };
        let Some(path) = self.fresh_name(&branch, &dir) else { return };
        let target = PathBuf::from(format!("t{}", self.rng.gen_range(0..100)));
        self.store
            .symlink_entry(&BranchId::parse(&branch).unwrap(), &path, &target)
            .unwrap();
        self.model.symlink(&branch, &path, &target);
    }

    fn files_of(&self, branch: &str) -> Vec<PathBuf> {
        self.model
            .tree(branch)
            .iter()
            .filter(|(_, n)| matches!(n, Node::File { .. }))
            .map(|(p, _)| p.clone())
            .collect()
    }

    fn op_write(&mut self) {
        let Some(branch) = self.pick(&self.mutable()) else { return };
        let Some(path) = self.pick(&self.files_of(&branch)) else { return };
        let len = match &self.model.tree(&branch)[&path] {
            Node::File { content, .. } => content.len(),
            _ => unreachable!(),
        };
        let offset = self.rng.gen_range(0..=len) as u64;
        let n = self.rng.gen_range(1..=256);
        let data: Vec<u8> = (0..n).map(|_| self.rng.gen()).collect();
        self.store
            .write_file(&BranchId::parse(&branch).unwrap(), &path, offset, &data)
            .unwrap();
        self.model.write(&branch, &path, offset, &data);
    }

    fn op_truncate(&mut self) {
        let Some(branch) = self.pick(&self.mutable()) else { return };
        let Some(path) = self.pick(&self.files_of(&branch)) else { return };
        let len = match &self.model.tree(&branch)[&path] {
            Node::File { content, .. } => content.len(),
            _ => unreachable!(),
        };
        let new_len = self.rng.gen_range(0..=len + 64) as u64;
        self.store
            .truncate(&BranchId::parse(&branch).unwrap(), &path, new_len)
            .unwrap();
        self.model.truncate(&branch, &path, new_len);
    }

    fn op_set_mode(&mut self) {
        let Some(branch) = self.pick(&self.mutable()) else { return };
        let Some(path) = self.pick(&self.files_of(&branch)) else { return };
        let mode = self.pick(&MODES).unwrap();
        self.store
            .set_mode(&BranchId::parse(&branch).unwrap(), &path, mode)
            .unwrap();
        self.model.set_mode(&branch, &path, mode);
    }

    fn op_delete_file(&mut self) {
        let Some(branch) = self.pick(&self.mutable()) else { return };
        let candidates: Vec<PathBuf> = self
            .model
            .tree(&branch)
            .iter()
            .filter(|(_, n)| !matches!(n, Node::Dir { .. }))
            .map(|(p, _)| p.clone())
            .collect();
        let Some(path) = self.pick(&candidates) else { return };
        self.store
            .delete_file(&BranchId::parse(&branch).unwrap(), &path)
            .unwrap();
        self.model.delete(&branch, &path);
    }

    fn op_delete_dir(&mut self) {
        let Some(branch) = self.pick(&self.mutable()) else { return };
        let candidates: Vec<PathBuf> = self
            .model
            .tree(&branch)
            .iter()
            .filter(|(p, n)| {
                matches!(n, Node::Dir { .. })
                    && !self
                        .model
                        .tree(&branch)
                        .keys()
                        .any(|q| q != *p && q.starts_with(p))
            })
            .map(|(p, _)| p.clone())
            .collect();
        let Some(path) = self.pick(&candidates) else { return };
        self.store
            .delete_dir(&BranchId::parse(&branch).unwrap(), &path)
            .unwrap();
        self.model.delete(&branch, &path);
    }

    fn op_rename(&mut self) {
        let Some(branch) = self.pick(&self.mutable()) else { return };
        let sources: Vec<PathBuf> = self.model.tree(&branch).keys().cloned().collect();
        let Some(src) = self.pick(&sources) else { return };
        let dirs: Vec<PathBuf> = self
            .dirs_of(&branch)
            .into_iter()
            .filter(|d| !d.starts_with(&src))
            .collect();
        let Some(dir) = self.pick(&dirs) else { return };
        let Some(dst) = self.fresh_name(&branch, &dir) else { return };
        if dst.starts_with(&src) || src.starts_with(&dst) {
            return;
        }
        self.store
            .rename(&BranchId::parse(&branch).unwrap(), &src, &dst)
            .unwrap();
        self.model.rename(&branch, &src, &dst);
    }

    pub fn check_all(&self) {
        for branch in self.usable() {
            let id = BranchId::parse(&branch).unwrap();
            let actual = snapshot_view(&self.store, &id).unwrap();
            let expected: &Tree = self.model.tree(&branch);
            assert!(
                &actual == expected,
                "branch {branch} diverged from model:\n{}",
                diff(expected, &actual)
            );
        }
    }
}

fn random_base_tree(rng: &mut ChaCha8Rng) -> Tree {
    let mut tree = Tree::new();
    let n_dirs = rng.gen_range(2..5);
    let mut dirs = vec![PathBuf::new()];
    for i in 0..n_dirs {
        let parent = dirs[rng.gen_range(0..dirs.len())].clone();
        let d = parent.join(format!("d{i}"));
        tree.insert(d.clone(), Node::Dir { mode: 0o755 });
        dirs.push(d);
    }
    let n_files = rng.gen_range(5..15);
    for i in 0..n_files {
        let parent = dirs[rng.gen_range(0..dirs.len())].clone();
        let len = rng.gen_range(0..2048);
        let content: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        tree.insert(
            parent.join(format!("f{i}")),
            Node::File {
                content,
                mode: 0o644,
            },
        );
    }
    tree
}
pub fn run_sequence(seed: u64, ops: usize, check_every: usize) {
    let mut driver = Driver::new(seed);
    for i in 0..ops {
        driver.step();
        if (i + 1) % check_every == 0 {
            driver.check_all();
        }
    }
    driver.check_all();
}
