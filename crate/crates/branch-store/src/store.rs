use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::os::unix::fs::{symlink, FileTypeExt, PermissionsExt};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Mutex, RwLock};

use crate::error::{Result, StoreError};
use crate::id::BranchId;
use crate::meta::{BranchMeta, BranchState, CommitReport, ExclusiveGroup, MetaDoc};
use crate::recorder::OpTimings;
use crate::resolve::{
    normalize_rel, proper_prefixes, DirEntryInfo, EntryKind, LayerHit, Resolution,
};

const META_FILE: &str = "meta";
const MARKER_FILE: &str = "commit-in-progress";

struct StoreState {
    branches: HashMap<BranchId, BranchMeta>,
    groups: HashMap<u64, ExclusiveGroup>,
    reports: HashMap<BranchId, CommitReport>,
    next_group: u64,
    next_serial: u64,
}

/// The branching copy-on-write engine.
///
/// All metadata transitions serialize under a store-wide lock; commit holds
/// it exclusively for its whole duration so it is atomic with respect to
/// every other store operation. Data-plane operations take the lock shared
/// and may run in parallel on distinct files.
pub struct BranchStore {
    base_dir: PathBuf,
    store_root: PathBuf,
    state: RwLock<StoreState>,
    timings: Mutex<Option<Arc<OpTimings>>>,
}

impl BranchStore {
    /// Opens (or initializes) a store over `base_dir`, keeping branch data
    /// under `store_root`. Replays any commit interrupted by a crash.
    pub fn open(base_dir: impl Into<PathBuf>, store_root: impl Into<PathBuf>) -> Result<Self> {
        let base_dir: PathBuf = base_dir.into();
        let store_root: PathBuf = store_root.into();
        if !base_dir.is_dir() {
            return Err(StoreError::NotADirectory(base_dir));
        }
        let base_dir = base_dir.canonicalize()?;
        fs::create_dir_all(store_root.join("branches"))?;
        let store_root = store_root.canonicalize()?;

        let store = BranchStore {
            base_dir,
            store_root,
            state: RwLock::new(StoreState {
                branches: HashMap::new(),
                groups: HashMap::new(),
                reports: HashMap::new(),
                next_group: 1,
                next_serial: 1,
            }),
            timings: Mutex::new(None),
        };
        store.load()?;
        Ok(store)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn store_root(&self) -> &Path {
        &self.store_root
    }

    /// Attaches a timing recorder; subsequent create/commit/abort operations
    /// record their internal duration.
    pub fn set_timings(&self, t: Arc<OpTimings>) {
        *self.timings.lock() = Some(t);
    }

    fn record(&self, op: &str, start: Instant) {
        if let Some(t) = self.timings.lock().as_ref() {
            t.record(op, start.elapsed());
        }
    }

    // ---- layout ------------------------------------------------------------

    fn branch_dir(&self, id: &BranchId) -> PathBuf {
        self.store_root.join("branches").join(id.as_str())
    }

    /// The root branch's delta layer is the base directory itself.
    fn data_root(&self, id: &BranchId) -> PathBuf {
        if id.is_root() {
            self.base_dir.clone()
        } else {
            self.branch_dir(id).join("data")
        }
    }

    fn tomb_root(&self, id: &BranchId) -> Option<PathBuf> {
        if id.is_root() {
            None
        } else {
            Some(self.branch_dir(id).join("tombstones"))
        }
    }

    // ---- persistence -------------------------------------------------------

    fn persist_meta(&self, meta: &BranchMeta) -> Result<()> {
        let dir = self.branch_dir(&meta.id);
        fs::create_dir_all(&dir)?;
        let doc = MetaDoc::from_meta(meta);
        let text = toml::to_string_pretty(&doc).expect("meta serializes");
        let tmp = dir.join(".meta.tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, dir.join(META_FILE))?;
        Ok(())
    }

    fn load(&self) -> Result<()> {
        let mut st = self.state.write();
        let branches_dir = self.store_root.join("branches");
        let mut markers: Vec<BranchId> = Vec::new();
        for entry in fs::read_dir(&branches_dir)? {
            let entry = entry?;
            let meta_path = entry.path().join(META_FILE);
            if !meta_path.is_file() {
                continue;
            }
            let text = fs::read_to_string(&meta_path)?;
            let doc: MetaDoc = toml::from_str(&text).map_err(|e| {
                StoreError::Io(std::io::Error::other(format!(
                    "corrupt meta {}: {e}",
                    meta_path.display()
                )))
            })?;
            let id = BranchId::parse(&doc.name)?;
            let meta = BranchMeta {
                id: id.clone(),
                parent: doc.parent.as_deref().map(BranchId::parse).transpose()?,
                state: doc.state,
                epoch: doc.epoch,
                parent_epoch_at_create: doc.parent_epoch_at_create,
                group: doc.group_id,
                children: 0,
            };
            if entry.path().join(MARKER_FILE).is_file() {
                markers.push(id.clone());
            }
            st.branches.insert(id, meta);
        }
        if !st.branches.contains_key(&BranchId::root()) {
            let root = BranchMeta::root();
            self.persist_meta(&root)?;
            st.branches.insert(root.id.clone(), root);
        }
        drop(st);

        // Replay commits that were interrupted between marker creation and
        // marker removal; every apply step is idempotent.
        for id in markers {
            self.replay_commit(&id)?;
        }

        let mut st = self.state.write();
        self.recompute(&mut st);
        let max_group = st.branches.values().filter_map(|b| b.group).max();
        st.next_group = max_group.map_or(1, |g| g + 1);
        Ok(())
    }

    /// Rebuilds children counts, derived states, and exclusive groups from
    /// loaded metadata.
    fn recompute(&self, st: &mut StoreState) {
        let ids: Vec<BranchId> = st.branches.keys().cloned().collect();
        for id in &ids {
            let count = st
                .branches
                .values()
                .filter(|b| b.parent.as_ref() == Some(id) && !b.state.is_terminal())
                .count() as u32;
            st.branches.get_mut(id).unwrap().children = count;
        }
        let epochs: HashMap<BranchId, u64> =
            st.branches.iter().map(|(k, v)| (k.clone(), v.epoch)).collect();
        for meta in st.branches.values_mut() {
            if meta.state.is_terminal() {
                continue;
            }
            meta.state = match &meta.parent {
                Some(p) if epochs.get(p).copied() != Some(meta.parent_epoch_at_create) => {
                    BranchState::Stale
                }
                _ if meta.children > 0 => BranchState::Frozen,
                _ => BranchState::Active,
            };
        }
        st.groups.clear();
        for meta in st.branches.values() {
            if let Some(gid) = meta.group {
                let group = st.groups.entry(gid).or_insert_with(|| ExclusiveGroup {
                    group_id: gid,
                    members: BTreeSet::new(),
                    winner: None,
                });
                group.members.insert(meta.id.clone());
                if meta.state == BranchState::Committed {
                    group.winner = Some(meta.id.clone());
                }
            }
        }
    }

    // ---- lookups -----------------------------------------------------------

    fn meta<'a>(&self, st: &'a StoreState, id: &BranchId) -> Result<&'a BranchMeta> {
        st.branches
            .get(id)
            .ok_or_else(|| StoreError::UnknownBranch(id.to_string()))
    }

    fn require_readable(&self, st: &StoreState, id: &BranchId) -> Result<()> {
        let meta = self.meta(st, id)?;
        match meta.state {
            BranchState::Active | BranchState::Frozen => Ok(()),
            BranchState::Stale => Err(StoreError::Stale(id.to_string())),
            _ => Err(StoreError::Terminal(id.to_string())),
        }
    }

    fn require_mutable(&self, st: &StoreState, id: &BranchId) -> Result<()> {
        let meta = self.meta(st, id)?;
        match meta.state {
            BranchState::Active => Ok(()),
            BranchState::Frozen => Err(StoreError::Frozen(id.to_string())),
            BranchState::Stale => Err(StoreError::Stale(id.to_string())),
            _ => Err(StoreError::Terminal(id.to_string())),
        }
    }

    /// The chain from `id` up through its ancestors to the root branch.
    fn chain(&self, st: &StoreState, id: &BranchId) -> Result<Vec<BranchId>> {
        let mut out = vec![id.clone()];
        let mut cur = id.clone();
        while let Some(parent) = self.meta(st, &cur)?.parent.clone() {
            out.push(parent.clone());
            cur = parent;
        }
        Ok(out)
    }

    fn lookup_in_layer(&self, layer: &BranchId, rel: &Path) -> LayerHit {
        let data_root = self.data_root(layer);
        let data_path = data_root.join(rel);
        let Some(tomb_root) = self.tomb_root(layer) else {
            // Base layer: plain directory, no tombstones.
            return if data_path.symlink_metadata().is_ok() {
                LayerHit::Data(data_path)
            } else {
                LayerHit::Transparent
            };
        };

        let mut under_opaque = false;
        for prefix in proper_prefixes(rel) {
            let tomb_is_file = tomb_root
                .join(&prefix)
                .symlink_metadata()
                .map(|m| m.is_file())
                .unwrap_or(false);
            match data_root.join(&prefix).symlink_metadata() {
                Ok(m) if m.is_dir() => {
                    if tomb_is_file {
                        // Recreated-after-delete directory: opaque, lookup
                        // below it is confined to this layer's data.
                        under_opaque = true;
                    }
                }
                Ok(_) => return LayerHit::CutOff, // a file shadows everything below it
                Err(_) => {
                    if tomb_is_file {
                        return LayerHit::CutOff; // subtree deleted at this layer
                    }
                }
            }
        }

        if data_path.symlink_metadata().is_ok() {
            return LayerHit::Data(data_path);
        }
        let tombstoned = tomb_root
            .join(rel)
            .symlink_metadata()
            .map(|m| m.is_file())
            .unwrap_or(false);
        if tombstoned {
            LayerHit::Tombstone
        } else if under_opaque {
            LayerHit::CutOff
        } else {
            LayerHit::Transparent
        }
    }

    fn resolve_locked(&self, st: &StoreState, id: &BranchId, rel: &Path) -> Result<Resolution> {
        for layer in self.chain(st, id)? {
            match self.lookup_in_layer(&layer, rel) {
                LayerHit::Data(path) => return Ok(Resolution::Found { layer, path }),
                LayerHit::Tombstone => return Ok(Resolution::Tombstoned { layer }),
                LayerHit::CutOff => return Ok(Resolution::Absent),
                LayerHit::Transparent => {}
            }
        }
        Ok(Resolution::Absent)
    }

    /// Resolves a workspace-relative path by walking the branch chain.
    pub fn resolve(&self, id: &BranchId, rel: &Path) -> Result<Resolution> {
        let rel = normalize_rel(rel)?;
        let st = self.state.read();
        self.require_readable(&st, id)?;
        self.resolve_locked(&st, id, &rel)
    }

    /// Merged, deduplicated directory listing across the branch chain.
    pub fn list_dir(&self, id: &BranchId, rel: &Path) -> Result<Vec<DirEntryInfo>> {
        let rel = normalize_rel(rel)?;
        let st = self.state.read();
        self.require_readable(&st, id)?;
        self.list_dir_locked(&st, id, &rel)
    }

    fn list_dir_locked(
        &self,
        st: &StoreState,
        id: &BranchId,
        rel: &Path,
    ) -> Result<Vec<DirEntryInfo>> {
        if !rel.as_os_str().is_empty() {
            match self.resolve_locked(st, id, rel)? {
                Resolution::Found { path, .. } => {
                    if !path.symlink_metadata()?.is_dir() {
                        return Err(StoreError::NotADirectory(rel.to_path_buf()));
                    }
                }
                _ => return Err(StoreError::NotFound(rel.to_path_buf())),
            }
        }

        let mut seen: HashSet<std::ffi::OsString> = HashSet::new();
        let mut out: Vec<DirEntryInfo> = Vec::new();
        for layer in self.chain(st, id)? {
            match self.lookup_in_layer(&layer, rel) {
                LayerHit::Data(path) => {
                    let md = path.symlink_metadata()?;
                    if !md.is_dir() {
                        break; // a file at a farther layer shadows the name
                    }
                    for entry in fs::read_dir(&path)? {
                        let entry = entry?;
                        let name = entry.file_name();
                        if seen.insert(name.clone()) {
                            out.push(DirEntryInfo {
                                name,
                                kind: EntryKind::of(entry.file_type()?),
                            });
                        }
                    }
                    let mut opaque = false;
                    if let Some(tomb_root) = self.tomb_root(&layer) {
                        // Tombstoned names at this layer are settled: either
                        // shadowed by a data entry added above, or excluded.
                        let tomb_dir = tomb_root.join(rel);
                        if let Ok(rd) = fs::read_dir(&tomb_dir) {
                            for entry in rd.flatten() {
                                if entry.file_type().map(|t| t.is_file()).unwrap_or(false) {
                                    seen.insert(entry.file_name());
                                }
                            }
                        }
                        opaque = tomb_root
                            .join(rel)
                            .symlink_metadata()
                            .map(|m| m.is_file())
                            .unwrap_or(false);
                    }
                    if opaque {
                        break; // recreated directory hides ancestor entries
                    }
                }
                LayerHit::Tombstone | LayerHit::CutOff => break,
                LayerHit::Transparent => {
                    // The layer has no data directory here, but its tombstones
                    // still exclude names from farther layers.
                    if let Some(tomb_root) = self.tomb_root(&layer) {
                        if let Ok(rd) = fs::read_dir(tomb_root.join(rel)) {
                            for entry in rd.flatten() {
                                if entry.file_type().map(|t| t.is_file()).unwrap_or(false) {
                                    seen.insert(entry.file_name());
                                }
                            }
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(out)
    }

    // ---- data-plane mutations ---------------------------------------------

    /// True when a proper prefix of `rel` is an opaque (recreated) directory
    /// at `id`'s own layer; entries below it never merge with ancestors, so
    /// no tombstone is needed for deletions under it.
    fn has_opaque_prefix(&self, id: &BranchId, rel: &Path) -> bool {
        let Some(tomb_root) = self.tomb_root(id) else {
            return false;
        };
        let data_root = self.data_root(id);
        proper_prefixes(rel).iter().any(|p| {
            tomb_root.join(p).symlink_metadata().map(|m| m.is_file()).unwrap_or(false)
                && data_root.join(p).is_dir()
        })
    }

    fn add_tombstone(&self, id: &BranchId, rel: &Path) -> Result<()> {
        let Some(tomb_root) = self.tomb_root(id) else {
            return Ok(()); // root branch deletions act on the base directly
        };
        // A sentinel at a prefix already hides the whole subtree (or marks it
        // opaque, confining it to this layer); nothing more to record.
        for prefix in proper_prefixes(rel) {
            if tomb_root.join(&prefix).symlink_metadata().map(|m| m.is_file()).unwrap_or(false) {
                return Ok(());
            }
        }
        let sentinel = tomb_root.join(rel);
        // Replace any container directory of deeper tombstones: the path-level
        // sentinel subsumes them.
        if sentinel.is_dir() {
            fs::remove_dir_all(&sentinel)?;
        }
        if let Some(parent) = sentinel.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::File::create(&sentinel)?;
        Ok(())
    }

    /// Materializes missing ancestor directories of `rel` inside the branch's
    /// data root, copying modes from the resolved originals.
    fn ensure_parent_dirs(&self, st: &StoreState, id: &BranchId, rel: &Path) -> Result<()> {
        let data_root = self.data_root(id);
        for prefix in proper_prefixes(rel) {
            let target = data_root.join(&prefix);
            match target.symlink_metadata() {
                Ok(m) if m.is_dir() => continue,
                Ok(_) => return Err(StoreError::NotADirectory(prefix.clone())),
                Err(_) => {}
            }
            match self.resolve_locked(st, id, &prefix)? {
                Resolution::Found { path, .. } => {
                    let md = path.symlink_metadata()?;
                    if !md.is_dir() {
                        return Err(StoreError::NotADirectory(prefix.clone()));
                    }
                    fs::create_dir(&target)?;
                    let _ = fs::set_permissions(&target, md.permissions());
                }
                _ => return Err(StoreError::NotFound(prefix.clone())),
            }
        }
        Ok(())
    }

    fn copy_file_entry(&self, src: &Path, dst: &Path) -> Result<u64> {
        let md = src.symlink_metadata()?;
        let ft = md.file_type();
        if ft.is_symlink() {
            // The link itself is copied, never its target.
            let target = fs::read_link(src)?;
            if dst.symlink_metadata().is_ok() {
                remove_any(dst)?;
            }
            symlink(&target, dst)?;
            return Ok(0);
        }
        if !ft.is_file() {
            return Err(StoreError::UnsupportedFileType(src.to_path_buf()));
        }
        // Copy into a temp name then rename so concurrent copy-ups of the
        // same path are idempotent and never observe partial content.
        let dir = dst.parent().expect("delta paths have parents");
        let tmp = dir.join(format!(
            ".cow-{}-{:x}",
            std::process::id(),
            dst.as_os_str().len() as u64 ^ md.len()
        ));
        let bytes = fs::copy(src, &tmp)?;
        fs::set_permissions(&tmp, md.permissions())?;
        if let (Ok(f), Ok(mtime)) = (fs::File::options().write(true).open(&tmp), md.modified()) {
            let times = fs::FileTimes::new().set_modified(mtime);
            let _ = f.set_times(times);
        }
        if dst.is_dir() {
            fs::remove_dir_all(dst)?;
        }
        fs::rename(&tmp, dst)?;
        Ok(bytes)
    }

    /// Copies the entire file (or symlink) from the nearest ancestor layer
    /// into this branch's delta. Idempotent; returns the physical path.
    pub fn copy_up(&self, id: &BranchId, rel: &Path) -> Result<PathBuf> {
        let rel = normalize_rel(rel)?;
        let st = self.state.read();
        self.require_mutable(&st, id)?;
        self.copy_up_locked(&st, id, &rel)
    }

    fn copy_up_locked(&self, st: &StoreState, id: &BranchId, rel: &Path) -> Result<PathBuf> {
        match self.resolve_locked(st, id, rel)? {
            Resolution::Found { layer, path } => {
                if &layer == id {
                    return Ok(path); // already at this layer
                }
                let md = path.symlink_metadata()?;
                if md.is_dir() {
                    return Err(StoreError::IsADirectory(rel.to_path_buf()));
                }
                if !md.file_type().is_file() && !md.file_type().is_symlink() {
                    return Err(StoreError::UnsupportedFileType(rel.to_path_buf()));
                }
                self.ensure_parent_dirs(st, id, rel)?;
                let dst = self.data_root(id).join(rel);
                self.copy_file_entry(&path, &dst)?;
                Ok(dst)
            }
            _ => Err(StoreError::NotFound(rel.to_path_buf())),
        }
    }

    /// Physical path to serve writes for `rel`, copying up first if needed.
    pub fn prepare_write(&self, id: &BranchId, rel: &Path) -> Result<PathBuf> {
        let rel = normalize_rel(rel)?;
        let st = self.state.read();
        self.require_mutable(&st, id)?;
        match self.resolve_locked(&st, id, &rel)? {
            Resolution::Found { layer, path } if &layer == id => Ok(path),
            Resolution::Found { .. } => self.copy_up_locked(&st, id, &rel),
            _ => Err(StoreError::NotFound(rel)),
        }
    }

    pub fn create_file(&self, id: &BranchId, rel: &Path, mode: u32) -> Result<PathBuf> {
        let rel = normalize_rel(rel)?;
        if rel.as_os_str().is_empty() {
            return Err(StoreError::InvalidPath(rel));
        }
        let st = self.state.read();
        self.require_mutable(&st, id)?;
        if self.resolve_locked(&st, id, &rel)?.is_found() {
            return Err(StoreError::AlreadyExists(rel));
        }
        self.ensure_parent_dirs(&st, id, &rel)?;
        let path = self.data_root(id).join(&rel);
        fs::File::options()
            .write(true)
            .create_new(true)
            .open(&path)?;
        fs::set_permissions(&path, fs::Permissions::from_mode(mode & 0o7777))?;
        // Any existing tombstone stays: data + tombstone reads as
        // "recreated here", hiding ancestor versions.
        Ok(path)
    }

    pub fn mkdir(&self, id: &BranchId, rel: &Path, mode: u32) -> Result<PathBuf> {
        let rel = normalize_rel(rel)?;
        if rel.as_os_str().is_empty() {
            return Err(StoreError::AlreadyExists(rel));
        }
        let st = self.state.read();
        self.require_mutable(&st, id)?;
        if self.resolve_locked(&st, id, &rel)?.is_found() {
            return Err(StoreError::AlreadyExists(rel));
        }
        self.ensure_parent_dirs(&st, id, &rel)?;
        let path = self.data_root(id).join(&rel);
        fs::create_dir(&path)?;
        fs::set_permissions(&path, fs::Permissions::from_mode(mode & 0o7777))?;
        Ok(path)
    }

    pub fn symlink_entry(&self, id: &BranchId, rel: &Path, target: &Path) -> Result<PathBuf> {
        let rel = normalize_rel(rel)?;
        let st = self.state.read();
        self.require_mutable(&st, id)?;
        if self.resolve_locked(&st, id, &rel)?.is_found() {
            return Err(StoreError::AlreadyExists(rel));
        }
        self.ensure_parent_dirs(&st, id, &rel)?;
        let path = self.data_root(id).join(&rel);
        symlink(target, &path)?;
        Ok(path)
    }

    /// Writes `data` at `offset`, creating the file if it does not exist in
    /// any layer. Mutations land only in this branch's delta.
    pub fn write_file(&self, id: &BranchId, rel: &Path, offset: u64, data: &[u8]) -> Result<u32> {
        let path = match self.prepare_write(id, rel) {
            Ok(p) => p,
            Err(StoreError::NotFound(_)) => self.create_file(id, rel, 0o644)?,
            Err(e) => return Err(e),
        };
        let mut f = fs::File::options().write(true).open(&path)?;
        f.seek(SeekFrom::Start(offset))?;
        f.write_all(data)?;
        Ok(data.len() as u32)
    }

    pub fn read_file(&self, id: &BranchId, rel: &Path, offset: u64, size: usize) -> Result<Vec<u8>> {
        match self.resolve(id, rel)? {
            Resolution::Found { path, .. } => {
                let mut f = fs::File::open(&path)?;
                f.seek(SeekFrom::Start(offset))?;
                let mut buf = vec![0u8; size];
                let mut read = 0;
                loop {
                    let n = f.read(&mut buf[read..])?;
                    if n == 0 {
                        break;
                    }
                    read += n;
                    if read == size {
                        break;
                    }
                }
                buf.truncate(read);
                Ok(buf)
            }
            _ => Err(StoreError::NotFound(rel.to_path_buf())),
        }
    }

    pub fn truncate(&self, id: &BranchId, rel: &Path, len: u64) -> Result<()> {
        let path = self.prepare_write(id, rel)?;
        let f = fs::File::options().write(true).open(&path)?;
        f.set_len(len)?;
        Ok(())
    }

    pub fn set_mode(&self, id: &BranchId, rel: &Path, mode: u32) -> Result<()> {
        let path = self.prepare_write(id, rel)?;
        fs::set_permissions(&path, fs::Permissions::from_mode(mode & 0o7777))?;
        Ok(())
    }

    /// Deletes a file or symlink: the delta entry (if any) is removed and a
    /// tombstone recorded so ancestor versions do not reappear.
    pub fn delete_file(&self, id: &BranchId, rel: &Path) -> Result<()> {
        let rel = normalize_rel(rel)?;
        let st = self.state.read();
        self.require_mutable(&st, id)?;
        match self.resolve_locked(&st, id, &rel)? {
            Resolution::Found { layer, path } => {
                if path.symlink_metadata()?.is_dir() {
                    return Err(StoreError::IsADirectory(rel));
                }
                if id.is_root() {
                    fs::remove_file(&path)?;
                    return Ok(());
                }
                if &layer == id {
                    fs::remove_file(&path)?;
                }
                if !self.has_opaque_prefix(id, &rel) {
                    self.add_tombstone(id, &rel)?;
                }
                Ok(())
            }
            _ => Err(StoreError::NotFound(rel)),
        }
    }

    /// Deletes a visibly-empty directory (POSIX rmdir semantics).
    pub fn delete_dir(&self, id: &BranchId, rel: &Path) -> Result<()> {
        let rel = normalize_rel(rel)?;
        if rel.as_os_str().is_empty() {
            return Err(StoreError::InvalidPath(rel));
        }
        let st = self.state.read();
        self.require_mutable(&st, id)?;
        match self.resolve_locked(&st, id, &rel)? {
            Resolution::Found { layer, path } => {
                if !path.symlink_metadata()?.is_dir() {
                    return Err(StoreError::NotADirectory(rel));
                }
                if !self.list_dir_locked(&st, id, &rel)?.is_empty() {
                    return Err(StoreError::NotEmpty(rel));
                }
                if id.is_root() {
                    fs::remove_dir(&path)?;
                    return Ok(());
                }
                if &layer == id {
                    // Visibly empty, but the delta dir may still hold entries
                    // whose names are tombstoned at this layer.
                    fs::remove_dir_all(&path)?;
                }
                if !self.has_opaque_prefix(id, &rel) {
                    self.add_tombstone(id, &rel)?;
                }
                Ok(())
            }
            _ => Err(StoreError::NotFound(rel)),
        }
    }

    /// Copies the entire visible subtree at `rel` into this branch's delta.
    fn materialize_subtree(&self, st: &StoreState, id: &BranchId, rel: &Path) -> Result<()> {
        match self.resolve_locked(st, id, rel)? {
            Resolution::Found { layer, path } => {
                let md = path.symlink_metadata()?;
                if md.is_dir() {
                    let target = self.data_root(id).join(rel);
                    if !target.is_dir() {
                        self.ensure_parent_dirs(st, id, rel)?;
                        if target.symlink_metadata().is_ok() {
                            remove_any(&target)?;
                        }
                        fs::create_dir(&target)?;
                        let _ = fs::set_permissions(&target, md.permissions());
                    }
                    for entry in self.list_dir_locked(st, id, rel)? {
                        self.materialize_subtree(st, id, &rel.join(&entry.name))?;
                    }
                } else if &layer != id {
                    self.copy_up_locked(st, id, rel)?;
                }
                Ok(())
            }
            _ => Err(StoreError::NotFound(rel.to_path_buf())),
        }
    }

    /// POSIX-style rename within one branch view.
    pub fn rename(&self, id: &BranchId, src: &Path, dst: &Path) -> Result<()> {
        let src = normalize_rel(src)?;
        let dst = normalize_rel(dst)?;
        if src.as_os_str().is_empty() || dst.as_os_str().is_empty() {
            return Err(StoreError::InvalidPath(src));
        }
        if src == dst {
            return Ok(());
        }
        if dst.starts_with(&src) || src.starts_with(&dst) {
            return Err(StoreError::InvalidPath(dst));
        }
        let st = self.state.read();
        self.require_mutable(&st, id)?;
        let src_res = self.resolve_locked(&st, id, &src)?;
        let Resolution::Found { path: src_phys, .. } = &src_res else {
            return Err(StoreError::NotFound(src));
        };
        let src_is_dir = src_phys.symlink_metadata()?.is_dir();

        // POSIX destination-overwrite checks against the merged view.
        if let Resolution::Found { path: dst_phys, .. } = self.resolve_locked(&st, id, &dst)? {
            let dst_is_dir = dst_phys.symlink_metadata()?.is_dir();
            match (src_is_dir, dst_is_dir) {
                (true, false) => return Err(StoreError::NotADirectory(dst)),
                (false, true) => return Err(StoreError::IsADirectory(dst)),
                (true, true) => {
                    if !self.list_dir_locked(&st, id, &dst)?.is_empty() {
                        return Err(StoreError::NotEmpty(dst));
                    }
                }
                (false, false) => {}
            }
        } else if let Some(parent) = dst.parent() {
            if !parent.as_os_str().is_empty() {
                match self.resolve_locked(&st, id, parent)? {
                    Resolution::Found { path, .. } if path.symlink_metadata()?.is_dir() => {}
                    Resolution::Found { .. } => {
                        return Err(StoreError::NotADirectory(parent.to_path_buf()))
                    }
                    _ => return Err(StoreError::NotFound(parent.to_path_buf())),
                }
            }
        }

        if id.is_root() {
            fs::rename(self.base_dir.join(&src), self.base_dir.join(&dst))?;
            return Ok(());
        }

        // Bring the whole source into this layer, then move it.
        if src_is_dir {
            self.materialize_subtree(&st, id, &src)?;
        } else {
            self.copy_up_locked(&st, id, &src)?;
        }
        self.ensure_parent_dirs(&st, id, &dst)?;
        let data_root = self.data_root(id);
        let dst_phys = data_root.join(&dst);
        if dst_phys.symlink_metadata().is_ok() {
            remove_any(&dst_phys)?;
        }
        fs::rename(data_root.join(&src), &dst_phys)?;

        if !self.has_opaque_prefix(id, &src) {
            self.add_tombstone(id, &src)?;
        }
        // Mark the destination opaque so ancestor entries under (or at) the
        // old destination name never merge into the moved subtree.
        if !self.has_opaque_prefix(id, &dst) {
            self.add_tombstone(id, &dst)?;
        }
        Ok(())
    }

    // ---- branch lifecycle --------------------------------------------------

    pub fn create_branch(&self, parent: &BranchId, name: &str) -> Result<BranchId> {
        let start = Instant::now();
        let ids = self.create_branches_locked(parent, &[name.to_string()], false)?;
        self.record("create", start);
        Ok(ids.into_iter().next().unwrap())
    }

    /// All-or-nothing creation of sibling branches sharing one exclusive
    /// group: at most one of them may ever commit.
    pub fn create_branch_group(&self, parent: &BranchId, names: &[String]) -> Result<Vec<BranchId>> {
        if names.is_empty() {
            return Err(StoreError::EmptyGroup);
        }
        let start = Instant::now();
        let ids = self.create_branches_locked(parent, names, true)?;
        self.record("create_group", start);
        Ok(ids)
    }

    /// Creates a branch with an auto-generated name `<parent>-<serial>`;
    /// returns the id and the serial (used by the ioctl surface, whose only
    /// result channel is a small integer).
    pub fn create_branch_auto(&self, parent: &BranchId) -> Result<(BranchId, u32)> {
        let start = Instant::now();
        let serial = {
            let mut st = self.state.write();
            let mut serial = st.next_serial;
            while st
                .branches
                .get(&BranchId::parse(&format!("{parent}-{serial}"))?)
                .is_some_and(|b| !b.state.is_terminal())
            {
                serial += 1;
            }
            st.next_serial = serial + 1;
            serial
        };
        let name = format!("{parent}-{serial}");
        let ids = self.create_branches_locked(parent, &[name], false)?;
        self.record("create", start);
        Ok((ids.into_iter().next().unwrap(), serial as u32))
    }

    fn create_branches_locked(
        &self,
        parent: &BranchId,
        names: &[String],
        grouped: bool,
    ) -> Result<Vec<BranchId>> {
        let mut st = self.state.write();
        let parent_meta = self.meta(&st, parent)?.clone();
        match parent_meta.state {
            BranchState::Active | BranchState::Frozen => {}
            BranchState::Stale => return Err(StoreError::Stale(parent.to_string())),
            _ => return Err(StoreError::Terminal(parent.to_string())),
        }

        // Validate every name up front so creation is all-or-nothing.
        let mut ids = Vec::with_capacity(names.len());
        let mut dedup = HashSet::new();
        for name in names {
            let id = BranchId::new(name)?;
            if !dedup.insert(id.clone()) {
                return Err(StoreError::DuplicateName(name.clone()));
            }
            if st.branches.get(&id).is_some_and(|b| !b.state.is_terminal()) {
                return Err(StoreError::DuplicateName(name.clone()));
            }
            ids.push(id);
        }

        let group_id = if grouped {
            let gid = st.next_group;
            st.next_group += 1;
            Some(gid)
        } else {
            None
        };

        let mut created_dirs: Vec<PathBuf> = Vec::new();
        let result: Result<()> = (|| {
            for id in &ids {
                // Retired name reuse: clear out the old terminal branch.
                if st.branches.contains_key(id) {
                    let dir = self.branch_dir(id);
                    if dir.exists() {
                        fs::remove_dir_all(&dir)?;
                    }
                }
                let dir = self.branch_dir(id);
                fs::create_dir_all(dir.join("data"))?;
                fs::create_dir_all(dir.join("tombstones"))?;
                created_dirs.push(dir);
                let meta = BranchMeta {
                    id: id.clone(),
                    parent: Some(parent.clone()),
                    state: BranchState::Active,
                    epoch: 0,
                    parent_epoch_at_create: parent_meta.epoch,
                    group: group_id,
                    children: 0,
                };
                self.persist_meta(&meta)?;
                st.branches.insert(id.clone(), meta);
            }
            Ok(())
        })();
        if let Err(e) = result {
            for id in &ids {
                st.branches.remove(id);
            }
            for dir in created_dirs {
                let _ = fs::remove_dir_all(&dir);
            }
            return Err(e);
        }

        if let Some(gid) = group_id {
            st.groups.insert(
                gid,
                ExclusiveGroup {
                    group_id: gid,
                    members: ids.iter().cloned().collect(),
                    winner: None,
                },
            );
        }

        {
            let pm = st.branches.get_mut(parent).unwrap();
            pm.children += names.len() as u32;
            if pm.state == BranchState::Active {
                pm.state = BranchState::Frozen; // frozen origin
            }
            let pm = pm.clone();
            self.persist_meta(&pm)?;
        }
        Ok(ids)
    }

    /// Applies this branch's delta to its parent atomically with respect to
    /// all other store operations, then invalidates siblings.
    pub fn commit_branch(&self, id: &BranchId) -> Result<CommitReport> {
        let start = Instant::now();
        let mut st = self.state.write();
        let meta = self.meta(&st, id)?.clone();
        if meta.id.is_root() {
            return Err(StoreError::RootBranch);
        }
        match meta.state {
            BranchState::Active => {}
            BranchState::Frozen => return Err(StoreError::Frozen(id.to_string())),
            BranchState::Stale => return Err(StoreError::Stale(id.to_string())),
            _ => return Err(StoreError::Terminal(id.to_string())),
        }
        let parent = meta.parent.clone().expect("non-root has parent");
        let parent_meta = self.meta(&st, &parent)?.clone();
        if parent_meta.state == BranchState::Stale || parent_meta.state.is_terminal() {
            return Err(StoreError::Stale(parent.to_string()));
        }
        if parent_meta.epoch != meta.parent_epoch_at_create {
            return Err(StoreError::Stale(id.to_string()));
        }

        // First-commit-wins: the winner transition happens exactly once.
        if let Some(gid) = meta.group {
            let group = st.groups.get_mut(&gid).expect("group exists");
            match &group.winner {
                Some(w) if w != id => return Err(StoreError::Stale(id.to_string())),
                _ => group.winner = Some(id.clone()),
            }
        }

        let target_epoch = parent_meta.epoch + 1;
        let marker = self.branch_dir(id).join(MARKER_FILE);
        {
            let mut f = fs::File::create(&marker)?;
            writeln!(f, "{} {}", parent, target_epoch)?;
            f.sync_all()?;
        }

        let report = self.apply_delta(id, &parent)?;

        // Epoch bump invalidates every other live child of the parent.
        let mut invalidated = 0u64;
        let sibling_ids: Vec<BranchId> = st
            .branches
            .values()
            .filter(|b| b.parent.as_ref() == Some(&parent) && &b.id != id && !b.state.is_terminal())
            .map(|b| b.id.clone())
            .collect();
        for sid in &sibling_ids {
            let sm = st.branches.get_mut(sid).unwrap();
            sm.state = BranchState::Stale;
            invalidated += 1;
            let sm = sm.clone();
            self.persist_meta(&sm)?;
        }

        {
            let pm = st.branches.get_mut(&parent).unwrap();
            pm.epoch = target_epoch;
            pm.children = pm.children.saturating_sub(1);
            if pm.children == 0 && pm.state == BranchState::Frozen {
                pm.state = BranchState::Active; // parent thaws
            }
            let pm = pm.clone();
            self.persist_meta(&pm)?;
        }
        {
            let bm = st.branches.get_mut(id).unwrap();
            bm.state = BranchState::Committed;
            let bm = bm.clone();
            self.persist_meta(&bm)?;
        }
        fs::remove_file(&marker)?;
        let _ = fs::remove_dir_all(self.branch_dir(id).join("data"));
        let _ = fs::remove_dir_all(self.branch_dir(id).join("tombstones"));

        let report = CommitReport {
            branch: id.to_string(),
            siblings_invalidated: invalidated,
            ..report
        };
        st.reports.insert(id.clone(), report.clone());
        drop(st);
        self.record("commit", start);
        Ok(report)
    }

    /// Re-runs an interrupted commit found at startup. All apply steps are
    /// idempotent; the epoch is only advanced if it had not been yet.
    fn replay_commit(&self, id: &BranchId) -> Result<()> {
        let marker = self.branch_dir(id).join(MARKER_FILE);
        let text = fs::read_to_string(&marker)?;
        let mut parts = text.split_whitespace();
        let (Some(parent), Some(epoch)) = (parts.next(), parts.next()) else {
            fs::remove_file(&marker)?;
            return Ok(());
        };
        let parent = BranchId::parse(parent)?;
        let target_epoch: u64 = epoch.parse().unwrap_or(0);

        if self.branch_dir(id).join("data").is_dir() {
            self.apply_delta(id, &parent)?;
        }
        let mut st = self.state.write();
        if let Some(pm) = st.branches.get_mut(&parent) {
            pm.epoch = pm.epoch.max(target_epoch);
            let pm = pm.clone();
            self.persist_meta(&pm)?;
        }
        if let Some(bm) = st.branches.get_mut(id) {
            bm.state = BranchState::Committed;
            let bm = bm.clone();
            self.persist_meta(&bm)?;
        }
        fs::remove_file(&marker)?;
        let _ = fs::remove_dir_all(self.branch_dir(id).join("data"));
        let _ = fs::remove_dir_all(self.branch_dir(id).join("tombstones"));
        Ok(())
    }

    /// Applies tombstones then data from `id`'s delta into `parent`'s layer
    /// (the base directory when the parent is root), flushing contents and
    /// affected directories durably.
    fn apply_delta(&self, id: &BranchId, parent: &BranchId) -> Result<CommitReport> {
        let src_data = self.branch_dir(id).join("data");
        let src_tombs = self.branch_dir(id).join("tombstones");
        let dst_data = self.data_root(parent);
        let mut report = CommitReport {
            branch: id.to_string(),
            ..Default::default()
        };
        let mut dirs_to_sync: HashSet<PathBuf> = HashSet::new();

        // Deletions first.
        let mut tomb_paths = Vec::new();
        collect_sentinels(&src_tombs, &src_tombs, &mut tomb_paths)?;
        tomb_paths.sort();
        let data_paths = {
            let mut v = Vec::new();
            collect_tree(&src_data, &src_data, &mut v)?;
            v.sort();
            v
        };
        let data_set: HashSet<&PathBuf> = data_paths.iter().collect();
        for rel in &tomb_paths {
            let victim = dst_data.join(rel);
            if victim.symlink_metadata().is_ok() {
                remove_any(&victim)?;
            }
            if !parent.is_root() {
                self.add_tombstone(parent, rel)?;
                if let Some(tr) = self.tomb_root(parent) {
                    if let Some(p) = tr.join(rel).parent() {
                        dirs_to_sync.insert(p.to_path_buf());
                    }
                }
            }
            if let Some(p) = victim.parent() {
                dirs_to_sync.insert(p.to_path_buf());
            }
            if !data_set.contains(rel) {
                report.tombstones_applied += 1;
            }
        }

        // Then data, parents before children.
        for rel in &data_paths {
            let src = src_data.join(rel);
            let dst = dst_data.join(rel);
            let md = src.symlink_metadata()?;
            if md.is_dir() {
                match dst.symlink_metadata() {
                    Ok(m) if m.is_dir() => {}
                    Ok(_) => {
                        remove_any(&dst)?;
                        fs::create_dir(&dst)?;
                    }
                    Err(_) => fs::create_dir(&dst)?,
                }
                let _ = fs::set_permissions(&dst, md.permissions());
            } else {
                let bytes = self.copy_file_entry(&src, &dst)?;
                report.bytes_copied += bytes;
                if let Ok(f) = fs::File::open(&dst) {
                    f.sync_all()?; // durability is enforced at commit time
                }
            }
            report.files_applied += 1;
            if let Some(p) = dst.parent() {
                dirs_to_sync.insert(p.to_path_buf());
            }
        }

        for dir in dirs_to_sync {
            if let Ok(f) = fs::File::open(&dir) {
                let _ = f.sync_all();
            }
        }
        Ok(report)
    }

    /// Discards the branch's delta without modifying the parent. Live
    /// children are aborted first, depth-first.
    pub fn abort_branch(&self, id: &BranchId) -> Result<()> {
        let start = Instant::now();
        let mut st = self.state.write();
        self.abort_locked(&mut st, id)?;
        drop(st);
        self.record("abort", start);
        Ok(())
    }

    fn abort_locked(&self, st: &mut StoreState, id: &BranchId) -> Result<()> {
        let meta = self.meta(st, id)?.clone();
        if meta.id.is_root() {
            return Err(StoreError::RootBranch);
        }
        if meta.state.is_terminal() {
            return Err(StoreError::Terminal(id.to_string()));
        }
        let children: Vec<BranchId> = st
            .branches
            .values()
            .filter(|b| b.parent.as_ref() == Some(id) && !b.state.is_terminal())
            .map(|b| b.id.clone())
            .collect();
        for child in children {
            self.abort_locked(st, &child)?;
        }
        let _ = fs::remove_dir_all(self.branch_dir(id).join("data"));
        let _ = fs::remove_dir_all(self.branch_dir(id).join("tombstones"));
        {
            let bm = st.branches.get_mut(id).unwrap();
            bm.state = BranchState::Aborted;
            let bm = bm.clone();
            self.persist_meta(&bm)?;
        }
        if let Some(parent) = meta.parent {
            let pm = st.branches.get_mut(&parent).unwrap();
            pm.children = pm.children.saturating_sub(1);
            if pm.children == 0 && pm.state == BranchState::Frozen {
                pm.state = BranchState::Active;
            }
            let pm = pm.clone();
            self.persist_meta(&pm)?;
        }
        Ok(())
    }

    // ---- introspection -----------------------------------------------------

    pub fn branch_status(&self, id: &BranchId) -> Result<BranchMeta> {
        let st = self.state.read();
        Ok(self.meta(&st, id)?.clone())
    }

    /// Point-in-time snapshot of all branch metadata, root first, then
    /// sorted by name.
    pub fn list_branches(&self) -> Vec<BranchMeta> {
        let st = self.state.read();
        let mut out: Vec<BranchMeta> = st.branches.values().cloned().collect();
        out.sort_by(|a, b| (!a.id.is_root(), a.id.clone()).cmp(&(!b.id.is_root(), b.id.clone())));
        out
    }

    /// Branches that are live (non-terminal), for `@` listing at mount root.
    pub fn live_branches(&self) -> Vec<BranchId> {
        let st = self.state.read();
        let mut out: Vec<BranchId> = st
            .branches
            .values()
            .filter(|b| !b.state.is_terminal() && !b.id.is_root())
            .map(|b| b.id.clone())
            .collect();
        out.sort();
        out
    }

    /// The commit report recorded when `id` committed, if it did in this
    /// store's lifetime.
    pub fn last_report(&self, id: &BranchId) -> Option<CommitReport> {
        self.state.read().reports.get(id).cloned()
    }

    pub fn group_of(&self, id: &BranchId) -> Option<ExclusiveGroup> {
        let st = self.state.read();
        let gid = st.branches.get(id)?.group?;
        st.groups.get(&gid).cloned()
    }

    /// Current epoch of a branch (used for epoch fencing of open handles).
    pub fn epoch_of(&self, id: &BranchId) -> Result<u64> {
        Ok(self.branch_status(id)?.epoch)
    }
}

fn remove_any(path: &Path) -> std::io::Result<()> {
    let md = path.symlink_metadata()?;
    if md.is_dir() {
        fs::remove_dir_all(path)
    } else {
        fs::remove_file(path)
    }
}

/// Collects relative paths of all sentinel files under a tombstone tree.
fn collect_sentinels(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(_) => return Ok(()),
    };
    for entry in rd {
        let entry = entry?;
        let ft = entry.file_type()?;
        if ft.is_dir() {
            collect_sentinels(root, &entry.path(), out)?;
        } else if ft.is_file() {
            out.push(entry.path().strip_prefix(root).unwrap().to_path_buf());
        }
    }
    Ok(())
}

/// Collects relative paths of every entry under a data tree (dirs included).
fn collect_tree(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(_) => return Ok(()),
    };
    for entry in rd {
        let entry = entry?;
        let ft = entry.file_type()?;
        if ft.is_fifo() || ft.is_socket() || ft.is_block_device() || ft.is_char_device() {
            return Err(StoreError::UnsupportedFileType(entry.path()));
        }
        out.push(entry.path().strip_prefix(root).unwrap().to_path_buf());
        if ft.is_dir() {
            collect_tree(root, &entry.path(), out)?;
        }
    }
    Ok(())
}
