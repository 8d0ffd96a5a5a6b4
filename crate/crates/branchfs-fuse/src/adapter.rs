//! The FUSE request handler: maps kernel operations onto the branch store.
//!
//! Inodes are keyed by full mount-relative path (so `@b1/f` and `f` are
//! distinct inodes even when they resolve to the same bytes). Attribute and
//! entry TTLs are zero: branch commits and aborts change what a path means,
//! and the kernel must re-ask every time.

use std::collections::HashMap;
use std::ffi::OsStr;
use std::fs;
use std::os::unix::ffi::OsStrExt;
use std::os::unix::fs::{FileExt, MetadataExt};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use branch_store::{BranchId, BranchState, BranchStore, Resolution, StoreError};
use fuser::{
    consts::FOPEN_DIRECT_IO, FileAttr, FileType, Filesystem, ReplyAttr, ReplyCreate, ReplyData,
    ReplyDirectory, ReplyEmpty, ReplyEntry, ReplyIoctl, ReplyOpen, ReplyStatfs, ReplyWrite,
    Request, FUSE_ROOT_ID,
};

use crate::control::{self, ControlCommand};
use crate::route::{is_reserved_root_name, route, RoutedPath, Target, CONTROL_NAME};

/// `_IO('b', 0)`: fork a branch from the one owning the fd; the new branch's
/// serial number is returned as the ioctl result and its name is
/// `<parent>-<serial>`.
pub const FS_IOC_BRANCH_CREATE: u32 = 0x6200;
/// `_IO('b', 1)`: commit the branch owning the fd.
pub const FS_IOC_BRANCH_COMMIT: u32 = 0x6201;
/// `_IO('b', 2)`: abort the branch owning the fd.
pub const FS_IOC_BRANCH_ABORT: u32 = 0x6202;

const TTL: Duration = Duration::ZERO;

struct FileHandle {
    routed: RoutedPath,
    writable: bool,
    /// Kept open across requests when fd caching is enabled; None means
    /// every read/write re-resolves and reopens through the store.
    cached: Option<fs::File>,
}

struct DirHandle {
    entries: Vec<(std::ffi::OsString, FileType)>,
}

struct ControlHandle {
    /// Bytes written but not yet terminated by a newline.
    inbuf: Vec<u8>,
    /// Response queued by a `status`/`list` command for this handle.
    pending: Option<Vec<u8>>,
    /// Body being served to an in-progress read sequence, and the file
    /// offset at which it began (reads often follow a write on the same
    /// descriptor, so the first read offset is rarely zero).
    current: Vec<u8>,
    current_base: u64,
}

enum Handle {
    File(FileHandle),
    Dir(DirHandle),
    Control(ControlHandle),
}

pub struct BranchFs {
    store: Arc<BranchStore>,
    default_branch: BranchId,
    allow_control: bool,
    fd_cache_enabled: bool,
    ino_by_path: HashMap<PathBuf, u64>,
    path_by_ino: HashMap<u64, PathBuf>,
    next_ino: u64,
    handles: HashMap<u64, Handle>,
    next_fh: u64,
}

impl BranchFs {
    pub fn new(
        store: Arc<BranchStore>,
        default_branch: BranchId,
        allow_control: bool,
        fd_cache_capacity: usize,
    ) -> Self {
        let mut ino_by_path = HashMap::new();
        let mut path_by_ino = HashMap::new();
        ino_by_path.insert(PathBuf::new(), FUSE_ROOT_ID);
        path_by_ino.insert(FUSE_ROOT_ID, PathBuf::new());
        BranchFs {
            store,
            default_branch,
            allow_control,
            fd_cache_enabled: fd_cache_capacity > 0,
            ino_by_path,
            path_by_ino,
            next_ino: FUSE_ROOT_ID + 1,
            handles: HashMap::new(),
            next_fh: 1,
        }
    }

    fn ino_for(&mut self, path: PathBuf) -> u64 {
        if let Some(&ino) = self.ino_by_path.get(&path) {
            return ino;
        }
        let ino = self.next_ino;
        self.next_ino += 1;
        self.ino_by_path.insert(path.clone(), ino);
        self.path_by_ino.insert(ino, path);
        ino
    }

    fn path_of(&self, ino: u64) -> Option<PathBuf> {
        self.path_by_ino.get(&ino).cloned()
    }

    fn target_of(&self, ino: u64) -> Option<Target> {
        let path = self.path_of(ino)?;
        route(&path, &self.default_branch)
    }

    fn alloc_fh(&mut self, h: Handle) -> u64 {
        let fh = self.next_fh;
        self.next_fh += 1;
        self.handles.insert(fh, h);
        fh
    }

    fn branch_live(&self, id: &BranchId) -> bool {
        matches!(
            self.store.branch_status(id),
            Ok(meta) if !meta.state.is_terminal()
        )
    }

    fn synthetic_dir_attr(&self, ino: u64) -> FileAttr {
        let md = fs::metadata(self.store.base_dir()).ok();
        let now = SystemTime::now();
        FileAttr {
            ino,
            size: 0,
            blocks: 0,
            atime: now,
            mtime: md.as_ref().and_then(|m| m.modified().ok()).unwrap_or(now),
            ctime: now,
            crtime: now,
            kind: FileType::Directory,
            perm: md.as_ref().map(|m| (m.mode() & 0o7777) as u16).unwrap_or(0o755),
            nlink: 2,
            uid: md.as_ref().map(|m| m.uid()).unwrap_or(0),
            gid: md.as_ref().map(|m| m.gid()).unwrap_or(0),
            rdev: 0,
            blksize: 4096,
            flags: 0,
        }
    }

    fn control_attr(&self, ino: u64) -> FileAttr {
        let now = SystemTime::now();
        FileAttr {
            ino,
            size: 0,
            blocks: 0,
            atime: now,
            mtime: now,
            ctime: now,
            crtime: now,
            kind: FileType::RegularFile,
            perm: 0o600,
            nlink: 1,
            uid: 0,
            gid: 0,
            rdev: 0,
            blksize: 4096,
            flags: 0,
        }
    }

    fn attr_for(&mut self, ino: u64) -> Result<FileAttr, i32> {
        match self.target_of(ino).ok_or(libc::ENOENT)? {
            Target::Root => Ok(self.synthetic_dir_attr(ino)),
            Target::Control => {
                if self.allow_control {
                    Ok(self.control_attr(ino))
                } else {
                    Err(libc::ENOENT)
                }
            }
            Target::BranchRoot(b) => {
                if self.branch_live(&b) {
                    Ok(self.synthetic_dir_attr(ino))
                } else {
                    Err(libc::ENOENT)
                }
            }
            Target::Entry(r) => {
                let phys = self.resolve_found(&r)?;
                let md = phys.symlink_metadata().map_err(io_errno)?;
                Ok(attr_from_md(ino, &md))
            }
        }
    }

    fn resolve_found(&self, r: &RoutedPath) -> Result<PathBuf, i32> {
        match self.store.resolve(&r.branch, &r.rel) {
            Ok(Resolution::Found { path, .. }) => Ok(path),
            Ok(_) => Err(libc::ENOENT),
            Err(e) => Err(e.errno()),
        }
    }

    /// Full mount-relative path of `name` under the directory inode `parent`.
    fn child_path(&self, parent: u64, name: &OsStr) -> Result<PathBuf, i32> {
        if name.as_bytes().contains(&b'/') || name.as_bytes() == b"." || name.as_bytes() == b".." {
            return Err(libc::EINVAL);
        }
        let base = self.path_of(parent).ok_or(libc::ENOENT)?;
        Ok(base.join(name))
    }

    /// Routes a child path that must be an ordinary branch entry (the
    /// reserved root namespace cannot be created or removed through the VFS).
    fn child_entry(&self, parent: u64, name: &OsStr) -> Result<(PathBuf, RoutedPath), i32> {
        let full = self.child_path(parent, name)?;
        match route(&full, &self.default_branch) {
            Some(Target::Entry(r)) => Ok((full, r)),
            Some(_) => Err(libc::EPERM),
            None => Err(libc::ENOENT),
        }
    }

    fn reply_entry_for(&mut self, full: PathBuf, reply: ReplyEntry) {
        let ino = self.ino_for(full);
        match self.attr_for(ino) {
            Ok(attr) => reply.entry(&TTL, &attr, 0),
            Err(e) => reply.error(e),
        }
    }

    /// The branch a branch-ioctl acts on: the file handle's branch when
    /// available, otherwise the routing of the inode itself.
    fn ioctl_branch(&self, ino: u64, fh: u64) -> Result<BranchId, i32> {
        if let Some(Handle::File(h)) = self.handles.get(&fh) {
            return Ok(h.routed.branch.clone());
        }
        match self.target_of(ino).ok_or(libc::ENOENT)? {
            Target::Root => Ok(self.default_branch.clone()),
            Target::BranchRoot(b) => Ok(b),
            Target::Entry(r) => Ok(r.branch),
            Target::Control => Ok(self.default_branch.clone()),
        }
    }

    fn run_control_line(&mut self, fh: u64, line: &str) -> Result<(), i32> {
        let cmd = ControlCommand::parse(line).map_err(|e| e.errno())?;
        let response = control::execute(&self.store, &cmd).map_err(|e| e.errno())?;
        if let Some(text) = response {
            if let Some(Handle::Control(h)) = self.handles.get_mut(&fh) {
                h.pending = Some(text.into_bytes());
            }
        }
        Ok(())
    }

    fn rename_ino_subtree(&mut self, src: &Path, dst: &Path) {
        let moved: Vec<(PathBuf, u64)> = self
            .ino_by_path
            .iter()
            .filter(|(p, _)| p.as_path() == src || p.starts_with(src))
            .map(|(p, &i)| (p.clone(), i))
            .collect();
        // Inodes already at the destination are displaced by the rename.
        let displaced: Vec<PathBuf> = self
            .ino_by_path
            .keys()
            .filter(|p| p.as_path() == dst || p.starts_with(dst))
            .cloned()
            .collect();
        for p in displaced {
            if let Some(i) = self.ino_by_path.remove(&p) {
                self.path_by_ino.remove(&i);
            }
        }
        for (p, i) in moved {
            self.ino_by_path.remove(&p);
            let new = dst.join(p.strip_prefix(src).unwrap());
            self.ino_by_path.insert(new.clone(), i);
            self.path_by_ino.insert(i, new);
        }
    }
}

fn io_errno(e: std::io::Error) -> i32 {
    e.raw_os_error().unwrap_or(libc::EIO)
}

fn systime(secs: i64, nanos: i64) -> SystemTime {
    if secs >= 0 {
        UNIX_EPOCH + Duration::new(secs as u64, nanos as u32)
    } else {
        UNIX_EPOCH - Duration::from_secs((-secs) as u64)
    }
}

fn kind_of_md(md: &fs::Metadata) -> FileType {
    let ft = md.file_type();
    use std::os::unix::fs::FileTypeExt;
    if ft.is_dir() {
        FileType::Directory
    } else if ft.is_symlink() {
        FileType::Symlink
    } else if ft.is_fifo() {
        FileType::NamedPipe
    } else if ft.is_socket() {
        FileType::Socket
    } else if ft.is_char_device() {
        FileType::CharDevice
    } else if ft.is_block_device() {
        FileType::BlockDevice
    } else {
        FileType::RegularFile
    }
}

fn attr_from_md(ino: u64, md: &fs::Metadata) -> FileAttr {
    FileAttr {
        ino,
        size: md.size(),
        blocks: md.blocks(),
        atime: systime(md.atime(), md.atime_nsec()),
        mtime: systime(md.mtime(), md.mtime_nsec()),
        ctime: systime(md.ctime(), md.ctime_nsec()),
        crtime: UNIX_EPOCH,
        kind: kind_of_md(md),
        perm: (md.mode() & 0o7777) as u16,
        nlink: md.nlink() as u32,
        uid: md.uid(),
        gid: md.gid(),
        rdev: md.rdev() as u32,
        blksize: md.blksize() as u32,
        flags: 0,
    }
}

fn entry_kind(k: branch_store::EntryKind) -> FileType {
    match k {
        branch_store::EntryKind::Dir => FileType::Directory,
        branch_store::EntryKind::Symlink => FileType::Symlink,
        _ => FileType::RegularFile,
    }
}

impl Filesystem for BranchFs {
    fn lookup(&mut self, _req: &Request<'_>, parent: u64, name: &OsStr, reply: ReplyEntry) {
        let full = match self.child_path(parent, name) {
            Ok(p) => p,
            Err(e) => return reply.error(e),
        };
        self.reply_entry_for(full, reply)
    }

    fn getattr(&mut self, _req: &Request<'_>, ino: u64, _fh: Option<u64>, reply: ReplyAttr) {
        match self.attr_for(ino) {
            Ok(attr) => reply.attr(&TTL, &attr),
            Err(e) => reply.error(e),
        }
    }

    fn setattr(
        &mut self,
        _req: &Request<'_>,
        ino: u64,
        mode: Option<u32>,
        _uid: Option<u32>,
        _gid: Option<u32>,
        size: Option<u64>,
        _atime: Option<fuser::TimeOrNow>,
        _mtime: Option<fuser::TimeOrNow>,
        _ctime: Option<SystemTime>,
        _fh: Option<u64>,
        _crtime: Option<SystemTime>,
        _chgtime: Option<SystemTime>,
        _bkuptime: Option<SystemTime>,
        _flags: Option<u32>,
        reply: ReplyAttr,
    ) {
        match self.target_of(ino) {
            Some(Target::Control) => return reply.attr(&TTL, &self.control_attr(ino)),
            Some(Target::Entry(r)) => {
                if let Some(len) = size {
                    if let Err(e) = self.store.truncate(&r.branch, &r.rel, len) {
                        return reply.error(e.errno());
                    }
                }
                if let Some(m) = mode {
                    if let Err(e) = self.store.set_mode(&r.branch, &r.rel, m & 0o7777) {
                        return reply.error(e.errno());
                    }
                }
            }
            Some(Target::Root) | Some(Target::BranchRoot(_)) => {}
            None => return reply.error(libc::ENOENT),
        }
        match self.attr_for(ino) {
            Ok(attr) => reply.attr(&TTL, &attr),
            Err(e) => reply.error(e),
        }
    }

    fn readlink(&mut self, _req: &Request<'_>, ino: u64, reply: ReplyData) {
        let Some(Target::Entry(r)) = self.target_of(ino) else {
            return reply.error(libc::EINVAL);
        };
        match self.resolve_found(&r).and_then(|p| fs::read_link(p).map_err(io_errno)) {
            Ok(target) => reply.data(target.as_os_str().as_bytes()),
            Err(e) => reply.error(e),
        }
    }

    fn mknod(
        &mut self,
        _req: &Request<'_>,
        parent: u64,
        name: &OsStr,
        mode: u32,
        _umask: u32,
        _rdev: u32,
        reply: ReplyEntry,
    ) {
        if mode & libc::S_IFMT != libc::S_IFREG {
            return reply.error(libc::EOPNOTSUPP);
        }
        let (full, r) = match self.child_entry(parent, name) {
            Ok(v) => v,
            Err(e) => return reply.error(e),
        };
        match self.store.create_file(&r.branch, &r.rel, mode & 0o7777) {
            Ok(_) => self.reply_entry_for(full, reply),
            Err(e) => reply.error(e.errno()),
        }
    }

    fn mkdir(
        &mut self,
        _req: &Request<'_>,
        parent: u64,
        name: &OsStr,
        mode: u32,
        _umask: u32,
        reply: ReplyEntry,
    ) {
        let (full, r) = match self.child_entry(parent, name) {
            Ok(v) => v,
            Err(e) => return reply.error(e),
        };
        match self.store.mkdir(&r.branch, &r.rel, mode & 0o7777) {
            Ok(_) => self.reply_entry_for(full, reply),
            Err(e) => reply.error(e.errno()),
        }
    }

    fn unlink(&mut self, _req: &Request<'_>, parent: u64, name: &OsStr, reply: ReplyEmpty) {
        let (_, r) = match self.child_entry(parent, name) {
            Ok(v) => v,
            Err(e) => return reply.error(e),
        };
        match self.store.delete_file(&r.branch, &r.rel) {
            Ok(()) => reply.ok(),
            Err(e) => reply.error(e.errno()),
        }
    }

    fn rmdir(&mut self, _req: &Request<'_>, parent: u64, name: &OsStr, reply: ReplyEmpty) {
        let (_, r) = match self.child_entry(parent, name) {
            Ok(v) => v,
            Err(e) => return reply.error(e),
        };
        match self.store.delete_dir(&r.branch, &r.rel) {
            Ok(()) => reply.ok(),
            Err(e) => reply.error(e.errno()),
        }
    }

    fn symlink(
        &mut self,
        _req: &Request<'_>,
        parent: u64,
        link_name: &OsStr,
        target: &Path,
        reply: ReplyEntry,
    ) {
        let (full, r) = match self.child_entry(parent, link_name) {
            Ok(v) => v,
            Err(e) => return reply.error(e),
        };
        match self.store.symlink_entry(&r.branch, &r.rel, target) {
            Ok(_) => self.reply_entry_for(full, reply),
            Err(e) => reply.error(e.errno()),
        }
    }

    fn rename(
        &mut self,
        _req: &Request<'_>,
        parent: u64,
        name: &OsStr,
        newparent: u64,
        newname: &OsStr,
        _flags: u32,
        reply: ReplyEmpty,
    ) {
        let (src_full, src) = match self.child_entry(parent, name) {
            Ok(v) => v,
            Err(e) => return reply.error(e),
        };
        let (dst_full, dst) = match self.child_entry(newparent, newname) {
            Ok(v) => v,
            Err(e) => return reply.error(e),
        };
        if src.branch != dst.branch {
            return reply.error(libc::EXDEV);
        }
        match self.store.rename(&src.branch, &src.rel, &dst.rel) {
            Ok(()) => {
                self.rename_ino_subtree(&src_full, &dst_full);
                reply.ok()
            }
            Err(e) => reply.error(e.errno()),
        }
    }

    fn open(&mut self, _req: &Request<'_>, ino: u64, flags: i32, reply: ReplyOpen) {
        match self.target_of(ino) {
            Some(Target::Control) => {
                if !self.allow_control {
                    return reply.error(libc::ENOENT);
                }
                let fh = self.alloc_fh(Handle::Control(ControlHandle {
                    inbuf: Vec::new(),
                    pending: None,
                    current: Vec::new(),
                    current_base: 0,
                }));
                reply.opened(fh, FOPEN_DIRECT_IO)
            }
            Some(Target::Entry(r)) => {
                let writable = flags & libc::O_ACCMODE != libc::O_RDONLY;
                let phys = if writable {
                    match self.store.prepare_write(&r.branch, &r.rel) {
                        Ok(p) => p,
                        Err(e) => return reply.error(e.errno()),
                    }
                } else {
                    match self.resolve_found(&r) {
                        Ok(p) => p,
                        Err(e) => return reply.error(e),
                    }
                };
                let cached = if self.fd_cache_enabled {
                    fs::OpenOptions::new()
                        .read(true)
                        .write(writable)
                        .open(&phys)
                        .ok()
                } else {
                    None
                };
                let fh = self.alloc_fh(Handle::File(FileHandle {
                    routed: r,
                    writable,
                    cached,
                }));
                reply.opened(fh, 0)
            }
            Some(Target::Root) | Some(Target::BranchRoot(_)) => reply.error(libc::EISDIR),
            None => reply.error(libc::ENOENT),
        }
    }

    fn read(
        &mut self,
        _req: &Request<'_>,
        _ino: u64,
        fh: u64,
        offset: i64,
        size: u32,
        _flags: i32,
        _lock_owner: Option<u64>,
        reply: ReplyData,
    ) {
        let store = Arc::clone(&self.store);
        match self.handles.get_mut(&fh) {
            Some(Handle::Control(h)) => {
                if let Some(body) = h.pending.take() {
                    h.current = body;
                    h.current_base = offset as u64;
                } else if offset == 0 {
                    h.current = control::list_text(&store).into_bytes();
                    h.current_base = 0;
                }
                let start = ((offset as u64).saturating_sub(h.current_base) as usize)
                    .min(h.current.len());
                let end = (start + size as usize).min(h.current.len());
                reply.data(&h.current[start..end])
            }
            Some(Handle::File(h)) => {
                if let Err(e) = check_read_state(&store, &h.routed.branch) {
                    return reply.error(e);
                }
                if let Some(f) = &h.cached {
                    let mut buf = vec![0u8; size as usize];
                    match f.read_at(&mut buf, offset as u64) {
                        Ok(n) => reply.data(&buf[..n]),
                        Err(e) => reply.error(io_errno(e)),
                    }
                } else {
                    match store.read_file(&h.routed.branch, &h.routed.rel, offset as u64, size as usize)
                    {
                        Ok(data) => reply.data(&data),
                        Err(e) => reply.error(e.errno()),
                    }
                }
            }
            _ => reply.error(libc::EBADF),
        }
    }

    fn write(
        &mut self,
        _req: &Request<'_>,
        _ino: u64,
        fh: u64,
        offset: i64,
        data: &[u8],
        _write_flags: u32,
        _flags: i32,
        _lock_owner: Option<u64>,
        reply: ReplyWrite,
    ) {
        match self.handles.get(&fh) {
            Some(Handle::Control(_)) => {
                let mut lines = Vec::new();
                {
                    let Some(Handle::Control(h)) = self.handles.get_mut(&fh) else {
                        return reply.error(libc::EBADF);
                    };
                    h.inbuf.extend_from_slice(data);
                    while let Some(pos) = h.inbuf.iter().position(|&b| b == b'\n') {
                        let line: Vec<u8> = h.inbuf.drain(..=pos).collect();
                        match String::from_utf8(line) {
                            Ok(s) => lines.push(s.trim_end_matches('\n').to_string()),
                            Err(_) => return reply.error(libc::EINVAL),
                        }
                    }
                }
                for line in lines {
                    if let Err(e) = self.run_control_line(fh, &line) {
                        return reply.error(e);
                    }
                }
                reply.written(data.len() as u32)
            }
            Some(Handle::File(h)) => {
                if !h.writable {
                    return reply.error(libc::EBADF);
                }
                let store = Arc::clone(&self.store);
                let branch = h.routed.branch.clone();
                let rel = h.routed.rel.clone();
                if let Err(e) = check_write_state(&store, &branch) {
                    return reply.error(e);
                }
                let Some(Handle::File(h)) = self.handles.get(&fh) else {
                    return reply.error(libc::EBADF);
                };
                if let Some(f) = &h.cached {
                    match f.write_at(data, offset as u64) {
                        Ok(n) => reply.written(n as u32),
                        Err(e) => reply.error(io_errno(e)),
                    }
                } else {
                    match store.write_file(&branch, &rel, offset as u64, data) {
                        Ok(n) => reply.written(n),
                        Err(e) => reply.error(e.errno()),
                    }
                }
            }
            _ => reply.error(libc::EBADF),
        }
    }

    fn flush(&mut self, _req: &Request<'_>, _ino: u64, _fh: u64, _lock_owner: u64, reply: ReplyEmpty) {
        reply.ok()
    }

    fn release(
        &mut self,
        _req: &Request<'_>,
        _ino: u64,
        fh: u64,
        _flags: i32,
        _lock_owner: Option<u64>,
        _flush: bool,
        reply: ReplyEmpty,
    ) {
        self.handles.remove(&fh);
        reply.ok()
    }

    // Branch writes are volatile by design; durability happens at commit.
    fn fsync(&mut self, _req: &Request<'_>, _ino: u64, _fh: u64, _datasync: bool, reply: ReplyEmpty) {
        reply.ok()
    }

    fn opendir(&mut self, _req: &Request<'_>, ino: u64, _flags: i32, reply: ReplyOpen) {
        let mut entries: Vec<(std::ffi::OsString, FileType)> = vec![
            (".".into(), FileType::Directory),
            ("..".into(), FileType::Directory),
        ];
        match self.target_of(ino) {
            Some(Target::Root) => {
                match self.store.list_dir(&self.default_branch, Path::new("")) {
                    Ok(list) => {
                        for e in list {
                            if !is_reserved_root_name(&e.name) {
                                entries.push((e.name, entry_kind(e.kind)));
                            }
                        }
                    }
                    Err(e) => return reply.error(e.errno()),
                }
                for meta in self.store.list_branches() {
                    if meta.state.is_terminal() || meta.parent.is_none() {
                        continue;
                    }
                    entries.push((format!("@{}", meta.id.as_str()).into(), FileType::Directory));
                }
                if self.allow_control {
                    entries.push((CONTROL_NAME.into(), FileType::RegularFile));
                }
            }
            Some(Target::BranchRoot(b)) => {
                match self.store.list_dir(&b, Path::new("")) {
                    Ok(list) => {
                        for e in list {
                            entries.push((e.name, entry_kind(e.kind)));
                        }
                    }
                    Err(e) => return reply.error(e.errno()),
                }
            }
            Some(Target::Entry(r)) => match self.store.list_dir(&r.branch, &r.rel) {
                Ok(list) => {
                    for e in list {
                        entries.push((e.name, entry_kind(e.kind)));
                    }
                }
                Err(e) => return reply.error(e.errno()),
            },
            Some(Target::Control) => return reply.error(libc::ENOTDIR),
            None => return reply.error(libc::ENOENT),
        }
        let fh = self.alloc_fh(Handle::Dir(DirHandle { entries }));
        reply.opened(fh, 0)
    }

    fn readdir(
        &mut self,
        _req: &Request<'_>,
        ino: u64,
        fh: u64,
        offset: i64,
        mut reply: ReplyDirectory,
    ) {
        let entries = match self.handles.get(&fh) {
            Some(Handle::Dir(d)) => d.entries.clone(),
            _ => return reply.error(libc::EBADF),
        };
        let dir_path = match self.path_of(ino) {
            Some(p) => p,
            None => return reply.error(libc::ENOENT),
        };
        for (i, (name, kind)) in entries.iter().enumerate().skip(offset as usize) {
            let entry_ino = if name.as_os_str().as_bytes() == b"." || name.as_os_str().as_bytes() == b".." {
                ino
            } else {
                self.ino_for(dir_path.join(name))
            };
            if reply.add(entry_ino, (i + 1) as i64, *kind, name) {
                break;
            }
        }
        reply.ok()
    }

    fn releasedir(&mut self, _req: &Request<'_>, _ino: u64, fh: u64, _flags: i32, reply: ReplyEmpty) {
        self.handles.remove(&fh);
        reply.ok()
    }

    fn fsyncdir(&mut self, _req: &Request<'_>, _ino: u64, _fh: u64, _datasync: bool, reply: ReplyEmpty) {
        reply.ok()
    }

    fn statfs(&mut self, _req: &Request<'_>, _ino: u64, reply: ReplyStatfs) {
        let mut st: libc::statvfs = unsafe { std::mem::zeroed() };
        let c = std::ffi::CString::new(self.store.base_dir().as_os_str().as_bytes()).unwrap();
        let rc = unsafe { libc::statvfs(c.as_ptr(), &mut st) };
        if rc == 0 {
            reply.statfs(
                st.f_blocks,
                st.f_bfree,
                st.f_bavail,
                st.f_files,
                st.f_ffree,
                st.f_bsize as u32,
                st.f_namemax as u32,
                st.f_frsize as u32,
            )
        } else {
            reply.statfs(0, 0, 0, 0, 0, 4096, 255, 4096)
        }
    }

    fn access(&mut self, _req: &Request<'_>, _ino: u64, _mask: i32, reply: ReplyEmpty) {
        reply.ok()
    }

    fn create(
        &mut self,
        _req: &Request<'_>,
        parent: u64,
        name: &OsStr,
        mode: u32,
        _umask: u32,
        flags: i32,
        reply: ReplyCreate,
    ) {
        let (full, r) = match self.child_entry(parent, name) {
            Ok(v) => v,
            Err(e) => return reply.error(e),
        };
        let phys = match self.store.create_file(&r.branch, &r.rel, mode & 0o7777) {
            Ok(p) => p,
            Err(StoreError::AlreadyExists(_)) => {
                if flags & libc::O_EXCL != 0 {
                    return reply.error(libc::EEXIST);
                }
                match self.store.prepare_write(&r.branch, &r.rel) {
                    Ok(p) => p,
                    Err(e) => return reply.error(e.errno()),
                }
            }
            Err(e) => return reply.error(e.errno()),
        };
        let cached = if self.fd_cache_enabled {
            fs::OpenOptions::new().read(true).write(true).open(&phys).ok()
        } else {
            None
        };
        let ino = self.ino_for(full);
        let attr = match self.attr_for(ino) {
            Ok(a) => a,
            Err(e) => return reply.error(e),
        };
        let fh = self.alloc_fh(Handle::File(FileHandle {
            routed: r,
            writable: true,
            cached,
        }));
        reply.created(&TTL, &attr, 0, fh, 0)
    }

    fn ioctl(
        &mut self,
        _req: &Request<'_>,
        ino: u64,
        fh: u64,
        _flags: u32,
        cmd: u32,
        _in_data: &[u8],
        _out_size: u32,
        reply: ReplyIoctl,
    ) {
        let branch = match self.ioctl_branch(ino, fh) {
            Ok(b) => b,
            Err(e) => return reply.error(e),
        };
        match cmd {
            FS_IOC_BRANCH_CREATE => match self.store.create_branch_auto(&branch) {
                Ok((_, serial)) => reply.ioctl(serial as i32, &[]),
                Err(e) => reply.error(e.errno()),
            },
            FS_IOC_BRANCH_COMMIT => match self.store.commit_branch(&branch) {
                Ok(_) => reply.ioctl(0, &[]),
                Err(e) => reply.error(e.errno()),
            },
            FS_IOC_BRANCH_ABORT => match self.store.abort_branch(&branch) {
                Ok(()) => reply.ioctl(0, &[]),
                Err(e) => reply.error(e.errno()),
            },
            _ => reply.error(libc::ENOTTY),
        }
    }
}

fn check_read_state(store: &BranchStore, id: &BranchId) -> Result<(), i32> {
    let meta = store.branch_status(id).map_err(|e| e.errno())?;
    if meta.state.is_terminal() || meta.state == BranchState::Stale {
        Err(libc::ESTALE)
    } else {
        Ok(())
    }
}

fn check_write_state(store: &BranchStore, id: &BranchId) -> Result<(), i32> {
    let meta = store.branch_status(id).map_err(|e| e.errno())?;
    match meta.state {
        BranchState::Active => Ok(()),
        BranchState::Frozen => Err(libc::EROFS),
        _ => Err(libc::ESTALE),
    }
}
