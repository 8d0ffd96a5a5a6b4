//! End-to-end tests through a real kernel mount: POSIX surface, the control
//! file line protocol, and the branch ioctls.

use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use branch_store::{BranchId, BranchStore};
use branchfs_fuse::{
    mount_background, BranchMount, MountConfig, FS_IOC_BRANCH_ABORT, FS_IOC_BRANCH_COMMIT,
    FS_IOC_BRANCH_CREATE,
};
use tempfile::TempDir;

struct Fixture {
    _tmp: TempDir,
    base: PathBuf,
    mnt: PathBuf,
    mount: Option<BranchMount>,
}

impl Fixture {
    fn new() -> Self {
        Self::with_config(|_| {})
    }

    fn with_config(tweak: impl FnOnce(&mut MountConfig)) -> Self {
        let tmp = TempDir::new().unwrap();
        let base = tmp.path().join("base");
        let mnt = tmp.path().join("mnt");
        fs::create_dir(&base).unwrap();
        fs::create_dir(&mnt).unwrap();
        fs::write(base.join("README"), b"hello\n").unwrap();
        fs::create_dir(base.join("src")).unwrap();
        fs::write(base.join("src/main.py"), b"print('hi')\n").unwrap();
        let mut config = MountConfig::new(&base, &mnt);
        tweak(&mut config);
        let mount = mount_background(&config).unwrap();
        Fixture {
            _tmp: tmp,
            base,
            mnt,
            mount: Some(mount),
        }
    }

    fn store(&self) -> &Arc<BranchStore> {
        &self.mount.as_ref().unwrap().store
    }

    fn ctl(&self) -> PathBuf {
        self.mnt.join(".branchfs_ctl")
    }

    fn ctl_write(&self, line: &str) -> std::io::Result<()> {
        let mut f = fs::OpenOptions::new().write(true).open(self.ctl())?;
        f.write_all(line.as_bytes())
    }

    fn ctl_read(&self) -> String {
        fs::read_to_string(self.ctl()).unwrap()
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        if let Some(m) = self.mount.take() {
            m.unmount();
        }
    }
}

fn errno_of(e: &std::io::Error) -> i32 {
    e.raw_os_error().unwrap_or(0)
}

fn ioctl(fd: i32, cmd: u32) -> Result<i32, i32> {
    let rc = unsafe { libc::ioctl(fd, cmd as libc::c_ulong) };
    if rc < 0 {
        Err(std::io::Error::last_os_error().raw_os_error().unwrap_or(0))
    } else {
        Ok(rc)
    }
}

#[test]
fn default_view_serves_the_base() {
    let fx = Fixture::new();
    assert_eq!(fs::read(fx.mnt.join("README")).unwrap(), b"hello\n");
    assert_eq!(fs::read(fx.mnt.join("src/main.py")).unwrap(), b"print('hi')\n");
    let names: Vec<String> = fs::read_dir(&fx.mnt)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(names.contains(&"README".to_string()));
    assert!(names.contains(&".branchfs_ctl".to_string()));
}

#[test]
fn branch_writes_stay_isolated_from_the_default_view() {
    let fx = Fixture::new();
    fx.ctl_write("create root b1\n").unwrap();
    fs::write(fx.mnt.join("@b1/f"), b"hi\n").unwrap();
    assert_eq!(fs::read(fx.mnt.join("@b1/f")).unwrap(), b"hi\n");
    assert!(!fx.mnt.join("f").exists());
    assert!(!fx.base.join("f").exists());
}

#[test]
fn branch_deletion_hides_only_in_the_branch() {
    let fx = Fixture::new();
    fx.ctl_write("create root b1\n").unwrap();
    fs::remove_file(fx.mnt.join("@b1/README")).unwrap();
    assert!(!fx.mnt.join("@b1/README").exists());
    assert!(fx.mnt.join("README").exists());
    let names: Vec<String> = fs::read_dir(fx.mnt.join("@b1"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert!(!names.contains(&"README".to_string()));
}

#[test]
fn posix_session_matches_a_plain_directory_copy() {
    let fx = Fixture::new();
    fx.ctl_write("create root work\n").unwrap();

    // same scripted session against a deep copy of the base
    let scratch = TempDir::new().unwrap();
    let copy = scratch.path().join("copy");
    copy_tree(&fx.base, &copy);

    for root in [fx.mnt.join("@work"), copy.clone()] {
        fs::write(root.join("new.txt"), b"alpha\n").unwrap();
        fs::create_dir(root.join("build")).unwrap();
        fs::write(root.join("build/out.o"), b"obj").unwrap();
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(root.join("new.txt"))
            .unwrap();
        f.write_all(b"beta\n").unwrap();
        drop(f);
        fs::rename(root.join("new.txt"), root.join("renamed.txt")).unwrap();
        fs::remove_file(root.join("src/main.py")).unwrap();
        fs::remove_dir_all(root.join("src")).unwrap();
    }

    let view = branch_store::oracle::snapshot_view(fx.store(), &BranchId::new("work").unwrap()).unwrap();
    let expected = branch_store::oracle::snapshot_dir(&copy).unwrap();
    assert_eq!(
        view,
        expected,
        "diff:\n{}",
        branch_store::oracle::diff(&expected, &view)
    );
}

#[test]
fn control_list_reflects_creation() {
    let fx = Fixture::new();
    fx.ctl_write("create root b1\n").unwrap();
    let text = fx.ctl_read();
    assert!(text.contains("b1 root Active 0"), "got: {text}");
    assert!(text.lines().any(|l| l.starts_with("root - ")), "got: {text}");
}

#[test]
fn control_rejects_unknown_verbs() {
    let fx = Fixture::new();
    let err = fx.ctl_write("frobnicate\n").unwrap_err();
    assert_eq!(errno_of(&err), libc::EINVAL);
}

#[test]
fn losing_commit_gets_estale_on_the_write() {
    let fx = Fixture::new();
    fx.ctl_write("create root a b\n").unwrap();
    fx.ctl_write("commit a\n").unwrap();
    let err = fx.ctl_write("commit b\n").unwrap_err();
    assert_eq!(errno_of(&err), libc::ESTALE);
}

#[test]
fn status_verb_returns_branch_line_and_report() {
    let fx = Fixture::new();
    fx.ctl_write("create root b1\n").unwrap();
    fs::write(fx.mnt.join("@b1/f"), b"data").unwrap();

    let mut f = fs::OpenOptions::new()
        .read(true)
        .write(true)
        .open(fx.ctl())
        .unwrap();
    f.write_all(b"status b1\n").unwrap();
    let mut text = String::new();
    f.read_to_string(&mut text).unwrap();
    assert_eq!(text, "b1 root Active 0\n");

    fx.ctl_write("commit b1\n").unwrap();
    f.seek(SeekFrom::Start(0)).unwrap();
    f.write_all(b"status b1\n").unwrap();
    f.seek(SeekFrom::Start(0)).unwrap();
    let mut text = String::new();
    f.read_to_string(&mut text).unwrap();
    assert!(text.starts_with("b1 root Committed"), "got: {text}");
    assert!(text.lines().any(|l| l.starts_with("report ")), "got: {text}");
}

#[test]
fn commit_through_control_updates_the_base() {
    let fx = Fixture::new();
    fx.ctl_write("create root b1\n").unwrap();
    fs::write(fx.mnt.join("@b1/result"), b"done\n").unwrap();
    fs::remove_file(fx.mnt.join("@b1/README")).unwrap();
    fx.ctl_write("commit b1\n").unwrap();
    assert_eq!(fs::read(fx.base.join("result")).unwrap(), b"done\n");
    assert!(!fx.base.join("README").exists());
    assert_eq!(fs::read(fx.mnt.join("result")).unwrap(), b"done\n");
}

#[test]
fn frozen_parent_rejects_writes_through_the_mount() {
    let fx = Fixture::new();
    fx.ctl_write("create root outer\n").unwrap();
    fx.ctl_write("create outer inner\n").unwrap();
    let err = fs::write(fx.mnt.join("@outer/f"), b"x").unwrap_err();
    assert_eq!(errno_of(&err), libc::EROFS);
    fs::write(fx.mnt.join("@inner/f"), b"x").unwrap();
}

#[test]
fn stale_branch_fails_io_with_estale() {
    let fx = Fixture::new();
    fx.ctl_write("create root a b\n").unwrap();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .truncate(true)
        .write(true)
        .open(fx.mnt.join("@b/out"))
        .unwrap();
    f.write_all(b"first").unwrap();
    fx.ctl_write("commit a\n").unwrap();
    let err = f.write_all(b"second").unwrap_err();
    assert_eq!(errno_of(&err), libc::ESTALE);
    let err = fs::read(fx.mnt.join("@b/out")).unwrap_err();
    assert_eq!(errno_of(&err), libc::ESTALE);
}

#[test]
fn ioctl_create_write_commit_round_trip() {
    let fx = Fixture::new();
    let f = fs::File::open(fx.mnt.join("README")).unwrap();
    let serial = ioctl(f.as_raw_fd(), FS_IOC_BRANCH_CREATE).unwrap();
    assert!(serial > 0);
    let name = format!("root-{serial}");
    let branch_dir = fx.mnt.join(format!("@{name}"));
    assert!(branch_dir.is_dir());

    fs::write(branch_dir.join("made-by-ioctl"), b"yes\n").unwrap();
    let g = fs::File::open(branch_dir.join("made-by-ioctl")).unwrap();
    assert_eq!(ioctl(g.as_raw_fd(), FS_IOC_BRANCH_COMMIT).unwrap(), 0);
    assert_eq!(fs::read(fx.base.join("made-by-ioctl")).unwrap(), b"yes\n");
}

#[test]
fn ioctl_commit_after_sibling_won_is_stale() {
    let fx = Fixture::new();
    fx.ctl_write("create root a b\n").unwrap();
    fs::write(fx.mnt.join("@a/fa"), b"a").unwrap();
    fs::write(fx.mnt.join("@b/fb"), b"b").unwrap();
    // the fd must predate the race: once b is stale its paths refuse to open
    let f = fs::File::open(fx.mnt.join("@b/fb")).unwrap();
    fx.ctl_write("commit a\n").unwrap();
    assert_eq!(
        ioctl(f.as_raw_fd(), FS_IOC_BRANCH_COMMIT).unwrap_err(),
        libc::ESTALE
    );
}

#[test]
fn ioctl_abort_on_root_is_invalid() {
    let fx = Fixture::new();
    let f = fs::File::open(fx.mnt.join("README")).unwrap();
    assert_eq!(ioctl(f.as_raw_fd(), FS_IOC_BRANCH_ABORT).unwrap_err(), libc::EINVAL);
}

#[test]
fn unknown_ioctl_is_enotty() {
    let fx = Fixture::new();
    let f = fs::File::open(fx.mnt.join("README")).unwrap();
    assert_eq!(ioctl(f.as_raw_fd(), 0x6242).unwrap_err(), libc::ENOTTY);
}

#[test]
fn fsync_succeeds_as_a_no_op() {
    let fx = Fixture::new();
    fx.ctl_write("create root b1\n").unwrap();
    let f = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .open(fx.mnt.join("@b1/f"))
        .unwrap();
    f.sync_all().unwrap();
    f.sync_data().unwrap();
}

#[test]
fn unknown_at_path_is_not_found() {
    let fx = Fixture::new();
    let err = fs::metadata(fx.mnt.join("@nope")).unwrap_err();
    assert_eq!(errno_of(&err), libc::ENOENT);
}

#[test]
fn special_file_creation_is_rejected() {
    let fx = Fixture::new();
    fx.ctl_write("create root b1\n").unwrap();
    let path = std::ffi::CString::new(
        fx.mnt.join("@b1/fifo").to_string_lossy().into_owned(),
    )
    .unwrap();
    let rc = unsafe { libc::mkfifo(path.as_ptr(), 0o644) };
    assert_eq!(rc, -1);
    assert_eq!(
        std::io::Error::last_os_error().raw_os_error().unwrap(),
        libc::EOPNOTSUPP
    );
}

#[test]
fn symlink_and_readlink_round_trip() {
    let fx = Fixture::new();
    fx.ctl_write("create root b1\n").unwrap();
    std::os::unix::fs::symlink("README", fx.mnt.join("@b1/link")).unwrap();
    assert_eq!(
        fs::read_link(fx.mnt.join("@b1/link")).unwrap(),
        PathBuf::from("README")
    );
    assert_eq!(fs::read(fx.mnt.join("@b1/link")).unwrap(), b"hello\n");
}

#[test]
fn cross_branch_rename_is_exdev() {
    let fx = Fixture::new();
    fx.ctl_write("create root a\n").unwrap();
    fx.ctl_write("create root b\n").unwrap();
    fs::write(fx.mnt.join("@a/f"), b"x").unwrap();
    let err = fs::rename(fx.mnt.join("@a/f"), fx.mnt.join("@b/f")).unwrap_err();
    assert_eq!(errno_of(&err), libc::EXDEV);
}

#[test]
fn fd_cache_disabled_produces_the_same_tree() {
    let run = |capacity: usize| -> branch_store::oracle::Tree {
        let fx = Fixture::with_config(|c| c.fd_cache_capacity = capacity);
        fx.ctl_write("create root w\n").unwrap();
        let root = fx.mnt.join("@w");
        fs::write(root.join("a.txt"), b"one\n").unwrap();
        fs::create_dir(root.join("d")).unwrap();
        fs::write(root.join("d/b.txt"), b"two\n").unwrap();
        fs::rename(root.join("a.txt"), root.join("d/a.txt")).unwrap();
        fs::remove_file(root.join("README")).unwrap();
        branch_store::oracle::snapshot_view(fx.store(), &BranchId::new("w").unwrap()).unwrap()
    };
    assert_eq!(run(0), run(1024));
}

fn copy_tree(src: &Path, dst: &Path) {
    fs::create_dir_all(dst).unwrap();
    for entry in fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let to = dst.join(entry.file_name());
        let ft = entry.file_type().unwrap();
        if ft.is_dir() {
            copy_tree(&entry.path(), &to);
        } else if ft.is_symlink() {
            std::os::unix::fs::symlink(fs::read_link(entry.path()).unwrap(), &to).unwrap();
        } else {
            fs::copy(entry.path(), &to).unwrap();
        }
    }
}
