//! Mount lifecycle: configuration validation, store setup, and the
//! foreground/background session wrappers around the FUSE event loop.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use branch_store::{BranchId, BranchStore, StoreError};
use fuser::MountOption;

use crate::adapter::BranchFs;
use crate::route::is_reserved_root_name;

#[derive(Debug, Clone)]
pub struct MountConfig {
    /// The original files; also the root branch's data layer.
    pub base_dir: PathBuf,
    pub mountpoint: PathBuf,
    /// Where delta layers and metadata live. Defaults to a sibling of
    /// `base_dir` named `<base>.branchfs` so it never shadows base entries.
    pub store_root: Option<PathBuf>,
    /// Branch served for paths without a `@` prefix.
    pub default_branch: BranchId,
    /// Expose the `.branchfs_ctl` control file at the mount root.
    pub allow_control: bool,
    /// 0 disables fd caching: every read/write re-resolves through the store.
    pub fd_cache_capacity: usize,
}

impl MountConfig {
    pub fn new(base_dir: impl Into<PathBuf>, mountpoint: impl Into<PathBuf>) -> Self {
        MountConfig {
            base_dir: base_dir.into(),
            mountpoint: mountpoint.into(),
            store_root: None,
            default_branch: BranchId::root(),
            allow_control: true,
            fd_cache_capacity: 1024,
        }
    }

    pub fn store_root(&self) -> PathBuf {
        self.store_root.clone().unwrap_or_else(|| {
            let mut name = self.base_dir.file_name().unwrap_or_default().to_os_string();
            name.push(".branchfs");
            self.base_dir.with_file_name(name)
        })
    }

    fn validate(&self) -> io::Result<()> {
        let base = self.base_dir.canonicalize()?;
        if !base.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotADirectory,
                format!("base is not a directory: {}", base.display()),
            ));
        }
        let mnt = self.mountpoint.canonicalize()?;
        if base.starts_with(&mnt) {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "base_dir must not be inside the mountpoint",
            ));
        }
        Ok(())
    }
}

/// A live background mount. Dropping it unmounts.
pub struct BranchMount {
    pub store: Arc<BranchStore>,
    session: Option<fuser::BackgroundSession>,
}

impl BranchMount {
    pub fn unmount(mut self) {
        self.session.take();
    }
}

/// Opens (or reopens) the store for a mount configuration without mounting.
pub fn open_store(config: &MountConfig) -> Result<Arc<BranchStore>, StoreError> {
    let store = BranchStore::open(&config.base_dir, config.store_root())?;
    Ok(Arc::new(store))
}

fn warn_on_shadowed_names(base: &Path) {
    let Ok(rd) = fs::read_dir(base) else { return };
    for entry in rd.flatten() {
        if is_reserved_root_name(&entry.file_name()) {
            log::warn!(
                "base entry {:?} is shadowed by the mount's reserved namespace",
                entry.file_name()
            );
        }
    }
}

fn mount_options() -> Vec<MountOption> {
    vec![
        MountOption::FSName("branchfs".to_string()),
        MountOption::DefaultPermissions,
    ]
}

fn build_fs(config: &MountConfig) -> io::Result<(BranchFs, Arc<BranchStore>)> {
    config.validate()?;
    let store = open_store(config).map_err(|e| io::Error::other(e.to_string()))?;
    if config.default_branch.as_str() != branch_store::ROOT_NAME
        && store.branch_status(&config.default_branch).is_err()
    {
        return Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("default branch does not exist: {}", config.default_branch),
        ));
    }
    warn_on_shadowed_names(&config.base_dir);
    let fs = BranchFs::new(
        Arc::clone(&store),
        config.default_branch.clone(),
        config.allow_control,
        config.fd_cache_capacity,
    );
    Ok((fs, store))
}

/// Mounts in the background; returns once the filesystem is ready.
pub fn mount_background(config: &MountConfig) -> io::Result<BranchMount> {
    let (fs, store) = build_fs(config)?;
    let session = fuser::spawn_mount2(fs, &config.mountpoint, &mount_options())?;
    Ok(BranchMount {
        store,
        session: Some(session),
    })
}

/// Mounts and runs the event loop on the calling thread until unmounted.
pub fn mount_foreground(config: &MountConfig) -> io::Result<()> {
    let (fs, _store) = build_fs(config)?;
    fuser::mount2(fs, &config.mountpoint, &mount_options())
}
