//! `branchfs` command-line tool.
//!
//! Branch subcommands are a thin client over the mount's `.branchfs_ctl`
//! control file; the daemon does all serialization and arbitration. Exit
//! codes are stable:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | other error |
//! | 2 | usage error |
//! | 3 | branch is stale (lost the commit race) |
//! | 4 | name already exists |
//! | 5 | branch or path not found |
//! | 6 | branch is frozen (read-only) |
//! | 7 | control file unreachable |

pub mod client;

use std::ffi::OsString;
use std::os::unix::ffi::OsStrExt;
use std::os::unix::fs::MetadataExt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use branch_store::BranchId;
use branchfs_fuse::MountConfig;
use clap::{Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_STALE: i32 = 3;
pub const EXIT_EXISTS: i32 = 4;
pub const EXIT_NOT_FOUND: i32 = 5;
pub const EXIT_FROZEN: i32 = 6;
pub const EXIT_NO_CONTROL: i32 = 7;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    NoControl(String),
    Op(i32, String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::NoControl(_) => EXIT_NO_CONTROL,
            CliError::Op(code, _) => *code,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::NoControl(m) | CliError::Op(_, m) => m,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "branchfs", about = "Copy-on-write branching filesystem tool")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mount a base directory as a branching workspace
    Mount {
        /// Directory holding the original files
        #[arg(long)]
        base: PathBuf,
        /// Where to mount the workspace
        #[arg(long)]
        mountpoint: PathBuf,
        /// Delta-layer location (default: sibling `<base>.branchfs`)
        #[arg(long)]
        store: Option<PathBuf>,
        /// Branch served for paths without a `@` prefix
        #[arg(long, default_value = "root")]
        default_branch: String,
        /// Do not expose the `.branchfs_ctl` control file
        #[arg(long)]
        no_control: bool,
        /// File-descriptor cache capacity (0 disables caching)
        #[arg(long, value_name = "N", default_value_t = 1024)]
        fd_cache: usize,
        /// Log filter (e.g. info, debug)
        #[arg(long, default_value = "warn")]
        log_level: String,
        /// Stay in the foreground instead of daemonizing
        #[arg(long)]
        foreground: bool,
    },
    /// Unmount a workspace
    Umount { mountpoint: PathBuf },
    /// Create one or more branches (several names form an exclusive group)
    Create {
        #[arg(required = true)]
        names: Vec<String>,
        /// Parent branch (default: the mount's default branch)
        #[arg(long, default_value = "root")]
        parent: String,
        #[arg(short, long)]
        mountpoint: Option<PathBuf>,
    },
    /// Commit a branch into its parent (first in the group wins)
    Commit {
        name: String,
        #[arg(short, long)]
        mountpoint: Option<PathBuf>,
    },
    /// Discard a branch and its delta
    Abort {
        name: String,
        #[arg(short, long)]
        mountpoint: Option<PathBuf>,
    },
    /// List branches with state and epoch
    List {
        #[arg(short, long)]
        mountpoint: Option<PathBuf>,
        /// Stable tab-separated output: name, parent, state, epoch
        #[arg(long)]
        porcelain: bool,
    },
    /// Show one branch, including its commit report if it committed
    Status {
        name: String,
        #[arg(short, long)]
        mountpoint: Option<PathBuf>,
        #[arg(long)]
        porcelain: bool,
    },
    /// Run a benchmark scenario
    Bench {
        scenario: BenchScenario,
        /// Trials per measured point
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Report destination; `.csv` writes raw samples, anything else markdown
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum BenchScenario {
    Creation,
    CommitAbort,
    Throughput,
}

/// Entry point shared by the binary and in-process tests. Returns the exit
/// code; diagnostics go to stderr, results to stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("branchfs: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Mount {
            base,
            mountpoint,
            store,
            default_branch,
            no_control,
            fd_cache,
            log_level,
            foreground,
        } => mount(
            base,
            mountpoint,
            store,
            default_branch,
            no_control,
            fd_cache,
            log_level,
            foreground,
        ),
        Command::Umount { mountpoint } => umount(&mountpoint),
        Command::Create {
            names,
            parent,
            mountpoint,
        } => {
            let ctl = client::control_path(mountpoint.as_deref())?;
            client::write_line(&ctl, &format!("create {} {}\n", parent, names.join(" ")))
        }
        Command::Commit { name, mountpoint } => {
            let ctl = client::control_path(mountpoint.as_deref())?;
            client::write_line(&ctl, &format!("commit {name}\n"))
        }
        Command::Abort { name, mountpoint } => {
            let ctl = client::control_path(mountpoint.as_deref())?;
            client::write_line(&ctl, &format!("abort {name}\n"))
        }
        Command::List {
            mountpoint,
            porcelain,
        } => {
            let ctl = client::control_path(mountpoint.as_deref())?;
            let rows = client::read_list(&ctl)?;
            if porcelain {
                for r in rows {
                    println!(
                        "{}\t{}\t{}\t{}",
                        r.name,
                        r.parent.as_deref().unwrap_or("-"),
                        r.state,
                        r.epoch
                    );
                }
            } else {
                println!("{:<20} {:<20} {:<10} {:>5}", "NAME", "PARENT", "STATE", "EPOCH");
                for r in rows {
                    println!(
                        "{:<20} {:<20} {:<10} {:>5}",
                        r.name,
                        r.parent.as_deref().unwrap_or("-"),
                        r.state,
                        r.epoch
                    );
                }
            }
            Ok(())
        }
        Command::Status {
            name,
            mountpoint,
            porcelain,
        } => {
            let ctl = client::control_path(mountpoint.as_deref())?;
            let (row, report) = client::status(&ctl, &name)?;
            if porcelain {
                println!(
                    "{}\t{}\t{}\t{}",
                    row.name,
                    row.parent.as_deref().unwrap_or("-"),
                    row.state,
                    row.epoch
                );
                if let Some(r) = report {
                    println!(
                        "report\t{}\t{}\t{}\t{}",
                        r.files_applied, r.bytes_copied, r.tombstones_applied, r.siblings_invalidated
                    );
                }
            } else {
                println!("branch: {}", row.name);
                println!("parent: {}", row.parent.as_deref().unwrap_or("-"));
                println!("state:  {}", row.state);
                println!("epoch:  {}", row.epoch);
                if let Some(r) = report {
                    println!(
                        "commit: {} files, {} bytes, {} tombstones, {} siblings invalidated",
                        r.files_applied, r.bytes_copied, r.tombstones_applied, r.siblings_invalidated
                    );
                }
            }
            Ok(())
        }
        Command::Bench {
            scenario,
            trials,
            out,
        } => bench(scenario, trials, out),
    }
}

#[allow(clippy::too_many_arguments)]
fn mount(
    base: PathBuf,
    mountpoint: PathBuf,
    store: Option<PathBuf>,
    default_branch: String,
    no_control: bool,
    fd_cache: usize,
    log_level: String,
    foreground: bool,
) -> Result<(), CliError> {
    if foreground {
        let _ = env_logger::Builder::new().parse_filters(&log_level).try_init();
        let default_branch = BranchId::parse(&default_branch)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let config = MountConfig {
            base_dir: base,
            mountpoint,
            store_root: store,
            default_branch,
            allow_control: !no_control,
            fd_cache_capacity: fd_cache,
        };
        return branchfs_fuse::mount_foreground(&config)
            .map_err(|e| CliError::Op(EXIT_OTHER, format!("mount failed: {e}")));
    }

    // Daemonize by re-running ourselves with --foreground, then wait for
    // the mount to appear.
    let exe = std::env::current_exe().map_err(|e| CliError::Op(EXIT_OTHER, e.to_string()))?;
    let mut cmd = std::process::Command::new(exe);
    cmd.arg("mount")
        .arg("--base")
        .arg(&base)
        .arg("--mountpoint")
        .arg(&mountpoint)
        .arg("--default-branch")
        .arg(&default_branch)
        .arg("--fd-cache")
        .arg(fd_cache.to_string())
        .arg("--log-level")
        .arg(&log_level)
        .arg("--foreground")
        .stdin(std::process::Stdio::null())
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null());
    if let Some(s) = &store {
        cmd.arg("--store").arg(s);
    }
    if no_control {
        cmd.arg("--no-control");
    }
    let mut child = cmd
        .spawn()
        .map_err(|e| CliError::Op(EXIT_OTHER, format!("cannot spawn daemon: {e}")))?;

    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        if is_mounted(&mountpoint) {
            return Ok(());
        }
        if let Ok(Some(status)) = child.try_wait() {
            return Err(CliError::Op(
                EXIT_OTHER,
                format!("mount daemon exited early: {status}"),
            ));
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            return Err(CliError::Op(EXIT_OTHER, "timed out waiting for mount".into()));
        }
        std::thread::sleep(Duration::from_millis(20));
    }
}

/// A mountpoint is live when it sits on a different device than its parent.
pub fn is_mounted(mountpoint: &Path) -> bool {
    let Ok(md) = std::fs::metadata(mountpoint) else {
        return false;
    };
    let parent = match mountpoint.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => return false,
    };
    match std::fs::metadata(parent) {
        Ok(pmd) => pmd.dev() != md.dev(),
        Err(_) => false,
    }
}

fn umount(mountpoint: &Path) -> Result<(), CliError> {
    let c = std::ffi::CString::new(mountpoint.as_os_str().as_bytes())
        .map_err(|_| CliError::Usage("bad mountpoint path".into()))?;
    let rc = unsafe { libc::umount(c.as_ptr()) };
    if rc == 0 {
        return Ok(());
    }
    let e = std::io::Error::last_os_error();
    Err(CliError::Op(
        EXIT_OTHER,
        format!("umount {}: {e}", mountpoint.display()),
    ))
}

fn bench(scenario: BenchScenario, trials: usize, out: Option<PathBuf>) -> Result<(), CliError> {
    if trials < 3 {
        return Err(CliError::Usage("--trials must be at least 3".into()));
    }
    let report = match scenario {
        BenchScenario::Creation => {
            branchfs_bench::bench_creation(branchfs_bench::CREATION_BASE_SIZES, trials)
        }
        BenchScenario::CommitAbort => {
            branchfs_bench::bench_commit_abort(branchfs_bench::COMMIT_MOD_SIZES, trials)
        }
        BenchScenario::Throughput => branchfs_bench::bench_throughput(
            branchfs_bench::THROUGHPUT_FILE_BYTES,
            branchfs_bench::THROUGHPUT_BLOCK_BYTES,
        ),
    }
    .map_err(|e| CliError::Op(EXIT_OTHER, format!("benchmark failed: {e}")))?;
    print!("{}", report.to_markdown());
    if let Some(path) = out {
        report
            .write_out(&path)
            .map_err(|e| CliError::Op(EXIT_OTHER, format!("cannot write report: {e}")))?;
    }
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Op(EXIT_OTHER, "shape assertions failed".into()))
    }
}
