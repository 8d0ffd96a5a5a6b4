//! Speculative exploration over a branching workspace.
//!
//! `explore` creates one exclusive group of N branches through the mount's
//! control file, runs one worker process per branch (each in its own
//! process group, working directory `@<branch>`), and arbitrates first
//! success: the winning branch is committed, every other worker's process
//! group is terminated and its branch aborted. Workers learn their identity
//! from `BRANCH_INDEX` (1-based), `BRANCH_NAME`, and `BRANCHFS_CTL`.
//!
//! This crate speaks only the control-file protocol; it has no dependency
//! on the storage engine.

mod ctl;

use std::io;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

pub use ctl::CommitStats;

#[derive(Debug, Clone)]
pub struct ExploreSpec {
    /// Mounted workspace root (must contain `.branchfs_ctl`).
    pub workspace: PathBuf,
    pub n_branches: usize,
    /// argv template run for every branch.
    pub command: Vec<String>,
    /// Parent of the exclusive group.
    pub parent: String,
    /// When true, workers commit themselves through the control file and
    /// the orchestrator only observes the outcome; otherwise the first
    /// worker to exit 0 is committed by the orchestrator.
    pub self_commit: bool,
    /// Delay between SIGTERM and SIGKILL when terminating losers.
    pub grace: Duration,
    /// Close all inherited descriptors except stdio before exec.
    pub close_fds: bool,
    pub extra_env: Vec<(String, String)>,
}

impl ExploreSpec {
    pub fn new(workspace: impl Into<PathBuf>, n_branches: usize, command: Vec<String>) -> Self {
        ExploreSpec {
            workspace: workspace.into(),
            n_branches,
            command,
            parent: "root".to_string(),
            self_commit: false,
            grace: Duration::from_secs(2),
            close_fds: false,
            extra_env: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChildResult {
    /// 1-based, matching `BRANCH_INDEX`.
    pub index: usize,
    pub branch: String,
    /// Exit code, None if the child died to a signal or never spawned.
    pub exit: Option<i32>,
    pub duration: Duration,
    /// True if something in the child's process group outlived SIGKILL
    /// (session-detached workers can escape; recorded, not prevented).
    pub escaped: bool,
}

#[derive(Debug, Clone)]
pub struct ExploreOutcome {
    /// 1-based index of the committed branch's worker, if any.
    pub winner: Option<usize>,
    pub winner_branch: Option<String>,
    pub children: Vec<ChildResult>,
    pub commit_report: Option<CommitStats>,
}

static RUN_SERIAL: AtomicU64 = AtomicU64::new(1);

struct Worker {
    index: usize,
    branch: String,
    child: Option<Child>,
    pgid: Option<i32>,
    started: Instant,
    exit: Option<i32>,
    duration: Duration,
}

pub fn explore(spec: &ExploreSpec) -> io::Result<ExploreOutcome> {
    if spec.n_branches < 1 || spec.command.is_empty() {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "need at least one branch and a command",
        ));
    }
    let ctl_path = spec.workspace.join(".branchfs_ctl");
    if !ctl_path.exists() {
        return Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{} is not a branch workspace", spec.workspace.display()),
        ));
    }

    let serial = RUN_SERIAL.fetch_add(1, Ordering::Relaxed);
    let names: Vec<String> = (1..=spec.n_branches)
        .map(|i| format!("run{}-{}-{}", std::process::id(), serial, i))
        .collect();
    ctl::write_line(
        &ctl_path,
        &format!("create {} {}\n", spec.parent, names.join(" ")),
    )?;

    let mut workers: Vec<Worker> = Vec::new();
    for (i, name) in names.iter().enumerate() {
        let started = Instant::now();
        match spawn_worker(spec, &ctl_path, i + 1, name) {
            Ok(child) => {
                let pgid = child.id() as i32;
                workers.push(Worker {
                    index: i + 1,
                    branch: name.clone(),
                    child: Some(child),
                    pgid: Some(pgid),
                    started,
                    exit: None,
                    duration: Duration::ZERO,
                });
            }
            Err(e) => {
                log::warn!("spawn failed for branch {name}: {e}");
                let _ = ctl::write_line(&ctl_path, &format!("abort {name}\n"));
                workers.push(Worker {
                    index: i + 1,
                    branch: name.clone(),
                    child: None,
                    pgid: None,
                    started,
                    exit: None,
                    duration: Duration::ZERO,
                });
            }
        }
    }

    let mut winner: Option<usize> = None;
    loop {
        let mut running = 0usize;
        for w in workers.iter_mut() {
            let Some(child) = w.child.as_mut() else { continue };
            match child.try_wait()? {
                None => running += 1,
                Some(status) => {
                    w.exit = status.code();
                    w.duration = w.started.elapsed();
                    let exited_zero = status.code() == Some(0);
                    w.child = None;
                    if !spec.self_commit && winner.is_none() && exited_zero {
                        match ctl::write_line(&ctl_path, &format!("commit {}\n", w.branch)) {
                            Ok(()) => winner = Some(w.index),
                            Err(e) => log::warn!("commit of {} failed: {e}", w.branch),
                        }
                    }
                }
            }
        }
        if spec.self_commit && winner.is_none() {
            winner = find_committed(&ctl_path, &names)?;
        }
        if winner.is_some() || running == 0 {
            break;
        }
        std::thread::sleep(Duration::from_millis(5));
    }

    // A self-committed winner observed while its worker still runs: let the
    // worker finish on its own before the losers are dealt with.
    if let Some(win) = winner {
        if let Some(w) = workers.iter_mut().find(|w| w.index == win) {
            if let Some(child) = w.child.as_mut() {
                let status = child.wait()?;
                w.exit = status.code();
                w.duration = w.started.elapsed();
                w.child = None;
            }
        }
    }

    terminate_losers(&mut workers, winner, spec.grace);

    // Abort every branch that did not commit (stale losers included).
    for w in &workers {
        if Some(w.index) != winner {
            let _ = ctl::write_line(&ctl_path, &format!("abort {}\n", w.branch));
        }
    }

    let commit_report = match winner {
        Some(win) => {
            let name = &workers.iter().find(|w| w.index == win).unwrap().branch;
            ctl::status_report(&ctl_path, name)?
        }
        None => None,
    };

    let children = workers
        .iter()
        .map(|w| ChildResult {
            index: w.index,
            branch: w.branch.clone(),
            exit: w.exit,
            duration: w.duration,
            escaped: w.pgid.map(group_survives).unwrap_or(false),
        })
        .collect();

    Ok(ExploreOutcome {
        winner,
        winner_branch: winner
            .map(|win| workers.iter().find(|w| w.index == win).unwrap().branch.clone()),
        children,
        commit_report,
    })
}

fn spawn_worker(
    spec: &ExploreSpec,
    ctl_path: &Path,
    index: usize,
    branch: &str,
) -> io::Result<Child> {
    use std::os::unix::process::CommandExt;
    let cwd = spec.workspace.join(format!("@{branch}"));
    let ctl_abs = ctl_path.canonicalize()?;
    let mut cmd = Command::new(&spec.command[0]);
    cmd.args(&spec.command[1..])
        .current_dir(&cwd)
        .env("BRANCH_INDEX", index.to_string())
        .env("BRANCH_NAME", branch)
        .env("BRANCHFS_CTL", &ctl_abs)
        .stdin(Stdio::null());
    for (k, v) in &spec.extra_env {
        cmd.env(k, v);
    }
    let close_fds = spec.close_fds;
    unsafe {
        cmd.pre_exec(move || {
            if libc::setpgid(0, 0) != 0 {
                return Err(io::Error::last_os_error());
            }
            if close_fds {
                // best effort: stdio stays, everything else goes
                libc::syscall(libc::SYS_close_range, 3u32, u32::MAX, 0u32);
            }
            Ok(())
        });
    }
    cmd.spawn()
}

fn find_committed(ctl_path: &Path, names: &[String]) -> io::Result<Option<usize>> {
    let rows = ctl::read_rows(ctl_path)?;
    for (i, name) in names.iter().enumerate() {
        if rows
            .iter()
            .any(|r| r.name == *name && r.state == "Committed")
        {
            return Ok(Some(i + 1));
        }
    }
    Ok(None)
}

/// Two-phase shutdown of everything except the winner: SIGTERM to each
/// loser's process group, a grace period, then SIGKILL, then reap.
fn terminate_losers(workers: &mut [Worker], winner: Option<usize>, grace: Duration) {
    let mut pending = false;
    for w in workers.iter() {
        if Some(w.index) == winner || w.child.is_none() {
            continue;
        }
        if let Some(pg) = w.pgid {
            unsafe { libc::killpg(pg, libc::SIGTERM) };
            pending = true;
        }
    }
    if !pending {
        return;
    }
    let deadline = Instant::now() + grace;
    loop {
        let mut still_running = false;
        for w in workers.iter_mut() {
            if Some(w.index) == winner {
                continue;
            }
            if let Some(child) = w.child.as_mut() {
                match child.try_wait() {
                    Ok(Some(status)) => {
                        w.exit = status.code();
                        w.duration = w.started.elapsed();
                        w.child = None;
                    }
                    _ => still_running = true,
                }
            }
        }
        if !still_running {
            break;
        }
        if Instant::now() >= deadline {
            for w in workers.iter_mut() {
                if Some(w.index) == winner {
                    continue;
                }
                if w.child.is_some() {
                    if let Some(pg) = w.pgid {
                        unsafe { libc::killpg(pg, libc::SIGKILL) };
                    }
                }
            }
            for w in workers.iter_mut() {
                if Some(w.index) == winner {
                    continue;
                }
                if let Some(child) = w.child.as_mut() {
                    let _ = child.wait().map(|s| {
                        w.exit = s.code();
                        w.duration = w.started.elapsed();
                    });
                    w.child = None;
                }
            }
            break;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    // one more sweep at the group level for grandchildren
    for w in workers.iter() {
        if Some(w.index) == winner {
            continue;
        }
        if let Some(pg) = w.pgid {
            unsafe { libc::killpg(pg, libc::SIGKILL) };
        }
    }
}

/// True if the process group still has runnable members. Scans /proc
/// because `killpg(pg, 0)` also counts zombies, which linger when nothing
/// reaps orphans promptly.
fn group_survives(pgid: i32) -> bool {
    let deadline = Instant::now() + Duration::from_millis(300);
    loop {
        if !group_has_live_member(pgid) {
            return false;
        }
        if Instant::now() >= deadline {
            return true;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
}

fn group_has_live_member(pgid: i32) -> bool {
    let Ok(rd) = std::fs::read_dir("/proc") else {
        return unsafe { libc::killpg(pgid, 0) } == 0;
    };
    for entry in rd.flatten() {
        let name = entry.file_name();
        let Some(pid) = name.to_str().and_then(|s| s.parse::<i32>().ok()) else {
            continue;
        };
        let Ok(stat) = std::fs::read_to_string(format!("/proc/{pid}/stat")) else {
            continue;
        };
        // fields after the parenthesized comm: state is the first, pgrp the third
        let Some(rest) = stat.rsplit(')').next() else { continue };
        let mut fields = rest.split_ascii_whitespace();
        let state = fields.next().unwrap_or("");
        let pgrp: i32 = fields.nth(1).and_then(|s| s.parse().ok()).unwrap_or(-1);
        if pgrp == pgid && state != "Z" {
            return true;
        }
    }
    false
}

/// For worker processes: commit the branch named by `BRANCH_NAME`.
/// Returns `Ok(true)` on the win, `Ok(false)` when a sibling already won.
pub fn child_commit() -> io::Result<bool> {
    let (ctl_path, name) = worker_identity()?;
    match ctl::write_line(&ctl_path, &format!("commit {name}\n")) {
        Ok(()) => Ok(true),
        Err(e) if e.raw_os_error() == Some(libc::ESTALE) => Ok(false),
        Err(e) => Err(e),
    }
}

/// For worker processes: abort the branch named by `BRANCH_NAME`.
pub fn child_abort() -> io::Result<()> {
    let (ctl_path, name) = worker_identity()?;
    ctl::write_line(&ctl_path, &format!("abort {name}\n"))
}

fn worker_identity() -> io::Result<(PathBuf, String)> {
    let ctl = std::env::var_os("BRANCHFS_CTL").ok_or_else(|| {
        io::Error::new(io::ErrorKind::NotFound, "BRANCHFS_CTL is not set")
    })?;
    let name = std::env::var("BRANCH_NAME")
        .map_err(|_| io::Error::new(io::ErrorKind::NotFound, "BRANCH_NAME is not set"))?;
    Ok((PathBuf::from(ctl), name))
}
