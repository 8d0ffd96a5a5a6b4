//! Thin control-file client. Every CLI branch operation is exactly one
//! control-protocol line; nothing here talks to the store directly.

use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::{CliError, EXIT_EXISTS, EXIT_FROZEN, EXIT_NOT_FOUND, EXIT_OTHER, EXIT_STALE};

pub const CONTROL_ENV: &str = "BRANCHFS_CTL";

/// One line of the control file's read body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchRow {
    pub name: String,
    pub parent: Option<String>,
    pub state: String,
    pub epoch: u64,
}

impl BranchRow {
    fn parse(line: &str) -> Option<BranchRow> {
        let mut w = line.split_ascii_whitespace();
        let name = w.next()?.to_string();
        let parent = match w.next()? {
            "-" => None,
            p => Some(p.to_string()),
        };
        let state = w.next()?.to_string();
        let epoch = w.next()?.parse().ok()?;
        Some(BranchRow {
            name,
            parent,
            state,
            epoch,
        })
    }
}

/// Commit statistics echoed by the `status` verb after a branch commits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportRow {
    pub files_applied: u64,
    pub bytes_copied: u64,
    pub tombstones_applied: u64,
    pub siblings_invalidated: u64,
}

impl ReportRow {
    fn parse(line: &str) -> Option<ReportRow> {
        let mut w = line.split_ascii_whitespace();
        if w.next()? != "report" {
            return None;
        }
        Some(ReportRow {
            files_applied: w.next()?.parse().ok()?,
            bytes_copied: w.next()?.parse().ok()?,
            tombstones_applied: w.next()?.parse().ok()?,
            siblings_invalidated: w.next()?.parse().ok()?,
        })
    }
}

/// Locates the control file: explicit mountpoint first, then the
/// environment override.
pub fn control_path(mountpoint: Option<&Path>) -> Result<PathBuf, CliError> {
    if let Some(m) = mountpoint {
        return Ok(m.join(".branchfs_ctl"));
    }
    if let Some(p) = std::env::var_os(CONTROL_ENV) {
        return Ok(PathBuf::from(p));
    }
    Err(CliError::Usage(format!(
        "no mountpoint given and {CONTROL_ENV} is not set"
    )))
}

fn open_err(ctl: &Path, e: std::io::Error) -> CliError {
    CliError::NoControl(format!("cannot open control file {}: {e}", ctl.display()))
}

fn op_err(e: std::io::Error) -> CliError {
    let errno = e.raw_os_error().unwrap_or(0);
    let code = match errno {
        libc::ESTALE => EXIT_STALE,
        libc::EEXIST => EXIT_EXISTS,
        libc::ENOENT => EXIT_NOT_FOUND,
        libc::EROFS => EXIT_FROZEN,
        _ => EXIT_OTHER,
    };
    CliError::Op(code, e.to_string())
}

/// Sends one newline-terminated command line.
pub fn write_line(ctl: &Path, line: &str) -> Result<(), CliError> {
    let mut f = fs::OpenOptions::new()
        .write(true)
        .open(ctl)
        .map_err(|e| open_err(ctl, e))?;
    f.write_all(line.as_bytes()).map_err(op_err)
}

/// Reads the branch table.
pub fn read_list(ctl: &Path) -> Result<Vec<BranchRow>, CliError> {
    let text = fs::read_to_string(ctl).map_err(|e| open_err(ctl, e))?;
    Ok(text.lines().filter_map(BranchRow::parse).collect())
}

/// `status <name>` round trip on a single descriptor.
pub fn status(ctl: &Path, name: &str) -> Result<(BranchRow, Option<ReportRow>), CliError> {
    let mut f = fs::OpenOptions::new()
        .read(true)
        .write(true)
        .open(ctl)
        .map_err(|e| open_err(ctl, e))?;
    f.write_all(format!("status {name}\n").as_bytes())
        .map_err(op_err)?;
    f.seek(SeekFrom::Start(0)).map_err(op_err)?;
    let mut text = String::new();
    f.read_to_string(&mut text).map_err(op_err)?;
    let mut lines = text.lines();
    let row = lines
        .next()
        .and_then(BranchRow::parse)
        .ok_or_else(|| CliError::Op(EXIT_OTHER, format!("malformed status reply: {text:?}")))?;
    let report = lines.next().and_then(ReportRow::parse);
    Ok((row, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_branch_rows() {
        let r = BranchRow::parse("b1 root Active 0").unwrap();
        assert_eq!(r.name, "b1");
        assert_eq!(r.parent.as_deref(), Some("root"));
        assert_eq!(r.state, "Active");
        let root = BranchRow::parse("root - Active 3").unwrap();
        assert_eq!(root.parent, None);
        assert_eq!(root.epoch, 3);
    }

    #[test]
    fn parses_report_rows() {
        let r = ReportRow::parse("report 2 4096 1 3").unwrap();
        assert_eq!(r.files_applied, 2);
        assert_eq!(r.bytes_copied, 4096);
        assert_eq!(r.tombstones_applied, 1);
        assert_eq!(r.siblings_invalidated, 3);
        assert!(ReportRow::parse("b1 root Active 0").is_none());
    }
}
