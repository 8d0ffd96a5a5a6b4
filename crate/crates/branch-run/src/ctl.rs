//! Minimal control-file client (line protocol only).

use std::fs;
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;

pub struct BranchRow {
    pub name: String,
    pub state: String,
}

/// Statistics from a committed branch's `status` reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitStats {
    pub files_applied: u64,
    pub bytes_copied: u64,
    pub tombstones_applied: u64,
    pub siblings_invalidated: u64,
}

pub fn write_line(ctl: &Path, line: &str) -> io::Result<()> {
    let mut f = fs::OpenOptions::new().write(true).open(ctl)?;
    f.write_all(line.as_bytes())
}

pub fn read_rows(ctl: &Path) -> io::Result<Vec<BranchRow>> {
    let text = fs::read_to_string(ctl)?;
    Ok(text
        .lines()
        .filter_map(|l| {
            let mut w = l.split_ascii_whitespace();
            let name = w.next()?.to_string();
            let _parent = w.next()?;
            let state = w.next()?.to_string();
            Some(BranchRow { name, state })
        })
        .collect())
}

/// Reads the commit report for `name` via the `status` verb, if one exists.
pub fn status_report(ctl: &Path, name: &str) -> io::Result<Option<CommitStats>> {
    let mut f = fs::OpenOptions::new().read(true).write(true).open(ctl)?;
    f.write_all(format!("status {name}\n").as_bytes())?;
    f.seek(SeekFrom::Start(0))?;
    let mut text = String::new();
    f.read_to_string(&mut text)?;
    for line in text.lines() {
        let mut w = line.split_ascii_whitespace();
        if w.next() != Some("report") {
            continue;
        }
        let nums: Option<Vec<u64>> = w.map(|t| t.parse().ok()).collect();
        if let Some(n) = nums {
            if n.len() == 4 {
                return Ok(Some(CommitStats {
                    files_applied: n[0],
                    bytes_copied: n[1],
                    tombstones_applied: n[2],
                    siblings_invalidated: n[3],
                }));
            }
        }
    }
    Ok(None)
}
