use std::path::PathBuf;
use std::time::Duration;

use branch_run::{explore, ExploreSpec};
use clap::Parser;

/// Run one command speculatively across N workspace branches; the first
/// worker to succeed commits its branch, the rest are terminated.
#[derive(Parser, Debug)]
#[command(name = "branch-run")]
struct Args {
    /// Mounted branch workspace
    #[arg(long)]
    workspace: PathBuf,

    /// Number of branches to explore
    #[arg(short = 'n', long = "branches", default_value_t = 1)]
    n: usize,

    /// Parent branch of the exclusive group
    #[arg(long, default_value = "root")]
    parent: String,

    /// Workers commit themselves via the control file; the orchestrator
    /// only observes which branch won
    #[arg(long)]
    self_commit: bool,

    /// Seconds between SIGTERM and SIGKILL when stopping losers
    #[arg(long, default_value_t = 2.0)]
    grace: f64,

    /// Close inherited descriptors (except stdio) in workers
    #[arg(long)]
    close_fds: bool,

    /// Command to run in each branch
    #[arg(last = true, required = true)]
    command: Vec<String>,
}

fn main() {
    env_logger_init();
    let args = Args::parse();
    let mut spec = ExploreSpec::new(&args.workspace, args.n, args.command.clone());
    spec.parent = args.parent.clone();
    spec.self_commit = args.self_commit;
    spec.grace = Duration::from_secs_f64(args.grace);
    spec.close_fds = args.close_fds;

    match explore(&spec) {
        Ok(outcome) => {
            for c in &outcome.children {
                let status = match c.exit {
                    Some(code) => format!("exit {code}"),
                    None => "killed".to_string(),
                };
                eprintln!(
                    "branch {} ({}): {} after {:.3}s{}",
                    c.index,
                    c.branch,
                    status,
                    c.duration.as_secs_f64(),
                    if c.escaped { " [escaped]" } else { "" }
                );
            }
            match (&outcome.winner, &outcome.winner_branch) {
                (Some(idx), Some(name)) => {
                    println!("winner: {idx} ({name})");
                    if let Some(r) = &outcome.commit_report {
                        println!(
                            "committed: {} files, {} bytes, {} tombstones, {} siblings invalidated",
                            r.files_applied,
                            r.bytes_copied,
                            r.tombstones_applied,
                            r.siblings_invalidated
                        );
                    }
                    std::process::exit(0);
                }
                _ => {
                    println!("no winner");
                    std::process::exit(1);
                }
            }
        }
        Err(e) => {
            eprintln!("branch-run: {e}");
            let code = if e.kind() == std::io::ErrorKind::InvalidInput {
                2
            } else {
                3
            };
            std::process::exit(code);
        }
    }
}

fn env_logger_init() {
    struct StderrLog;
    impl log::Log for StderrLog {
        fn enabled(&self, metadata: &log::Metadata) -> bool {
            metadata.level() <= log::Level::Warn
        }
        fn log(&self, record: &log::Record) {
            if self.enabled(record.metadata()) {
                eprintln!("branch-run: {}", record.args());
            }
        }
        fn flush(&self) {}
    }
    static LOGGER: StderrLog = StderrLog;
    let _ = log::set_logger(&LOGGER).map(|()| log::set_max_level(log::LevelFilter::Warn));
}
