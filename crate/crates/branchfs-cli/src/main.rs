fn main() {
    std::process::exit(branchfs_cli::run(std::env::args_os()));
}
