fn main() {
    std::process::exit(lowrank_bandit_cli::run_cli(std::env::args_os()));
}
