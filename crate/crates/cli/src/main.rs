fn main() {
    std::process::exit(npamp_cli::run_cli(std::env::args_os()));
}
