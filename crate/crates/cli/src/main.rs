fn main() {
    std::process::exit(pct_cli::run(std::env::args_os()));
}
