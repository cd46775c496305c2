fn main() {
    std::process::exit(slowfast_cli::run_cli(std::env::args_os()));
}
