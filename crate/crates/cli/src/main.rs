fn main() {
    std::process::exit(vigil_cli::run_cli(std::env::args_os()));
}
